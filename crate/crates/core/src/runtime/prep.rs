//! Preprocessing material: dealer, bundles, per-party stores.
//!
//! A trusted dealer turns a plan into one bundle per party. A party's
//! store hands material out in order and records every id range it has
//! consumed, so feeding the same material twice fails instead of silently
//! reusing keys. Stores can be preloaded, fed from a channel while a
//! protocol runs, or backed by an in-process dealer that generates each
//! request on demand.

use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::beaver::{gen_triple, triples_from_batch, triples_to_batch, BilinearOp, TripleShare};
use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::fss::{
    audit_keys, gen_cmp_batch, gen_eq_batch, AuditSample, CmpKeyBatch, EqKeyBatch, FssParams,
    KeyBatch, KeyKind, KeyPair, KeygenTape,
};

/// One kind of material a protocol needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrepItem {
    Cmp {
        params: FssParams,
        count: usize,
    },
    Eq {
        params: FssParams,
        count: usize,
    },
    Triple {
        op: BilinearOp,
        bits: u32,
    },
    /// Public random values in `[0, bound)`, identical for both parties.
    Coins {
        count: usize,
        bound: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepPlan {
    pub items: Vec<PrepItem>,
}

impl PrepPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, item: PrepItem) {
        self.items.push(item);
    }

    pub fn extend(&mut self, other: PrepPlan) {
        self.items.extend(other.items);
    }

    /// Repeats the plan `times` times.
    pub fn repeat(&self, times: usize) -> PrepPlan {
        PrepPlan {
            items: (0..times).flat_map(|_| self.items.clone()).collect(),
        }
    }

    pub fn cmp_count(&self) -> usize {
        self.items
            .iter()
            .map(|i| {
                if let PrepItem::Cmp { count, .. } = i {
                    *count
                } else {
                    0
                }
            })
            .sum()
    }

    pub fn eq_count(&self) -> usize {
        self.items
            .iter()
            .map(|i| {
                if let PrepItem::Eq { count, .. } = i {
                    *count
                } else {
                    0
                }
            })
            .sum()
    }

    pub fn triple_count(&self) -> usize {
        self.items
            .iter()
            .filter(|i| matches!(i, PrepItem::Triple { .. }))
            .count()
    }
}

/// Everything one party receives from the dealer for a plan.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepBundle {
    pub cmp: Vec<CmpKeyBatch>,
    pub eq: Vec<EqKeyBatch>,
    pub triples: Vec<TripleShare>,
    pub coins: Vec<u64>,
}

const BUNDLE_MAGIC: [u8; 4] = *b"ARNP";

impl PrepBundle {
    /// Serializes the bundle as a sequence of key-file sections.
    pub fn to_bytes(&self, party: usize) -> Result<Vec<u8>> {
        let mut sections: Vec<(u8, Vec<u8>)> = Vec::new();
        for b in &self.cmp {
            sections.push((0, KeyBatch::from_cmp(&[b])?.to_bytes()?));
        }
        for b in &self.eq {
            sections.push((0, KeyBatch::from_eq(&[b])?.to_bytes()?));
        }
        if !self.triples.is_empty() {
            sections.push((0, triples_to_batch(party, &self.triples)?.to_bytes()?));
        }
        if !self.coins.is_empty() {
            sections.push((1, self.coins.iter().flat_map(|c| c.to_le_bytes()).collect()));
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(&BUNDLE_MAGIC);
        buf.push(party as u8);
        buf.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (kind, bytes) in sections {
            buf.push(kind);
            buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            buf.extend_from_slice(&bytes);
        }
        Ok(buf)
    }

    /// Parses a bundle written by [`to_bytes`](Self::to_bytes). Returns the
    /// party it belongs to.
    pub fn from_bytes(bytes: &[u8]) -> Result<(usize, PrepBundle)> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != BUNDLE_MAGIC {
            return Err(Error::Format("not a preprocessing bundle".into()));
        }
        let party = r.uint(1)? as usize;
        if party > 1 {
            return Err(Error::Format(format!("bad party {party}")));
        }
        let n = r.uint(4)? as usize;
        let mut bundle = PrepBundle::default();
        for _ in 0..n {
            let kind = r.uint(1)?;
            let len = r.uint(8)? as usize;
            let body = r.take(len)?;
            match kind {
                0 => {
                    let kb = KeyBatch::from_bytes(body)?;
                    match kb.kind {
                        KeyKind::Cmp => bundle.cmp.push(kb.cmp_keys(party)?),
                        KeyKind::Eq => bundle.eq.push(kb.eq_keys(party)?),
                        KeyKind::Triple => bundle.triples.extend(triples_from_batch(&kb, party)?),
                    }
                }
                1 => {
                    if !len.is_multiple_of(8) {
                        return Err(Error::Format(
                            "coin section not a multiple of 8 bytes".into(),
                        ));
                    }
                    let mut cr = Reader::new(body);
                    bundle.coins.extend(
                        (0..len / 8)
                            .map(|_| cr.uint(8))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                other => return Err(Error::Format(format!("unknown section kind {other}"))),
            }
        }
        r.finish()?;
        Ok((party, bundle))
    }
}

/// Keygen randomness kept for a later audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapeRecord {
    pub kind: KeyKind,
    pub params: FssParams,
    pub first_id: u64,
    pub tapes: Vec<KeygenTape>,
}

/// Trusted dealer with a seeded generator.
#[derive(Debug)]
pub struct Dealer {
    rng: ChaCha20Rng,
    next_id: [u64; 3],
    keep_tapes: bool,
    records: Vec<TapeRecord>,
}

impl Dealer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            next_id: [0; 3],
            keep_tapes: false,
            records: Vec::new(),
        }
    }

    /// Keeps keygen tapes so issued keys can be audited later.
    pub fn with_tapes(mut self) -> Self {
        self.keep_tapes = true;
        self
    }

    pub fn tape_records(&self) -> &[TapeRecord] {
        &self.records
    }

    fn ids(&mut self, kind: KeyKind, count: usize) -> u64 {
        let slot = &mut self.next_id[kind as usize];
        let first = *slot;
        *slot += count as u64;
        first
    }

    pub fn deal(&mut self, plan: &PrepPlan) -> Result<[PrepBundle; 2]> {
        let mut out = [PrepBundle::default(), PrepBundle::default()];
        for item in &plan.items {
            self.deal_item(item, &mut out)?;
        }
        Ok(out)
    }

    fn deal_item(&mut self, item: &PrepItem, out: &mut [PrepBundle; 2]) -> Result<()> {
        match item {
            PrepItem::Cmp { params, count } => {
                let first = self.ids(KeyKind::Cmp, *count);
                let ([b0, b1], tapes) =
                    gen_cmp_batch(*params, *count, first, self.keep_tapes, &mut self.rng)?;
                if let Some(tapes) = tapes {
                    self.records.push(TapeRecord {
                        kind: KeyKind::Cmp,
                        params: *params,
                        first_id: first,
                        tapes,
                    });
                }
                out[0].cmp.push(b0);
                out[1].cmp.push(b1);
            }
            PrepItem::Eq { params, count } => {
                let first = self.ids(KeyKind::Eq, *count);
                let ([b0, b1], tapes) =
                    gen_eq_batch(*params, *count, first, self.keep_tapes, &mut self.rng)?;
                if let Some(tapes) = tapes {
                    self.records.push(TapeRecord {
                        kind: KeyKind::Eq,
                        params: *params,
                        first_id: first,
                        tapes,
                    });
                }
                out[0].eq.push(b0);
                out[1].eq.push(b1);
            }
            PrepItem::Triple { op, bits } => {
                let id = self.ids(KeyKind::Triple, 1);
                let [t0, t1] = gen_triple(op, *bits, id, &mut self.rng)?;
                out[0].triples.push(t0);
                out[1].triples.push(t1);
            }
            PrepItem::Coins { count, bound } => {
                if *bound == 0 {
                    return Err(Error::InvalidArgument("coin bound must be positive".into()));
                }
                let coins: Vec<u64> = (0..*count).map(|_| self.rng.gen_range(0..*bound)).collect();
                out[0].coins.extend_from_slice(&coins);
                out[1].coins.extend_from_slice(&coins);
            }
        }
        Ok(())
    }
}

/// Audits up to `samples` keys per recorded batch against the issued
/// bundles. Every record must match a batch present in both bundles.
pub fn audit_bundles<R: Rng + ?Sized>(
    records: &[TapeRecord],
    bundles: &[PrepBundle; 2],
    samples: usize,
    rng: &mut R,
) -> Result<()> {
    let mut checks = Vec::new();
    for rec in records {
        let n = rec.tapes.len();
        let picks: Vec<usize> = if samples >= n {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, samples).into_vec()
        };
        match rec.kind {
            KeyKind::Cmp => {
                let find = |b: &PrepBundle| {
                    b.cmp
                        .iter()
                        .find(|k| k.first_id == rec.first_id && k.params == rec.params)
                        .cloned()
                };
                let (k0, k1) = find(&bundles[0]).zip(find(&bundles[1])).ok_or_else(|| {
                    Error::InvalidArgument(format!("no comparison batch with id {}", rec.first_id))
                })?;
                for &i in &picks {
                    checks.push(AuditSample {
                        pair: KeyPair::Cmp(k0.key(i), k1.key(i)),
                        tape: rec.tapes[i],
                    });
                }
            }
            KeyKind::Eq => {
                let find = |b: &PrepBundle| {
                    b.eq.iter()
                        .find(|k| k.first_id == rec.first_id && k.params == rec.params)
                        .cloned()
                };
                let (k0, k1) = find(&bundles[0]).zip(find(&bundles[1])).ok_or_else(|| {
                    Error::InvalidArgument(format!("no equality batch with id {}", rec.first_id))
                })?;
                for &i in &picks {
                    checks.push(AuditSample {
                        pair: KeyPair::Eq(k0.key(i), k1.key(i)),
                        tape: rec.tapes[i],
                    });
                }
            }
            KeyKind::Triple => {}
        }
    }
    audit_keys(&checks)
}

/// Dealer shared by two in-process parties. Whichever party asks first
/// generates the pair and parks the peer's half until the peer asks.
#[derive(Debug)]
pub struct SharedDealer {
    inner: Mutex<(Dealer, [VecDeque<PrepBundle>; 2])>,
}

impl SharedDealer {
    pub fn new(dealer: Dealer) -> Arc<Self> {
        Arc::new(Self {
            inner: Mutex::new((dealer, [VecDeque::new(), VecDeque::new()])),
        })
    }

    fn request(&self, party: usize, item: &PrepItem) -> Result<PrepBundle> {
        let mut guard = self
            .inner
            .lock()
            .map_err(|_| Error::Transport("dealer lock poisoned".into()))?;
        let (dealer, pending) = &mut *guard;
        if let Some(b) = pending[party].pop_front() {
            return Ok(b);
        }
        let [b0, b1] = dealer.deal(&PrepPlan {
            items: vec![item.clone()],
        })?;
        let (mine, theirs) = if party == 0 { (b0, b1) } else { (b1, b0) };
        pending[1 - party].push_back(theirs);
        Ok(mine)
    }

    /// Runs `f` on the underlying dealer, e.g. to read tape records.
    pub fn with_dealer<T>(&self, f: impl FnOnce(&Dealer) -> T) -> T {
        let guard = self.inner.lock().expect("dealer lock");
        f(&guard.0)
    }
}

pub enum PrepSource {
    /// Only preloaded material.
    Preloaded,
    /// Bundles pushed by a dealer thread while the protocol runs.
    Stream(Receiver<PrepBundle>, Duration),
    /// In-process dealer generating each request.
    OnDemand(Arc<SharedDealer>),
}

/// One party's pool of preprocessing material.
pub struct PrepStore {
    party: usize,
    cmp: Vec<CmpKeyBatch>,
    eq: Vec<EqKeyBatch>,
    triples: VecDeque<TripleShare>,
    coins: VecDeque<u64>,
    consumed: [BTreeMap<u64, u64>; 3],
    source: PrepSource,
}

impl PrepStore {
    pub fn new(party: usize, source: PrepSource) -> Self {
        Self {
            party,
            cmp: Vec::new(),
            eq: Vec::new(),
            triples: VecDeque::new(),
            coins: VecDeque::new(),
            consumed: Default::default(),
            source,
        }
    }

    pub fn preloaded(party: usize, bundle: PrepBundle) -> Self {
        let mut s = Self::new(party, PrepSource::Preloaded);
        s.absorb(bundle);
        s
    }

    pub fn party(&self) -> usize {
        self.party
    }

    pub fn absorb(&mut self, bundle: PrepBundle) {
        self.cmp.extend(bundle.cmp);
        self.eq.extend(bundle.eq);
        self.triples.extend(bundle.triples);
        self.coins.extend(bundle.coins);
    }

    /// Remaining comparison keys with the given parameters.
    pub fn cmp_available(&self, params: FssParams) -> usize {
        self.cmp
            .iter()
            .filter(|b| b.params == params)
            .map(|b| b.len())
            .sum()
    }

    pub fn triples_available(&self) -> usize {
        self.triples.len()
    }

    fn mark(&mut self, kind: KeyKind, first: u64, count: usize) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        let end = first + count as u64;
        let map = &mut self.consumed[kind as usize];
        // any consumed range starting before `end` that ends after `first`
        if let Some((&s, &e)) = map.range(..end).next_back() {
            if e > first {
                let name = match kind {
                    KeyKind::Eq => "equality keys",
                    KeyKind::Cmp => "comparison keys",
                    KeyKind::Triple => "triples",
                };
                return Err(Error::Reuse {
                    kind: name,
                    first: s.max(first),
                    end: e.min(end),
                });
            }
        }
        map.insert(first, end);
        Ok(())
    }

    fn pull(&mut self, item: &PrepItem) -> Result<()> {
        let bundle = match &self.source {
            PrepSource::Preloaded => return Err(Error::PrepExhausted(format!("{item:?}"))),
            PrepSource::Stream(rx, timeout) => match rx.recv_timeout(*timeout) {
                Ok(b) => b,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Timeout(timeout.as_millis() as u64))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::PrepExhausted(format!("{item:?}")))
                }
            },
            PrepSource::OnDemand(d) => d.request(self.party, item)?,
        };
        self.absorb(bundle);
        Ok(())
    }

    pub fn take_cmp(&mut self, params: FssParams, count: usize) -> Result<CmpKeyBatch> {
        while self.cmp_available(params) < count {
            let have = self.cmp_available(params);
            self.pull(&PrepItem::Cmp {
                params,
                count: count - have,
            })?;
        }
        let mut out = CmpKeyBatch {
            params,
            party: self.party,
            first_id: 0,
            alpha: Vec::new(),
            seeds: Vec::new(),
            cw: Vec::new(),
            cw_leaf: Vec::new(),
        };
        let mut need = count;
        let mut parts = Vec::new();
        for b in self.cmp.iter_mut().filter(|b| b.params == params) {
            if need == 0 {
                break;
            }
            let k = need.min(b.len());
            parts.push(b.take_front(k)?);
            need -= k;
        }
        self.cmp.retain(|b| !b.is_empty());
        for p in parts {
            self.mark(KeyKind::Cmp, p.first_id, p.len())?;
            out.append(p)?;
        }
        Ok(out)
    }

    pub fn take_eq(&mut self, params: FssParams, count: usize) -> Result<EqKeyBatch> {
        let avail = |s: &Self| {
            s.eq.iter()
                .filter(|b| b.params == params)
                .map(|b| b.len())
                .sum::<usize>()
        };
        while avail(self) < count {
            let have = avail(self);
            self.pull(&PrepItem::Eq {
                params,
                count: count - have,
            })?;
        }
        let mut keys = Vec::with_capacity(count);
        let mut need = count;
        let mut ranges = Vec::new();
        for b in self.eq.iter_mut().filter(|b| b.params == params) {
            if need == 0 {
                break;
            }
            let k = need.min(b.len());
            let part = b.take_front(k)?;
            ranges.push((part.first_id, k));
            keys.extend((0..k).map(|e| part.key(e)));
            need -= k;
        }
        self.eq.retain(|b| !b.is_empty());
        for (first, k) in &ranges {
            self.mark(KeyKind::Eq, *first, *k)?;
        }
        if keys.is_empty() {
            return Ok(EqKeyBatch {
                params,
                party: self.party,
                first_id: 0,
                alpha: Vec::new(),
                seeds: Vec::new(),
                cw: Vec::new(),
                cw_final: Vec::new(),
            });
        }
        EqKeyBatch::from_keys(&keys, self.party, ranges[0].0)
    }

    pub fn take_triple(&mut self, op: &BilinearOp, bits: u32) -> Result<TripleShare> {
        if self.triples.is_empty() {
            self.pull(&PrepItem::Triple {
                op: op.clone(),
                bits,
            })?;
        }
        let t = self
            .triples
            .pop_front()
            .ok_or_else(|| Error::PrepExhausted(format!("triple for {op:?}")))?;
        if &t.op != op || t.a.bits() != bits {
            return Err(Error::Geometry(format!(
                "next triple is for {:?} at {} bits, protocol needs {op:?} at {bits} bits",
                t.op,
                t.a.bits()
            )));
        }
        self.mark(KeyKind::Triple, t.id, 1)?;
        Ok(t)
    }

    pub fn take_coins(&mut self, count: usize, bound: u64) -> Result<Vec<u64>> {
        if self.coins.len() < count {
            let have = self.coins.len();
            self.pull(&PrepItem::Coins {
                count: count - have,
                bound,
            })?;
        }
        if self.coins.len() < count {
            return Err(Error::PrepExhausted(format!("{count} coins")));
        }
        let coins: Vec<u64> = self.coins.drain(..count).collect();
        if coins.iter().any(|&c| c >= bound) {
            return Err(Error::InvalidArgument(format!(
                "coin out of range [0, {bound})"
            )));
        }
        Ok(coins)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> PrepPlan {
        let p = FssParams::new(12, 32).unwrap();
        PrepPlan {
            items: vec![
                PrepItem::Cmp {
                    params: p,
                    count: 5,
                },
                PrepItem::Eq {
                    params: p,
                    count: 3,
                },
                PrepItem::Triple {
                    op: BilinearOp::MatMul { m: 2, k: 3, n: 1 },
                    bits: 32,
                },
                PrepItem::Coins {
                    count: 4,
                    bound: 100,
                },
            ],
        }
    }

    #[test]
    fn bundle_bytes_roundtrip() {
        let mut d = Dealer::new(1);
        let [b0, b1] = d.deal(&plan()).unwrap();
        for (party, b) in [(0, &b0), (1, &b1)] {
            let (p, back) = PrepBundle::from_bytes(&b.to_bytes(party).unwrap()).unwrap();
            assert_eq!(p, party);
            assert_eq!(&back, b);
        }
        assert_eq!(b0.coins, b1.coins);
    }

    #[test]
    fn store_detects_reuse() {
        let mut d = Dealer::new(2);
        let [b0, _] = d.deal(&plan()).unwrap();
        let p = FssParams::new(12, 32).unwrap();
        let mut s = PrepStore::preloaded(0, b0.clone());
        let k = s.take_cmp(p, 2).unwrap();
        assert_eq!(k.len(), 2);
        s.take_cmp(p, 3).unwrap();
        assert!(matches!(s.take_cmp(p, 1), Err(Error::PrepExhausted(_))));
        s.absorb(b0);
        assert!(matches!(s.take_cmp(p, 1), Err(Error::Reuse { .. })));
    }

    #[test]
    fn triple_geometry_checked() {
        let mut d = Dealer::new(3);
        let [b0, _] = d.deal(&plan()).unwrap();
        let mut s = PrepStore::preloaded(0, b0);
        let wrong = BilinearOp::MatMul { m: 2, k: 3, n: 2 };
        assert!(matches!(s.take_triple(&wrong, 32), Err(Error::Geometry(_))));
    }

    #[test]
    fn on_demand_pairs_match() {
        let shared = SharedDealer::new(Dealer::new(4));
        let mut s0 = PrepStore::new(0, PrepSource::OnDemand(shared.clone()));
        let mut s1 = PrepStore::new(1, PrepSource::OnDemand(shared));
        let p = FssParams::uniform(8).unwrap();
        let k1 = s1.take_cmp(p, 4).unwrap();
        let k0 = s0.take_cmp(p, 4).unwrap();
        assert_eq!(k0.first_id, k1.first_id);
        assert_eq!(k0.cw, k1.cw);
        let c0 = s0.take_coins(3, 10).unwrap();
        let c1 = s1.take_coins(3, 10).unwrap();
        assert_eq!(c0, c1);
    }

    #[test]
    fn audit_catches_tampering() {
        let mut d = Dealer::new(5).with_tapes();
        let mut bundles = d.deal(&plan()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        audit_bundles(d.tape_records(), &bundles, 100, &mut rng).unwrap();
        bundles[1].cmp[0].cw_leaf[0] ^= 1;
        assert!(matches!(
            audit_bundles(d.tape_records(), &bundles, 100, &mut rng),
            Err(Error::AuditFailed(_))
        ));
    }
}
