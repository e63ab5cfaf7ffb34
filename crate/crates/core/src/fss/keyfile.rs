//! Binary container for batches of preprocessing material.
//!
//! A file is a fixed 23-byte header followed by one payload per party
//! present. All integers are little-endian. The byte-level layout of the
//! header and of each payload kind is documented in `LAYOUT.md`.

use std::fs;
use std::path::Path;

use super::{CmpCorrection, CmpKeyBatch, EqCorrection, EqKeyBatch, FssParams};
use crate::codec::{put_uint, width, Reader};
use crate::error::{Error, Result};
use crate::prg::LAMBDA;

pub const MAGIC: [u8; 4] = *b"ARNK";
pub const KEY_FILE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyKind {
    Eq = 0,
    Cmp = 1,
    Triple = 2,
}

impl KeyKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(KeyKind::Eq),
            1 => Ok(KeyKind::Cmp),
            2 => Ok(KeyKind::Triple),
            other => Err(Error::Format(format!("unknown key kind {other}"))),
        }
    }
}

/// Header plus raw per-party payloads. Typed batches convert to and from
/// this container; triples use it with their own payload layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBatch {
    pub kind: KeyKind,
    pub n_bits: u32,
    pub out_bits: u32,
    pub count: usize,
    pub first_id: u64,
    pub payloads: [Option<Vec<u8>>; 2],
}

fn seed_word(r: &mut Reader<'_>) -> Result<u128> {
    let s = r.u128()?;
    if s >> LAMBDA != 0 {
        return Err(Error::MalformedKey("seed has its top bit set".into()));
    }
    Ok(s)
}

fn bit_byte(r: &mut Reader<'_>, allowed: u8) -> Result<u8> {
    let b = r.uint(1)? as u8;
    if b & !allowed != 0 {
        return Err(Error::MalformedKey(format!(
            "control byte {b:#04x} has stray bits"
        )));
    }
    Ok(b)
}

impl EqKeyBatch {
    /// Serialized size of one key in bytes.
    pub fn key_bytes(params: FssParams) -> usize {
        let n = params.n_bits as usize;
        width(params.n_bits) + 16 + n * 17 + width(params.out_bits)
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let (wn, wo) = (width(self.params.n_bits), width(self.params.out_bits));
        let mut buf = Vec::with_capacity(self.len() * Self::key_bytes(self.params));
        self.alpha.iter().for_each(|&a| put_uint(&mut buf, a, wn));
        self.seeds
            .iter()
            .for_each(|s| buf.extend_from_slice(&s.to_le_bytes()));
        for chunk in self.cw.chunks(self.len().max(1)) {
            chunk
                .iter()
                .for_each(|c| buf.extend_from_slice(&c.seed.to_le_bytes()));
            chunk.iter().for_each(|c| buf.push(c.t[0] | (c.t[1] << 1)));
        }
        self.cw_final
            .iter()
            .for_each(|&f| put_uint(&mut buf, f, wo));
        buf
    }

    pub fn from_payload(
        params: FssParams,
        party: usize,
        first_id: u64,
        count: usize,
        bytes: &[u8],
    ) -> Result<Self> {
        let (wn, wo) = (width(params.n_bits), width(params.out_bits));
        let mut r = Reader::new(bytes);
        let alpha = (0..count)
            .map(|_| r.masked(wn, params.n_bits))
            .collect::<Result<Vec<_>>>()?;
        let seeds = (0..count)
            .map(|_| seed_word(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut cw = Vec::with_capacity(params.n_bits as usize * count);
        for _ in 0..params.n_bits {
            let s = (0..count)
                .map(|_| seed_word(&mut r))
                .collect::<Result<Vec<_>>>()?;
            for seed in s {
                let b = bit_byte(&mut r, 0b11)?;
                cw.push(EqCorrection {
                    seed,
                    t: [b & 1, b >> 1],
                });
            }
        }
        let cw_final = (0..count)
            .map(|_| r.masked(wo, params.out_bits))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            params,
            party,
            first_id,
            alpha,
            seeds,
            cw,
            cw_final,
        })
    }
}

impl CmpKeyBatch {
    /// Serialized size of one key in bytes.
    pub fn key_bytes(params: FssParams) -> usize {
        let n = params.n_bits as usize;
        let wo = width(params.out_bits);
        width(params.n_bits) + 16 + n * (17 + wo) + (n + 1) * wo
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let (wn, wo) = (width(self.params.n_bits), width(self.params.out_bits));
        let mut buf = Vec::with_capacity(self.len() * Self::key_bytes(self.params));
        self.alpha.iter().for_each(|&a| put_uint(&mut buf, a, wn));
        self.seeds
            .iter()
            .for_each(|s| buf.extend_from_slice(&s.to_le_bytes()));
        for chunk in self.cw.chunks(self.len().max(1)) {
            chunk
                .iter()
                .for_each(|c| buf.extend_from_slice(&c.seed.to_le_bytes()));
            chunk.iter().for_each(|c| buf.push(c.pack_bits()));
            chunk.iter().for_each(|c| put_uint(&mut buf, c.sigma, wo));
        }
        self.cw_leaf.iter().for_each(|&l| put_uint(&mut buf, l, wo));
        buf
    }

    pub fn from_payload(
        params: FssParams,
        party: usize,
        first_id: u64,
        count: usize,
        bytes: &[u8],
    ) -> Result<Self> {
        let (wn, wo) = (width(params.n_bits), width(params.out_bits));
        let n = params.n_bits as usize;
        let mut r = Reader::new(bytes);
        let alpha = (0..count)
            .map(|_| r.masked(wn, params.n_bits))
            .collect::<Result<Vec<_>>>()?;
        let seeds = (0..count)
            .map(|_| seed_word(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut cw = Vec::with_capacity(n * count);
        for _ in 0..n {
            let s = (0..count)
                .map(|_| seed_word(&mut r))
                .collect::<Result<Vec<_>>>()?;
            let b = (0..count)
                .map(|_| bit_byte(&mut r, 0b1111))
                .collect::<Result<Vec<_>>>()?;
            for e in 0..count {
                let sigma = r.masked(wo, params.out_bits)?;
                cw.push(CmpCorrection {
                    seed: s[e],
                    t: [b[e] & 1, (b[e] >> 1) & 1],
                    sigma,
                    tau: [(b[e] >> 2) & 1, (b[e] >> 3) & 1],
                });
            }
        }
        let cw_leaf = (0..(n + 1) * count)
            .map(|_| r.masked(wo, params.out_bits))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            params,
            party,
            first_id,
            alpha,
            seeds,
            cw,
            cw_leaf,
        })
    }
}

impl KeyBatch {
    fn from_parts(kind: KeyKind, params: FssParams, count: usize, first_id: u64) -> Self {
        Self {
            kind,
            n_bits: params.n_bits,
            out_bits: params.out_bits,
            count,
            first_id,
            payloads: [None, None],
        }
    }

    fn params(&self) -> Result<FssParams> {
        FssParams::new(self.n_bits, self.out_bits)
    }

    pub fn from_cmp(batches: &[&CmpKeyBatch]) -> Result<Self> {
        let first = batches
            .first()
            .ok_or_else(|| Error::InvalidArgument("no batches".into()))?;
        let mut kb = Self::from_parts(KeyKind::Cmp, first.params, first.len(), first.first_id);
        for b in batches {
            if b.params != first.params || b.len() != first.len() || b.first_id != first.first_id {
                return Err(Error::InvalidArgument("party batches disagree".into()));
            }
            kb.payloads[b.party] = Some(b.to_payload());
        }
        Ok(kb)
    }

    pub fn from_eq(batches: &[&EqKeyBatch]) -> Result<Self> {
        let first = batches
            .first()
            .ok_or_else(|| Error::InvalidArgument("no batches".into()))?;
        let mut kb = Self::from_parts(KeyKind::Eq, first.params, first.len(), first.first_id);
        for b in batches {
            if b.params != first.params || b.len() != first.len() || b.first_id != first.first_id {
                return Err(Error::InvalidArgument("party batches disagree".into()));
            }
            kb.payloads[b.party] = Some(b.to_payload());
        }
        Ok(kb)
    }

    fn payload(&self, party: usize, kind: KeyKind) -> Result<&[u8]> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected {kind:?} keys, file holds {:?}",
                self.kind
            )));
        }
        self.payloads
            .get(party)
            .and_then(|p| p.as_deref())
            .ok_or_else(|| Error::Format(format!("no payload for party {party}")))
    }

    pub fn cmp_keys(&self, party: usize) -> Result<CmpKeyBatch> {
        let bytes = self.payload(party, KeyKind::Cmp)?;
        CmpKeyBatch::from_payload(self.params()?, party, self.first_id, self.count, bytes)
    }

    pub fn eq_keys(&self, party: usize) -> Result<EqKeyBatch> {
        let bytes = self.payload(party, KeyKind::Eq)?;
        EqKeyBatch::from_payload(self.params()?, party, self.first_id, self.count, bytes)
    }

    /// Copy holding only one party's payload.
    pub fn for_party(&self, party: usize) -> Result<Self> {
        let p = self
            .payloads
            .get(party)
            .cloned()
            .flatten()
            .ok_or_else(|| Error::Format(format!("no payload for party {party}")))?;
        let mut out = self.clone();
        out.payloads = [None, None];
        out.payloads[party] = Some(p);
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n: u8 = self
            .n_bits
            .try_into()
            .map_err(|_| Error::Format("n_bits too large".into()))?;
        let out: u8 = self
            .out_bits
            .try_into()
            .map_err(|_| Error::Format("out_bits too large".into()))?;
        let count: u32 = self
            .count
            .try_into()
            .map_err(|_| Error::Format("count too large".into()))?;
        let lens: Vec<usize> = self.payloads.iter().flatten().map(|p| p.len()).collect();
        if lens.is_empty() {
            return Err(Error::Format("no payloads".into()));
        }
        if lens.iter().any(|&l| l != lens[0]) {
            return Err(Error::Format("party payloads differ in length".into()));
        }
        let parties = self
            .payloads
            .iter()
            .enumerate()
            .fold(0u8, |m, (i, p)| m | ((p.is_some() as u8) << i));

        let mut buf = Vec::with_capacity(HEADER_LEN + lens.iter().sum::<usize>());
        buf.extend_from_slice(&MAGIC);
        buf.push(KEY_FILE_VERSION);
        buf.push(self.kind as u8);
        buf.push(n);
        buf.extend_from_slice(&(LAMBDA as u16).to_le_bytes());
        buf.extend_from_slice(&count.to_le_bytes());
        buf.push(out);
        buf.push(parties);
        buf.extend_from_slice(&self.first_id.to_le_bytes());
        debug_assert_eq!(buf.len(), HEADER_LEN);
        for p in self.payloads.iter().flatten() {
            buf.extend_from_slice(p);
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file too short: {} bytes",
                bytes.len()
            )));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if bytes[4] != KEY_FILE_VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        let kind = KeyKind::from_byte(bytes[5])?;
        let n_bits = bytes[6] as u32;
        let lambda = u16::from_le_bytes([bytes[7], bytes[8]]);
        if kind != KeyKind::Triple && lambda as u32 != LAMBDA {
            return Err(Error::Format(format!(
                "security parameter {lambda}, expected {LAMBDA}"
            )));
        }
        let count = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
        let out_bits = bytes[13] as u32;
        let parties = bytes[14];
        let first_id = u64::from_le_bytes(bytes[15..23].try_into().expect("8 bytes"));
        if parties == 0 || parties > 0b11 {
            return Err(Error::Format(format!("bad party mask {parties:#04x}")));
        }
        let present = parties.count_ones() as usize;
        let body = &bytes[HEADER_LEN..];
        if !body.len().is_multiple_of(present) {
            return Err(Error::Format(
                "payload length not divisible by party count".into(),
            ));
        }
        let each = body.len() / present;
        let mut payloads = [None, None];
        let mut chunks = body.chunks(each.max(1));
        for (party, slot) in payloads.iter_mut().enumerate() {
            if parties & (1 << party) != 0 {
                *slot = Some(chunks.next().map(|c| c.to_vec()).unwrap_or_default());
            }
        }
        let kb = Self {
            kind,
            n_bits,
            out_bits,
            count,
            first_id,
            payloads,
        };
        if kind != KeyKind::Triple {
            // Validate eagerly so a bad file fails at load time.
            for party in 0..2 {
                if kb.payloads[party].is_some() {
                    match kind {
                        KeyKind::Eq => drop(kb.eq_keys(party)?),
                        KeyKind::Cmp => drop(kb.cmp_keys(party)?),
                        KeyKind::Triple => {}
                    }
                }
            }
        }
        Ok(kb)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fss::{gen_cmp_batch, gen_eq_batch};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn cmp_roundtrip_and_size() {
        let params = FssParams::uniform(32).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ([b0, b1], _) = gen_cmp_batch(params, 5, 77, false, &mut rng).unwrap();
        let kb = KeyBatch::from_cmp(&[&b0, &b1]).unwrap();
        let bytes = kb.to_bytes().unwrap();
        assert_eq!(
            bytes.len(),
            HEADER_LEN + 2 * 5 * CmpKeyBatch::key_bytes(params)
        );
        assert_eq!(CmpKeyBatch::key_bytes(params), 824);
        let back = KeyBatch::from_bytes(&bytes).unwrap();
        assert_eq!(back, kb);
        assert_eq!(back.cmp_keys(0).unwrap(), b0);
        assert_eq!(back.cmp_keys(1).unwrap(), b1);
        assert_eq!(back.first_id, 77);
    }

    #[test]
    fn eq_roundtrip_single_party() {
        let params = FssParams::new(16, 64).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let ([_, b1], _) = gen_eq_batch(params, 3, 0, false, &mut rng).unwrap();
        let kb = KeyBatch::from_eq(&[&b1]).unwrap();
        let back = KeyBatch::from_bytes(&kb.to_bytes().unwrap()).unwrap();
        assert_eq!(back.eq_keys(1).unwrap(), b1);
        assert!(back.eq_keys(0).is_err());
        assert!(back.cmp_keys(1).is_err());
    }

    #[test]
    fn corrupt_files_rejected() {
        let params = FssParams::uniform(8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ([b0, _], _) = gen_cmp_batch(params, 2, 0, false, &mut rng).unwrap();
        let good = KeyBatch::from_cmp(&[&b0]).unwrap().to_bytes().unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(KeyBatch::from_bytes(&bad).is_err());
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(KeyBatch::from_bytes(&bad).is_err());
        assert!(KeyBatch::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(KeyBatch::from_bytes(&good[..10]).is_err());
        // set the top bit of the first seed
        let mut bad = good;
        let seed_end = HEADER_LEN + 2 + 16;
        bad[seed_end - 1] |= 0x80;
        assert!(matches!(
            KeyBatch::from_bytes(&bad),
            Err(Error::MalformedKey(_))
        ));
        // stray high bits in a 12-bit alpha share
        let params = FssParams::uniform(12).unwrap();
        let ([b0, _], _) = gen_cmp_batch(params, 1, 0, false, &mut rng).unwrap();
        let mut bad = KeyBatch::from_cmp(&[&b0]).unwrap().to_bytes().unwrap();
        bad[HEADER_LEN + 1] |= 0xf0;
        assert!(matches!(
            KeyBatch::from_bytes(&bad),
            Err(Error::MalformedKey(_))
        ));
    }
}
