//! Function secret sharing for equality `1[x == alpha]` and comparison
//! `1[x <= alpha]` over an `n`-bit input domain.
//!
//! Evaluation walks a depth-`n` binary tree from the most significant bit
//! of the public input. Both parties hold correlated `(seed, control bit)`
//! states that stay correlated only along the path to `alpha`. Correction
//! words use the seed-reuse trick: one `lambda`-bit seed correction is
//! shared by both children, so an equality correction word is `lambda + 2`
//! bits and a comparison correction word `lambda + out + 4` bits.
//!
//! Outputs live in `Z_2^out`, which defaults to the input width but may be
//! wider so that a narrow comparison can feed a wide arithmetic ring.

mod audit;
mod keyfile;
mod protocol;

pub use audit::{audit_keys, AuditSample, KeyPair};
pub use keyfile::{KeyBatch, KeyKind, HEADER_LEN, KEY_FILE_VERSION, MAGIC};
pub use protocol::{eq_protocol, sign_protocol};

use rand::Rng;

use crate::error::{Error, Result};
use crate::prg::{
    self, cmp_blocks, split_leaf_blocks, split_seed_block, EqExpansion, LeafExpansion, Seed,
    SeedBit,
};
use crate::ring::{check_bits, mask};

/// Input-domain and output-ring widths of a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FssParams {
    pub n_bits: u32,
    pub out_bits: u32,
}

impl FssParams {
    pub fn new(n_bits: u32, out_bits: u32) -> Result<Self> {
        check_bits(n_bits)?;
        check_bits(out_bits)?;
        Ok(Self { n_bits, out_bits })
    }

    /// Same width for input and output.
    pub fn uniform(n_bits: u32) -> Result<Self> {
        Self::new(n_bits, n_bits)
    }

    #[inline]
    fn alpha_bit(&self, alpha: u64, level: usize) -> u8 {
        ((alpha >> (self.n_bits as usize - 1 - level)) & 1) as u8
    }
}

/// Everything keygen consumes: with the tape fixed, keygen is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeygenTape {
    pub alpha: u64,
    pub alpha_share0: u64,
    pub seed0: Seed,
    pub seed1: Seed,
}

impl KeygenTape {
    pub fn sample<R: Rng + ?Sized>(params: FssParams, rng: &mut R) -> Self {
        let m = mask(params.n_bits);
        Self {
            alpha: rng.gen::<u64>() & m,
            alpha_share0: rng.gen::<u64>() & m,
            seed0: Seed::random(rng),
            seed1: Seed::random(rng),
        }
    }

    fn alpha_share(&self, party: usize, n_bits: u32) -> u64 {
        match party {
            0 => self.alpha_share0,
            _ => self.alpha.wrapping_sub(self.alpha_share0) & mask(n_bits),
        }
    }

    fn seed(&self, party: usize) -> u128 {
        match party {
            0 => self.seed0.value(),
            _ => self.seed1.value(),
        }
    }
}

/// Equality correction word: one seed correction and two control-bit
/// corrections (left, right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EqCorrection {
    pub seed: u128,
    pub t: [u8; 2],
}

/// Comparison correction word: the equality part plus the leaf-side
/// `sigma` correction and two `tau` corrections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CmpCorrection {
    pub seed: u128,
    pub t: [u8; 2],
    pub sigma: u64,
    pub tau: [u8; 2],
}

impl CmpCorrection {
    fn eq_part(&self) -> EqCorrection {
        EqCorrection {
            seed: self.seed,
            t: self.t,
        }
    }

    pub(crate) fn pack_bits(&self) -> u8 {
        self.t[0] | (self.t[1] << 1) | (self.tau[0] << 2) | (self.tau[1] << 3)
    }
}

/// One party's equality key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EqKey {
    pub params: FssParams,
    pub alpha_share: u64,
    pub seed: Seed,
    pub cw: Vec<EqCorrection>,
    pub cw_final: u64,
}

/// One party's comparison key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmpKey {
    pub params: FssParams,
    pub alpha_share: u64,
    pub seed: Seed,
    pub cw: Vec<CmpCorrection>,
    /// `n + 1` leaf corrections; the last one is the equality-case word.
    pub cw_leaf: Vec<u64>,
}

/// Structure-of-arrays batch of one party's equality keys. Correction words
/// are level-major: all elements' level-`i` words are contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EqKeyBatch {
    pub params: FssParams,
    pub party: usize,
    pub first_id: u64,
    pub alpha: Vec<u64>,
    pub seeds: Vec<u128>,
    pub cw: Vec<EqCorrection>,
    pub cw_final: Vec<u64>,
}

/// Structure-of-arrays batch of one party's comparison keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmpKeyBatch {
    pub params: FssParams,
    pub party: usize,
    pub first_id: u64,
    pub alpha: Vec<u64>,
    pub seeds: Vec<u128>,
    pub cw: Vec<CmpCorrection>,
    /// `(n + 1) * count` words, level-major.
    pub cw_leaf: Vec<u64>,
}

// -- per-level kernels shared by single and batched paths --------------------

#[inline]
fn correct(exp: EqExpansion, t: u8, cw: EqCorrection) -> EqExpansion {
    if t == 0 {
        return exp;
    }
    let mut out = exp;
    for side in 0..2 {
        out.halves[side].seed ^= cw.seed;
        out.halves[side].bit ^= cw.t[side];
    }
    out
}

#[inline]
fn correct_leaf(exp: LeafExpansion, t: u8, cw: &CmpCorrection, out_bits: u32) -> LeafExpansion {
    if t == 0 {
        return exp;
    }
    let m = mask(out_bits);
    LeafExpansion {
        sigma: [(exp.sigma[0] ^ cw.sigma) & m, (exp.sigma[1] ^ cw.sigma) & m],
        tau: [exp.tau[0] ^ cw.tau[0], exp.tau[1] ^ cw.tau[1]],
    }
}

/// Equality correction for one level: the losing child's seeds cancel and
/// the kept child's control bits differ.
#[inline]
fn eq_correction(e0: &EqExpansion, e1: &EqExpansion, alpha_bit: u8) -> EqCorrection {
    let keep = alpha_bit as usize;
    let lose = 1 - keep;
    EqCorrection {
        seed: e0.halves[lose].seed ^ e1.halves[lose].seed,
        t: [
            e0.halves[0].bit ^ e1.halves[0].bit ^ alpha_bit ^ 1,
            e0.halves[1].bit ^ e1.halves[1].bit ^ alpha_bit,
        ],
    }
}

/// Leaf correction for one level: the child equal to `alpha[i]` stays on
/// the path and must emit 0; the other child is the leaf side and carries
/// `tau_0 ^ tau_1 = 1`.
#[inline]
fn leaf_correction(l0: &LeafExpansion, l1: &LeafExpansion, alpha_bit: u8) -> (u64, [u8; 2]) {
    let zero_side = alpha_bit as usize;
    (
        l0.sigma[zero_side] ^ l1.sigma[zero_side],
        [
            l0.tau[0] ^ l1.tau[0] ^ alpha_bit,
            l0.tau[1] ^ l1.tau[1] ^ alpha_bit ^ 1,
        ],
    )
}

/// `(-1)^t1 * (target - v0 + v1) mod 2^bits`.
#[inline]
fn final_word(t1: u8, target: u64, v0: u64, v1: u64, bits: u32) -> u64 {
    let w = target.wrapping_sub(v0).wrapping_add(v1);
    let w = if t1 == 1 { w.wrapping_neg() } else { w };
    w & mask(bits)
}

/// `(-1)^party * (t * cw + v) mod 2^bits`.
#[inline]
fn output_share(party: usize, t: u8, cw: u64, v: u64, bits: u32) -> u64 {
    let o = (t as u64).wrapping_mul(cw).wrapping_add(v);
    let o = if party == 1 { o.wrapping_neg() } else { o };
    o & mask(bits)
}

#[inline]
fn low_bits(seed: u128, bits: u32) -> u64 {
    (seed as u64) & mask(bits)
}

fn check_party(party: usize) -> Result<()> {
    if party > 1 {
        return Err(Error::InvalidArgument(format!(
            "party must be 0 or 1, got {party}"
        )));
    }
    Ok(())
}

// -- equality ---------------------------------------------------------------

/// Generates equality key batches for both parties from the given tapes.
pub fn keygen_eq_batch(
    params: FssParams,
    tapes: &[KeygenTape],
    first_id: u64,
) -> Result<[EqKeyBatch; 2]> {
    let n = params.n_bits as usize;
    let count = tapes.len();
    let mut seeds = [
        tapes.iter().map(|t| t.seed(0)).collect::<Vec<_>>(),
        tapes.iter().map(|t| t.seed(1)).collect::<Vec<_>>(),
    ];
    let mut bits = [vec![0u8; count], vec![1u8; count]];
    let mut cw = Vec::with_capacity(n * count);

    for level in 0..n {
        let exp0 = prg::expand_batch(&seeds[0], 2)?;
        let exp1 = prg::expand_batch(&seeds[1], 2)?;
        for e in 0..count {
            let a = params.alpha_bit(tapes[e].alpha, level);
            let g0 = EqExpansion {
                halves: [split_seed_block(exp0[0][e]), split_seed_block(exp0[1][e])],
            };
            let g1 = EqExpansion {
                halves: [split_seed_block(exp1[0][e]), split_seed_block(exp1[1][e])],
            };
            let word = eq_correction(&g0, &g1, a);
            let n0 = correct(g0, bits[0][e], word).halves[a as usize];
            let n1 = correct(g1, bits[1][e], word).halves[a as usize];
            seeds[0][e] = n0.seed;
            seeds[1][e] = n1.seed;
            bits[0][e] = n0.bit;
            bits[1][e] = n1.bit;
            cw.push(word);
        }
    }

    let cw_final: Vec<u64> = (0..count)
        .map(|e| {
            final_word(
                bits[1][e],
                1,
                low_bits(seeds[0][e], params.out_bits),
                low_bits(seeds[1][e], params.out_bits),
                params.out_bits,
            )
        })
        .collect();

    Ok([0, 1].map(|party| EqKeyBatch {
        params,
        party,
        first_id,
        alpha: tapes
            .iter()
            .map(|t| t.alpha_share(party, params.n_bits))
            .collect(),
        seeds: tapes.iter().map(|t| t.seed(party)).collect(),
        cw: cw.clone(),
        cw_final: cw_final.clone(),
    }))
}

/// Generates a single equality key pair. Returns `(alpha, k0, k1)`.
pub fn keygen_eq<R: Rng + ?Sized>(n_bits: u32, rng: &mut R) -> Result<(u64, EqKey, EqKey)> {
    let params = FssParams::uniform(n_bits)?;
    let tape = KeygenTape::sample(params, rng);
    let (k0, k1) = keygen_eq_from_tape(params, &tape)?;
    Ok((tape.alpha, k0, k1))
}

pub fn keygen_eq_from_tape(params: FssParams, tape: &KeygenTape) -> Result<(EqKey, EqKey)> {
    let [b0, b1] = keygen_eq_batch(params, std::slice::from_ref(tape), 0)?;
    Ok((b0.key(0), b1.key(0)))
}

/// Evaluates an equality key on a public input. The two parties' outputs
/// sum to `1[x == alpha]` modulo `2^out`.
pub fn eval_eq(party: usize, key: &EqKey, x: u64) -> Result<u64> {
    check_party(party)?;
    key.validate()?;
    let p = key.params;
    let mut seed = key.seed.value();
    let mut t = party as u8;
    for level in 0..p.n_bits as usize {
        let exp = prg::slice_eq(&prg::expand(Seed::new(seed), 2)?)?;
        let next = correct(exp, t, key.cw[level]).halves[p.alpha_bit(x, level) as usize];
        seed = next.seed;
        t = next.bit;
    }
    Ok(output_share(
        party,
        t,
        key.cw_final,
        low_bits(seed, p.out_bits),
        p.out_bits,
    ))
}

impl EqKey {
    fn validate(&self) -> Result<()> {
        if self.cw.len() != self.params.n_bits as usize {
            return Err(Error::MalformedKey(format!(
                "equality key for {} bits has {} correction words",
                self.params.n_bits,
                self.cw.len()
            )));
        }
        Ok(())
    }
}

impl EqKeyBatch {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn key(&self, e: usize) -> EqKey {
        let count = self.len();
        EqKey {
            params: self.params,
            alpha_share: self.alpha[e],
            seed: Seed::new(self.seeds[e]),
            cw: (0..self.params.n_bits as usize)
                .map(|l| self.cw[l * count + e])
                .collect(),
            cw_final: self.cw_final[e],
        }
    }

    /// Packs single keys (all of one party) into a batch.
    pub fn from_keys(keys: &[EqKey], party: usize, first_id: u64) -> Result<Self> {
        let params = keys
            .first()
            .map(|k| k.params)
            .ok_or_else(|| Error::InvalidArgument("empty key list".into()))?;
        let n = params.n_bits as usize;
        let mut cw = vec![EqCorrection::default(); n * keys.len()];
        for (e, k) in keys.iter().enumerate() {
            if k.params != params {
                return Err(Error::MalformedKey("mixed key parameters in batch".into()));
            }
            k.validate()?;
            for l in 0..n {
                cw[l * keys.len() + e] = k.cw[l];
            }
        }
        Ok(Self {
            params,
            party,
            first_id,
            alpha: keys.iter().map(|k| k.alpha_share).collect(),
            seeds: keys.iter().map(|k| k.seed.value()).collect(),
            cw,
            cw_final: keys.iter().map(|k| k.cw_final).collect(),
        })
    }

    /// Splits off the first `count` keys.
    pub fn take_front(&mut self, count: usize) -> Result<Self> {
        let total = self.len();
        if count > total {
            return Err(Error::PrepExhausted(format!(
                "{count} equality keys, {total} left"
            )));
        }
        let n = self.params.n_bits as usize;
        let front = Self {
            params: self.params,
            party: self.party,
            first_id: self.first_id,
            alpha: self.alpha.drain(..count).collect(),
            seeds: self.seeds.drain(..count).collect(),
            cw: (0..n)
                .flat_map(|l| self.cw[l * total..l * total + count].to_vec())
                .collect(),
            cw_final: self.cw_final.drain(..count).collect(),
        };
        self.cw = (0..n)
            .flat_map(|l| self.cw[l * total + count..(l + 1) * total].to_vec())
            .collect();
        self.first_id += count as u64;
        Ok(front)
    }

    /// Batched evaluation on one public input per key.
    pub fn eval(&self, xs: &[u64]) -> Result<Vec<u64>> {
        check_party(self.party)?;
        let count = self.len();
        if xs.len() != count {
            return Err(Error::ShapeMismatch(vec![count], vec![xs.len()]));
        }
        let p = self.params;
        let mut seeds = self.seeds.clone();
        let mut bits = vec![self.party as u8; count];
        for level in 0..p.n_bits as usize {
            let exp = prg::expand_batch(&seeds, 2)?;
            for e in 0..count {
                let g = EqExpansion {
                    halves: [split_seed_block(exp[0][e]), split_seed_block(exp[1][e])],
                };
                let next = correct(g, bits[e], self.cw[level * count + e]).halves
                    [p.alpha_bit(xs[e], level) as usize];
                seeds[e] = next.seed;
                bits[e] = next.bit;
            }
        }
        Ok((0..count)
            .map(|e| {
                output_share(
                    self.party,
                    bits[e],
                    self.cw_final[e],
                    low_bits(seeds[e], p.out_bits),
                    p.out_bits,
                )
            })
            .collect())
    }
}

// -- comparison -------------------------------------------------------------

/// Generates comparison key batches for both parties from the given tapes.
pub fn keygen_cmp_batch(
    params: FssParams,
    tapes: &[KeygenTape],
    first_id: u64,
) -> Result<[CmpKeyBatch; 2]> {
    let n = params.n_bits as usize;
    let out = params.out_bits;
    let blocks = cmp_blocks(out);
    let count = tapes.len();
    let mut seeds = [
        tapes.iter().map(|t| t.seed(0)).collect::<Vec<_>>(),
        tapes.iter().map(|t| t.seed(1)).collect::<Vec<_>>(),
    ];
    let mut bits = [vec![0u8; count], vec![1u8; count]];
    let mut cw = Vec::with_capacity(n * count);
    let mut cw_leaf = Vec::with_capacity((n + 1) * count);
    let mut raw = [vec![0u128; blocks], vec![0u128; blocks]];

    for level in 0..n {
        let exp = [
            prg::expand_batch(&seeds[0], blocks)?,
            prg::expand_batch(&seeds[1], blocks)?,
        ];
        for e in 0..count {
            let a = params.alpha_bit(tapes[e].alpha, level);
            for j in 0..2 {
                for b in 0..blocks {
                    raw[j][b] = exp[j][b][e];
                }
            }
            let g = [split_eq(&raw[0]), split_eq(&raw[1])];
            let l = [
                split_leaf_blocks(&raw[0], out),
                split_leaf_blocks(&raw[1], out),
            ];
            let eqw = eq_correction(&g[0], &g[1], a);
            let (sigma, tau) = leaf_correction(&l[0], &l[1], a);
            let word = CmpCorrection {
                seed: eqw.seed,
                t: eqw.t,
                sigma,
                tau,
            };

            let leaf_side = 1 - a as usize;
            let mut leaf_vals = [(0u64, 0u8); 2];
            for j in 0..2 {
                let next = correct(g[j], bits[j][e], eqw).halves[a as usize];
                let lf = correct_leaf(l[j], bits[j][e], &word, out);
                leaf_vals[j] = (lf.sigma[leaf_side], lf.tau[leaf_side]);
                seeds[j][e] = next.seed;
                bits[j][e] = next.bit;
            }
            cw.push(word);
            cw_leaf.push(final_word(
                leaf_vals[1].1,
                a as u64,
                leaf_vals[0].0,
                leaf_vals[1].0,
                out,
            ));
        }
    }
    for e in 0..count {
        cw_leaf.push(final_word(
            bits[1][e],
            1,
            low_bits(seeds[0][e], out),
            low_bits(seeds[1][e], out),
            out,
        ));
    }

    Ok([0, 1].map(|party| CmpKeyBatch {
        params,
        party,
        first_id,
        alpha: tapes
            .iter()
            .map(|t| t.alpha_share(party, params.n_bits))
            .collect(),
        seeds: tapes.iter().map(|t| t.seed(party)).collect(),
        cw: cw.clone(),
        cw_leaf: cw_leaf.clone(),
    }))
}

#[inline]
fn split_eq(raw: &[u128]) -> EqExpansion {
    EqExpansion {
        halves: [split_seed_block(raw[0]), split_seed_block(raw[1])],
    }
}

/// Generates a single comparison key pair. Returns `(alpha, k0, k1)`.
pub fn keygen_cmp<R: Rng + ?Sized>(n_bits: u32, rng: &mut R) -> Result<(u64, CmpKey, CmpKey)> {
    let params = FssParams::uniform(n_bits)?;
    let tape = KeygenTape::sample(params, rng);
    let (k0, k1) = keygen_cmp_from_tape(params, &tape)?;
    Ok((tape.alpha, k0, k1))
}

pub fn keygen_cmp_from_tape(params: FssParams, tape: &KeygenTape) -> Result<(CmpKey, CmpKey)> {
    let [b0, b1] = keygen_cmp_batch(params, std::slice::from_ref(tape), 0)?;
    Ok((b0.key(0), b1.key(0)))
}

/// One level of comparison evaluation: returns the next `(seed, t)` state
/// and this level's output share.
#[inline]
fn cmp_eval_level(
    party: usize,
    raw: &[u128],
    state: SeedBit,
    cw: &CmpCorrection,
    leaf_cw: u64,
    x_bit: u8,
    out_bits: u32,
) -> (SeedBit, u64) {
    let g = correct(split_eq(raw), state.bit, cw.eq_part());
    let l = correct_leaf(split_leaf_blocks(raw, out_bits), state.bit, cw, out_bits);
    let side = x_bit as usize;
    let share = output_share(party, l.tau[side], leaf_cw, l.sigma[side], out_bits);
    (g.halves[side], share)
}

/// Per-level output shares `out_1 .. out_{n+1}` of a comparison key.
pub fn eval_cmp_levels(party: usize, key: &CmpKey, x: u64) -> Result<Vec<u64>> {
    check_party(party)?;
    key.validate()?;
    let p = key.params;
    let blocks = cmp_blocks(p.out_bits);
    let mut state = SeedBit {
        seed: key.seed.value(),
        bit: party as u8,
    };
    let mut outs = Vec::with_capacity(p.n_bits as usize + 1);
    for level in 0..p.n_bits as usize {
        let raw = prg::expand(Seed::new(state.seed), blocks)?;
        let (next, share) = cmp_eval_level(
            party,
            &raw,
            state,
            &key.cw[level],
            key.cw_leaf[level],
            p.alpha_bit(x, level),
            p.out_bits,
        );
        state = next;
        outs.push(share);
    }
    outs.push(output_share(
        party,
        state.bit,
        key.cw_leaf[p.n_bits as usize],
        low_bits(state.seed, p.out_bits),
        p.out_bits,
    ));
    Ok(outs)
}

/// Evaluates a comparison key on a public input. The two parties' outputs
/// sum to `1[x <= alpha]` modulo `2^out`.
pub fn eval_cmp(party: usize, key: &CmpKey, x: u64) -> Result<u64> {
    let m = mask(key.params.out_bits);
    Ok(eval_cmp_levels(party, key, x)?
        .into_iter()
        .fold(0u64, |acc, o| acc.wrapping_add(o))
        & m)
}

impl CmpKey {
    fn validate(&self) -> Result<()> {
        let n = self.params.n_bits as usize;
        if self.cw.len() != n || self.cw_leaf.len() != n + 1 {
            return Err(Error::MalformedKey(format!(
                "comparison key for {n} bits has {} correction words and {} leaf words",
                self.cw.len(),
                self.cw_leaf.len()
            )));
        }
        Ok(())
    }
}

impl CmpKeyBatch {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn key(&self, e: usize) -> CmpKey {
        let count = self.len();
        let n = self.params.n_bits as usize;
        CmpKey {
            params: self.params,
            alpha_share: self.alpha[e],
            seed: Seed::new(self.seeds[e]),
            cw: (0..n).map(|l| self.cw[l * count + e]).collect(),
            cw_leaf: (0..=n).map(|l| self.cw_leaf[l * count + e]).collect(),
        }
    }

    pub fn from_keys(keys: &[CmpKey], party: usize, first_id: u64) -> Result<Self> {
        let params = keys
            .first()
            .map(|k| k.params)
            .ok_or_else(|| Error::InvalidArgument("empty key list".into()))?;
        let n = params.n_bits as usize;
        let c = keys.len();
        let mut cw = vec![CmpCorrection::default(); n * c];
        let mut cw_leaf = vec![0u64; (n + 1) * c];
        for (e, k) in keys.iter().enumerate() {
            if k.params != params {
                return Err(Error::MalformedKey("mixed key parameters in batch".into()));
            }
            k.validate()?;
            for l in 0..n {
                cw[l * c + e] = k.cw[l];
            }
            for l in 0..=n {
                cw_leaf[l * c + e] = k.cw_leaf[l];
            }
        }
        Ok(Self {
            params,
            party,
            first_id,
            alpha: keys.iter().map(|k| k.alpha_share).collect(),
            seeds: keys.iter().map(|k| k.seed.value()).collect(),
            cw,
            cw_leaf,
        })
    }

    /// Splits off the first `count` keys.
    pub fn take_front(&mut self, count: usize) -> Result<Self> {
        let total = self.len();
        if count > total {
            return Err(Error::PrepExhausted(format!(
                "{count} comparison keys, {total} left"
            )));
        }
        let n = self.params.n_bits as usize;
        let front = Self {
            params: self.params,
            party: self.party,
            first_id: self.first_id,
            alpha: self.alpha.drain(..count).collect(),
            seeds: self.seeds.drain(..count).collect(),
            cw: (0..n)
                .flat_map(|l| self.cw[l * total..l * total + count].to_vec())
                .collect(),
            cw_leaf: (0..=n)
                .flat_map(|l| self.cw_leaf[l * total..l * total + count].to_vec())
                .collect(),
        };
        self.cw = (0..n)
            .flat_map(|l| self.cw[l * total + count..(l + 1) * total].to_vec())
            .collect();
        self.cw_leaf = (0..=n)
            .flat_map(|l| self.cw_leaf[l * total + count..(l + 1) * total].to_vec())
            .collect();
        self.first_id += count as u64;
        Ok(front)
    }

    /// Appends another batch with the same parameters and party.
    pub fn append(&mut self, other: CmpKeyBatch) -> Result<()> {
        if other.params != self.params || other.party != self.party {
            return Err(Error::MalformedKey(
                "cannot append mismatched key batches".into(),
            ));
        }
        if self.is_empty() {
            *self = other;
            return Ok(());
        }
        let (a, b) = (self.len(), other.len());
        let n = self.params.n_bits as usize;
        let mut cw = Vec::with_capacity(n * (a + b));
        let mut leaf = Vec::with_capacity((n + 1) * (a + b));
        for l in 0..n {
            cw.extend_from_slice(&self.cw[l * a..(l + 1) * a]);
            cw.extend_from_slice(&other.cw[l * b..(l + 1) * b]);
        }
        for l in 0..=n {
            leaf.extend_from_slice(&self.cw_leaf[l * a..(l + 1) * a]);
            leaf.extend_from_slice(&other.cw_leaf[l * b..(l + 1) * b]);
        }
        self.alpha.extend(other.alpha);
        self.seeds.extend(other.seeds);
        self.cw = cw;
        self.cw_leaf = leaf;
        Ok(())
    }

    /// Batched evaluation on one public input per key.
    pub fn eval(&self, xs: &[u64]) -> Result<Vec<u64>> {
        check_party(self.party)?;
        let count = self.len();
        if xs.len() != count {
            return Err(Error::ShapeMismatch(vec![count], vec![xs.len()]));
        }
        let p = self.params;
        let n = p.n_bits as usize;
        let blocks = cmp_blocks(p.out_bits);
        let mut seeds = self.seeds.clone();
        let mut bits = vec![self.party as u8; count];
        let mut acc = vec![0u64; count];
        let mut raw = vec![0u128; blocks];
        for level in 0..n {
            let exp = prg::expand_batch(&seeds, blocks)?;
            for e in 0..count {
                for (b, r) in raw.iter_mut().enumerate() {
                    *r = exp[b][e];
                }
                let (next, share) = cmp_eval_level(
                    self.party,
                    &raw,
                    SeedBit {
                        seed: seeds[e],
                        bit: bits[e],
                    },
                    &self.cw[level * count + e],
                    self.cw_leaf[level * count + e],
                    p.alpha_bit(xs[e], level),
                    p.out_bits,
                );
                seeds[e] = next.seed;
                bits[e] = next.bit;
                acc[e] = acc[e].wrapping_add(share);
            }
        }
        let m = mask(p.out_bits);
        Ok((0..count)
            .map(|e| {
                let last = output_share(
                    self.party,
                    bits[e],
                    self.cw_leaf[n * count + e],
                    low_bits(seeds[e], p.out_bits),
                    p.out_bits,
                );
                acc[e].wrapping_add(last) & m
            })
            .collect())
    }
}

/// Generates `count` fresh comparison key pairs. Tapes are returned only
/// when `keep_tapes` is set.
pub fn gen_cmp_batch<R: Rng + ?Sized>(
    params: FssParams,
    count: usize,
    first_id: u64,
    keep_tapes: bool,
    rng: &mut R,
) -> Result<([CmpKeyBatch; 2], Option<Vec<KeygenTape>>)> {
    let tapes: Vec<_> = (0..count)
        .map(|_| KeygenTape::sample(params, rng))
        .collect();
    let batches = keygen_cmp_batch(params, &tapes, first_id)?;
    Ok((batches, keep_tapes.then_some(tapes)))
}

/// Generates `count` fresh equality key pairs.
pub fn gen_eq_batch<R: Rng + ?Sized>(
    params: FssParams,
    count: usize,
    first_id: u64,
    keep_tapes: bool,
    rng: &mut R,
) -> Result<([EqKeyBatch; 2], Option<Vec<KeygenTape>>)> {
    let tapes: Vec<_> = (0..count)
        .map(|_| KeygenTape::sample(params, rng))
        .collect();
    let batches = keygen_eq_batch(params, &tapes, first_id)?;
    Ok((batches, keep_tapes.then_some(tapes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn reconstruct(a: u64, b: u64, bits: u32) -> u64 {
        a.wrapping_add(b) & mask(bits)
    }

    #[test]
    fn eq_accepts_alpha_only() {
        let mut r = rng(1);
        let (alpha, k0, k1) = keygen_eq(8, &mut r).unwrap();
        let mut total = 0u64;
        for x in 0..256u64 {
            let v = reconstruct(eval_eq(0, &k0, x).unwrap(), eval_eq(1, &k1, x).unwrap(), 8);
            assert_eq!(v, (x == alpha) as u64, "x={x} alpha={alpha}");
            total += v;
        }
        assert_eq!(total, 1);
        let flipped = alpha ^ 0x80;
        let v = reconstruct(
            eval_eq(0, &k0, flipped).unwrap(),
            eval_eq(1, &k1, flipped).unwrap(),
            8,
        );
        assert_eq!(v, 0);
    }

    #[test]
    fn cmp_examples() {
        let params = FssParams::uniform(8).unwrap();
        let mut tape = KeygenTape::sample(params, &mut rng(2));
        tape.alpha = 7;
        let (k0, k1) = keygen_cmp_from_tape(params, &tape).unwrap();
        let ev = |x| {
            reconstruct(
                eval_cmp(0, &k0, x).unwrap(),
                eval_cmp(1, &k1, x).unwrap(),
                8,
            )
        };
        assert_eq!(ev(3), 1);
        assert_eq!(ev(200), 0);
        assert_eq!(ev(7), 1);
        assert_eq!(ev(8), 0);
        assert_eq!(ev(0), 1);
    }

    #[test]
    fn cmp_at_alpha_uses_only_final_leaf() {
        let mut r = rng(3);
        for _ in 0..20 {
            let (alpha, k0, k1) = keygen_cmp(8, &mut r).unwrap();
            let l0 = eval_cmp_levels(0, &k0, alpha).unwrap();
            let l1 = eval_cmp_levels(1, &k1, alpha).unwrap();
            let sums: Vec<u64> = l0
                .iter()
                .zip(&l1)
                .map(|(&a, &b)| reconstruct(a, b, 8))
                .collect();
            assert!(sums[..8].iter().all(|&s| s == 0));
            assert_eq!(sums[8], 1);
        }
    }

    #[test]
    fn at_most_one_level_fires() {
        let mut r = rng(4);
        for _ in 0..8 {
            let (alpha, k0, k1) = keygen_cmp(8, &mut r).unwrap();
            for x in 0..256u64 {
                let l0 = eval_cmp_levels(0, &k0, x).unwrap();
                let l1 = eval_cmp_levels(1, &k1, x).unwrap();
                let sums: Vec<u64> = l0
                    .iter()
                    .zip(&l1)
                    .map(|(&a, &b)| reconstruct(a, b, 8))
                    .collect();
                assert!(sums.iter().all(|&s| s <= 1));
                let fired: u64 = sums.iter().sum();
                assert_eq!(fired, (x <= alpha) as u64);
                // the firing level is the first bit where x and alpha differ
                if x < alpha {
                    let level = (x ^ alpha).leading_zeros() as usize - 56;
                    assert_eq!(sums[level], 1);
                }
            }
        }
    }

    #[test]
    fn wide_outputs_for_narrow_inputs() {
        let params = FssParams::new(12, 64).unwrap();
        let mut r = rng(5);
        let tapes: Vec<_> = (0..16)
            .map(|_| KeygenTape::sample(params, &mut r))
            .collect();
        let [b0, b1] = keygen_cmp_batch(params, &tapes, 0).unwrap();
        let [e0, e1] = keygen_eq_batch(params, &tapes, 0).unwrap();
        for x in [0u64, 1, 2047, 2048, 4095] {
            let xs = vec![x; 16];
            let c: Vec<u64> = b0
                .eval(&xs)
                .unwrap()
                .iter()
                .zip(b1.eval(&xs).unwrap())
                .map(|(a, b)| a.wrapping_add(b))
                .collect();
            let q: Vec<u64> = e0
                .eval(&xs)
                .unwrap()
                .iter()
                .zip(e1.eval(&xs).unwrap())
                .map(|(a, b)| a.wrapping_add(b))
                .collect();
            for (e, t) in tapes.iter().enumerate() {
                assert_eq!(c[e], (x <= t.alpha) as u64);
                assert_eq!(q[e], (x == t.alpha) as u64);
            }
        }
    }

    #[test]
    fn batch_eval_matches_single() {
        let params = FssParams::uniform(16).unwrap();
        let mut r = rng(6);
        let ([b0, b1], tapes) = gen_cmp_batch(params, 40, 0, true, &mut r).unwrap();
        let tapes = tapes.unwrap();
        let xs: Vec<u64> = (0..40).map(|_| r.gen::<u64>() & 0xffff).collect();
        let v0 = b0.eval(&xs).unwrap();
        let v1 = b1.eval(&xs).unwrap();
        for e in 0..40 {
            assert_eq!(v0[e], eval_cmp(0, &b0.key(e), xs[e]).unwrap());
            assert_eq!(v1[e], eval_cmp(1, &b1.key(e), xs[e]).unwrap());
            assert_eq!(
                reconstruct(v0[e], v1[e], 16),
                (xs[e] <= tapes[e].alpha) as u64
            );
        }
    }

    #[test]
    fn keygen_is_deterministic_given_rng() {
        let a = keygen_cmp(16, &mut rng(7)).unwrap();
        let b = keygen_cmp(16, &mut rng(7)).unwrap();
        assert_eq!(a, b);
        let a = keygen_eq(16, &mut rng(7)).unwrap();
        let b = keygen_eq(16, &mut rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn take_front_and_append_preserve_keys() {
        let params = FssParams::uniform(10).unwrap();
        let ([mut b0, _], _) = gen_cmp_batch(params, 10, 100, false, &mut rng(8)).unwrap();
        let original: Vec<CmpKey> = (0..10).map(|e| b0.key(e)).collect();
        let front = b0.take_front(3).unwrap();
        assert_eq!(front.first_id, 100);
        assert_eq!(b0.first_id, 103);
        assert_eq!(
            (0..3).map(|e| front.key(e)).collect::<Vec<_>>(),
            original[..3]
        );
        assert_eq!((0..7).map(|e| b0.key(e)).collect::<Vec<_>>(), original[3..]);
        assert!(b0.take_front(8).is_err());
        let mut joined = front.clone();
        joined.append(b0).unwrap();
        assert_eq!((0..10).map(|e| joined.key(e)).collect::<Vec<_>>(), original);
        let rebuilt = CmpKeyBatch::from_keys(&original, 0, 100).unwrap();
        assert_eq!(rebuilt, joined);
    }

    #[test]
    fn malformed_keys_rejected() {
        let (_, mut k0, _) = keygen_cmp(8, &mut rng(9)).unwrap();
        k0.cw.pop();
        assert!(matches!(eval_cmp(0, &k0, 1), Err(Error::MalformedKey(_))));
        let (_, mut e0, _) = keygen_eq(8, &mut rng(9)).unwrap();
        e0.cw.truncate(3);
        assert!(matches!(eval_eq(0, &e0, 1), Err(Error::MalformedKey(_))));
        assert!(FssParams::uniform(3).is_err());
        assert!(FssParams::uniform(65).is_err());
    }
}
