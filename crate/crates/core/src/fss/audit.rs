//! Offline audit of dealer output against recorded keygen tapes.

use super::{keygen_cmp_from_tape, keygen_eq_from_tape, CmpKey, EqKey, KeygenTape};
use crate::error::{Error, Result};
use crate::ring::mask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyPair {
    Eq(EqKey, EqKey),
    Cmp(CmpKey, CmpKey),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditSample {
    pub pair: KeyPair,
    pub tape: KeygenTape,
}

fn check(sample: &AuditSample) -> bool {
    let t = &sample.tape;
    match &sample.pair {
        KeyPair::Eq(k0, k1) => {
            let m = mask(k0.params.n_bits);
            k0.params == k1.params
                && k0.alpha_share.wrapping_add(k1.alpha_share) & m == t.alpha
                && keygen_eq_from_tape(k0.params, t).is_ok_and(|(r0, r1)| r0 == *k0 && r1 == *k1)
        }
        KeyPair::Cmp(k0, k1) => {
            let m = mask(k0.params.n_bits);
            k0.params == k1.params
                && k0.alpha_share.wrapping_add(k1.alpha_share) & m == t.alpha
                && keygen_cmp_from_tape(k0.params, t).is_ok_and(|(r0, r1)| r0 == *k0 && r1 == *k1)
        }
    }
}

/// Regenerates every sampled pair from its tape and compares it with the
/// issued keys. Fails with the indices of all mismatching samples.
pub fn audit_keys(samples: &[AuditSample]) -> Result<()> {
    let bad: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| !check(s))
        .map(|(i, _)| i)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::AuditFailed(bad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fss::{gen_cmp_batch, gen_eq_batch, FssParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn honest_keys_pass_and_tampering_is_located() {
        let params = FssParams::uniform(16).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let ([c0, c1], tapes) = gen_cmp_batch(params, 6, 0, true, &mut rng).unwrap();
        let tapes = tapes.unwrap();
        let mut samples: Vec<AuditSample> = (0..6)
            .map(|e| AuditSample {
                pair: KeyPair::Cmp(c0.key(e), c1.key(e)),
                tape: tapes[e],
            })
            .collect();
        let ([e0, e1], etapes) = gen_eq_batch(params, 2, 0, true, &mut rng).unwrap();
        let etapes = etapes.unwrap();
        samples.extend((0..2).map(|e| AuditSample {
            pair: KeyPair::Eq(e0.key(e), e1.key(e)),
            tape: etapes[e],
        }));
        audit_keys(&samples).unwrap();

        if let KeyPair::Cmp(k0, _) = &mut samples[2].pair {
            k0.cw[5].sigma ^= 1;
        }
        if let KeyPair::Eq(_, k1) = &mut samples[7].pair {
            k1.cw_final ^= 4;
        }
        samples[4].tape.alpha ^= 1;
        match audit_keys(&samples) {
            Err(Error::AuditFailed(idx)) => assert_eq!(idx, vec![2, 4, 7]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
