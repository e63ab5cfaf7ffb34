//! Online comparison and equality on secret-shared inputs.
//!
//! Each party adds its share of the key's `alpha` to its share of `y`
//! (reduced to the `k`-bit comparison domain) and the masked sum
//! `x = y + alpha` is opened in one round. Evaluating the keys on `x` then
//! yields shares of the result in the input's ring.

use super::FssParams;
use crate::error::{Error, Result};
use crate::ring::{mask, RingTensor};
use crate::runtime::{Session, Tag};

fn masked_open(sess: &mut Session, y: &RingTensor, k: u32, alpha: &[u64]) -> Result<Vec<u64>> {
    if k > y.bits() {
        return Err(Error::BitsMismatch(y.bits(), k));
    }
    let m = mask(k);
    let x = RingTensor::new(
        y.data()
            .iter()
            .zip(alpha)
            .map(|(&v, &a)| v.wrapping_add(a) & m)
            .collect(),
        y.shape().to_vec(),
        k,
    )?;
    Ok(sess.open(Tag::MaskedShare, &[&x])?.remove(0).into_data())
}

/// Shares of `1[y <= 0]` in `y`'s ring, comparing in `Z_2^k`. One round.
///
/// Correct unless `y + alpha` wraps around `2^k`, which happens with
/// probability about `|y| / 2^k`.
pub fn sign_protocol(sess: &mut Session, y: &RingTensor, k: u32) -> Result<RingTensor> {
    let params = FssParams::new(k, y.bits())?;
    let keys = sess.take_cmp(params, y.len())?;
    let x = masked_open(sess, y, k, &keys.alpha)?;
    RingTensor::new(keys.eval(&x)?, y.shape().to_vec(), y.bits())
}

/// Shares of `1[y == 0 mod 2^k]` in `y`'s ring. One round, exact.
pub fn eq_protocol(sess: &mut Session, y: &RingTensor, k: u32) -> Result<RingTensor> {
    let params = FssParams::new(k, y.bits())?;
    let keys = sess.take_eq(params, y.len())?;
    let x = masked_open(sess, y, k, &keys.alpha)?;
    RingTensor::new(keys.eval(&x)?, y.shape().to_vec(), y.bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::run_pair;
    use crate::sharing::{reconstruct, share_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sign_and_eq_on_shares() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let vals: Vec<i64> = vec![-5, -1, 0, 1, 2, 1000, -1000, 0];
        let y = RingTensor::from_signed(&vals, vec![2, 4], 64).unwrap();
        let shares = share_tensor(&y, &mut rng);
        let mut s = crate::runtime::Session::local_pair(3);
        let (a, b) = run_pair(&mut s, |sess| {
            let mine = &shares[sess.party()];
            let sign = sign_protocol(sess, mine, 24)?;
            let eq = eq_protocol(sess, mine, 24)?;
            Ok((sign, eq))
        })
        .unwrap();
        let sign = reconstruct(&a.0, &b.0).unwrap();
        let eq = reconstruct(&a.1, &b.1).unwrap();
        let want_sign: Vec<u64> = vals.iter().map(|&v| (v <= 0) as u64).collect();
        let want_eq: Vec<u64> = vals.iter().map(|&v| (v == 0) as u64).collect();
        assert_eq!(sign.data(), want_sign.as_slice());
        assert_eq!(eq.data(), want_eq.as_slice());
        assert_eq!(sign.shape(), &[2, 4]);
        for sess in &s {
            assert_eq!(sess.ledger().rounds(), 2);
            assert_eq!(sess.ledger().reveals, 0);
        }
    }
}
