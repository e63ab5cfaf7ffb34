//! Two-party additive secret sharing over `Z_2^n` with fixed-point encoding.
//!
//! A real `v` is encoded as `round(v * 10^p)` in two's complement. Shares
//! carry the precision `p` so mismatched operands are caught. Products of
//! shares carry precision `2p` until truncated.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::ring::{mask, to_signed, RingTensor};

static RECONSTRUCTIONS: AtomicU64 = AtomicU64::new(0);

/// Number of [`reconstruct`] calls made by this process.
pub fn reconstruction_count() -> u64 {
    RECONSTRUCTIONS.load(Ordering::SeqCst)
}

/// Fixed-point scale `10^p`.
pub fn scale(precision: u32) -> u64 {
    10u64.pow(precision)
}

/// Encodes reals as ring elements at `precision` decimal digits.
pub fn encode(values: &[f64], shape: Vec<usize>, bits: u32, precision: u32) -> Result<RingTensor> {
    let s = scale(precision) as f64;
    let limit = if bits >= 64 {
        2f64.powi(63)
    } else {
        2f64.powi(bits as i32 - 1)
    };
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let r = (v * s).round();
        if !r.is_finite() || r >= limit || r < -limit {
            return Err(Error::FixedPointOverflow {
                value: v,
                bits,
                precision,
            });
        }
        out.push(r as i64 as u64);
    }
    RingTensor::new(out, shape, bits)
}

pub fn decode(t: &RingTensor, precision: u32) -> Vec<f64> {
    let s = scale(precision) as f64;
    t.data()
        .iter()
        .map(|&v| to_signed(v, t.bits()) as f64 / s)
        .collect()
}

/// Splits a tensor into two uniformly random additive shares.
pub fn share_tensor<R: Rng + ?Sized>(t: &RingTensor, rng: &mut R) -> [RingTensor; 2] {
    let m = mask(t.bits());
    let s0 = t.map_indexed(|_, _| rng.gen::<u64>() & m);
    let s1 = t.sub(&s0).expect("same shape and width");
    [s0, s1]
}

/// Plaintext reconstruction from both shares. Every call is counted.
pub fn reconstruct(a: &RingTensor, b: &RingTensor) -> Result<RingTensor> {
    RECONSTRUCTIONS.fetch_add(1, Ordering::SeqCst);
    a.add(b)
}

/// Local truncation of one share by a public divisor `d`.
///
/// Party 0 floor-divides its share read as unsigned; party 1 negates,
/// floor-divides and negates. The sum equals `floor(x / d)` up to one unit,
/// except with probability about `|x| / 2^n` when the shares wrap.
pub fn truncate_share(party: usize, share: &RingTensor, d: u64) -> RingTensor {
    if d == 1 {
        return share.clone();
    }
    let m = mask(share.bits());
    match party {
        0 => share.map_indexed(|_, v| (v & m) / d),
        _ => share.map_indexed(|_, v| ((v.wrapping_neg() & m) / d).wrapping_neg()),
    }
}

/// One party's share of a fixed-point tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdditiveShare {
    pub party: usize,
    pub value: RingTensor,
    pub precision: u32,
}

impl AdditiveShare {
    pub fn new(party: usize, value: RingTensor, precision: u32) -> Result<Self> {
        if party > 1 {
            return Err(Error::InvalidArgument(format!(
                "party must be 0 or 1, got {party}"
            )));
        }
        Ok(Self {
            party,
            value,
            precision,
        })
    }

    /// Encodes and shares plaintext values, returning both parties' shares.
    pub fn share_plain<R: Rng + ?Sized>(
        values: &[f64],
        shape: Vec<usize>,
        bits: u32,
        precision: u32,
        rng: &mut R,
    ) -> Result<[AdditiveShare; 2]> {
        let t = encode(values, shape, bits, precision)?;
        Ok(Self::share_ring(&t, precision, rng))
    }

    pub fn share_ring<R: Rng + ?Sized>(
        t: &RingTensor,
        precision: u32,
        rng: &mut R,
    ) -> [AdditiveShare; 2] {
        let [a, b] = share_tensor(t, rng);
        [
            AdditiveShare {
                party: 0,
                value: a,
                precision,
            },
            AdditiveShare {
                party: 1,
                value: b,
                precision,
            },
        ]
    }

    /// Reconstructs and decodes both parties' shares.
    pub fn reconstruct_plain(a: &AdditiveShare, b: &AdditiveShare) -> Result<Vec<f64>> {
        Ok(decode(&Self::reconstruct_ring(a, b)?, a.precision))
    }

    pub fn reconstruct_ring(a: &AdditiveShare, b: &AdditiveShare) -> Result<RingTensor> {
        if a.precision != b.precision {
            return Err(Error::PrecisionMismatch(a.precision, b.precision));
        }
        if a.party == b.party {
            return Err(Error::InvalidArgument(
                "both shares belong to the same party".into(),
            ));
        }
        reconstruct(&a.value, &b.value)
    }

    /// Party 0's share of a public constant, party 1's share of zero.
    pub fn from_public(party: usize, t: &RingTensor, precision: u32) -> Result<Self> {
        let value = if party == 0 {
            t.clone()
        } else {
            RingTensor::zeros(t.shape().to_vec(), t.bits())?
        };
        Self::new(party, value, precision)
    }

    pub fn zeros(party: usize, shape: Vec<usize>, bits: u32, precision: u32) -> Result<Self> {
        Self::new(party, RingTensor::zeros(shape, bits)?, precision)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn bits(&self) -> u32 {
        self.value.bits()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    fn same_layout(&self, other: &AdditiveShare) -> Result<()> {
        if self.precision != other.precision {
            return Err(Error::PrecisionMismatch(self.precision, other.precision));
        }
        if self.party != other.party {
            return Err(Error::InvalidArgument("shares of different parties".into()));
        }
        Ok(())
    }

    fn with_value(&self, value: RingTensor) -> Self {
        Self {
            party: self.party,
            value,
            precision: self.precision,
        }
    }

    pub fn add(&self, other: &AdditiveShare) -> Result<Self> {
        self.same_layout(other)?;
        Ok(self.with_value(self.value.add(&other.value)?))
    }

    pub fn sub(&self, other: &AdditiveShare) -> Result<Self> {
        self.same_layout(other)?;
        Ok(self.with_value(self.value.sub(&other.value)?))
    }

    pub fn neg(&self) -> Self {
        self.with_value(self.value.neg())
    }

    /// Adds a public ring tensor (same shape, or a single broadcast element)
    /// encoded at this share's precision. Only party 0 changes its share.
    pub fn add_public(&self, t: &RingTensor) -> Result<Self> {
        if self.party == 0 {
            Ok(self.with_value(self.value.add(t)?))
        } else {
            if t.bits() != self.bits() {
                return Err(Error::BitsMismatch(self.bits(), t.bits()));
            }
            Ok(self.clone())
        }
    }

    /// Adds a public integer (already scaled by the caller) to every element.
    pub fn add_scalar(&self, k: i64) -> Self {
        if self.party == 0 {
            self.with_value(self.value.add_scalar(k as u64))
        } else {
            self.clone()
        }
    }

    /// Multiplies by a public integer. Precision is unchanged.
    pub fn scale_int(&self, k: i64) -> Self {
        self.with_value(self.value.scale(k as u64))
    }

    /// Elementwise product with a public tensor at precision `q`.
    /// The result has precision `p + q` and needs truncation.
    pub fn mul_public(&self, t: &RingTensor, q: u32) -> Result<Self> {
        Ok(Self {
            party: self.party,
            value: self.value.mul(t)?,
            precision: self.precision + q,
        })
    }

    /// Divides by `10^digits` locally, lowering the precision.
    pub fn truncate(&self, digits: u32) -> Result<Self> {
        if digits > self.precision {
            return Err(Error::PrecisionMismatch(self.precision, digits));
        }
        Ok(Self {
            party: self.party,
            value: truncate_share(self.party, &self.value, scale(digits)),
            precision: self.precision - digits,
        })
    }

    /// Divides by a public integer locally, keeping the precision.
    pub fn div_public(&self, d: u64) -> Self {
        self.with_value(truncate_share(self.party, &self.value, d))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Ok(self.with_value(self.value.clone().reshape(shape)?))
    }

    /// Reinterprets the share at a new precision without touching the data.
    pub fn with_precision(mut self, precision: u32) -> Self {
        self.precision = precision;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn encode_examples() {
        let t = encode(&[1.5, -0.25, 0.0], vec![3], 32, 3).unwrap();
        assert_eq!(t.signed_values(), vec![1500, -250, 0]);
        assert_eq!(decode(&t, 3), vec![1.5, -0.25, 0.0]);
        assert!(matches!(
            encode(&[3.0e6], vec![1], 32, 3),
            Err(Error::FixedPointOverflow { .. })
        ));
        assert!(encode(&[f64::NAN], vec![1], 32, 3).is_err());
    }

    #[test]
    fn share_and_reconstruct() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let before = reconstruction_count();
        let [a, b] = AdditiveShare::share_plain(&[1.25, -3.5], vec![2], 32, 3, &mut rng).unwrap();
        assert_eq!(
            AdditiveShare::reconstruct_plain(&a, &b).unwrap(),
            vec![1.25, -3.5]
        );
        assert!(reconstruction_count() > before);
        let c = a.add(&a).unwrap();
        let d = b.add(&b).unwrap();
        assert_eq!(
            AdditiveShare::reconstruct_plain(&c, &d).unwrap(),
            vec![2.5, -7.0]
        );
        let pa = a.add_scalar(1000);
        let pb = b.add_scalar(1000);
        assert_eq!(
            AdditiveShare::reconstruct_plain(&pa, &pb).unwrap(),
            vec![2.25, -2.5]
        );
    }

    #[test]
    fn precision_mismatch_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let [a, _] = AdditiveShare::share_plain(&[1.0], vec![1], 32, 3, &mut rng).unwrap();
        let [c, _] = AdditiveShare::share_plain(&[1.0], vec![1], 32, 4, &mut rng).unwrap();
        assert!(matches!(a.add(&c), Err(Error::PrecisionMismatch(3, 4))));
        assert!(a.truncate(4).is_err());
    }

    #[test]
    fn truncation_small_example() {
        // 12.345 * 2.0 at p = 3 before truncation is 24690000 at precision 6
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let t = RingTensor::from_signed(&[24_690_000, -24_690_000], vec![2], 64).unwrap();
        let [a, b] = AdditiveShare::share_ring(&t, 6, &mut rng);
        let v = AdditiveShare::reconstruct_plain(&a.truncate(3).unwrap(), &b.truncate(3).unwrap())
            .unwrap();
        assert!((v[0] - 24.69).abs() <= 0.001 + 1e-12);
        assert!((v[1] + 24.69).abs() <= 0.001 + 1e-12);
    }

    proptest! {
        #[test]
        fn truncation_within_one_unit(x in -(1i64 << 40)..(1i64 << 40), d in 1u64..100_000, seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let t = RingTensor::from_signed(&[x], vec![1], 64).unwrap();
            let [a, b] = share_tensor(&t, &mut rng);
            let y = truncate_share(0, &a, d).add(&truncate_share(1, &b, d)).unwrap();
            let got = y.signed_values()[0];
            let want = x.div_euclid(d as i64);
            // a wrap can only happen with probability about |x| / 2^64
            prop_assert!((got - want).abs() <= 1, "x={} d={} got={} want={}", x, d, got, want);
        }

        #[test]
        fn linear_ops_commute_with_reconstruction(
            xs in prop::collection::vec(-1.0e5f64..1.0e5, 1..16),
            k in -50i64..50,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let shape = vec![xs.len()];
            let [a, b] = AdditiveShare::share_plain(&xs, shape.clone(), 64, 3, &mut rng).unwrap();
            let want: Vec<i64> = encode(&xs, shape, 64, 3).unwrap().signed_values().iter().map(|v| v * k).collect();
            let got = AdditiveShare::reconstruct_ring(&a.scale_int(k), &b.scale_int(k)).unwrap().signed_values();
            prop_assert_eq!(got, want);
        }
    }
}
