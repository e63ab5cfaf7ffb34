//! Tensors over the ring of integers modulo `2^n`.
//!
//! Elements are stored as `u64` words whatever the width and are masked
//! after every operation, so the same kernels serve every `n` in `4..=64`.

use crate::error::{Error, Result};

pub const MIN_BITS: u32 = 4;
pub const MAX_BITS: u32 = 64;

/// Bit mask selecting the low `bits` bits of a word.
#[inline]
pub fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Two's-complement reading of `v` as an element of `Z_2^bits`.
#[inline]
pub fn to_signed(v: u64, bits: u32) -> i64 {
    let shift = 64 - bits.min(64);
    ((v << shift) as i64) >> shift
}

/// Ring element for a signed integer, reduced modulo `2^bits`.
#[inline]
pub fn from_signed(v: i64, bits: u32) -> u64 {
    (v as u64) & mask(bits)
}

pub(crate) fn check_bits(bits: u32) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::UnsupportedBits(bits))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingOp {
    Add,
    Sub,
    Mul,
    Neg,
}

/// A shaped array of elements of `Z_2^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RingTensor {
    data: Vec<u64>,
    shape: Vec<usize>,
    bits: u32,
}

impl RingTensor {
    /// Builds a tensor, reducing every element modulo `2^bits`.
    pub fn new(data: Vec<u64>, shape: Vec<usize>, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(shape, vec![data.len()]));
        }
        let m = mask(bits);
        let data = data.into_iter().map(|v| v & m).collect();
        Ok(Self { data, shape, bits })
    }

    pub fn from_vec(data: Vec<u64>, bits: u32) -> Result<Self> {
        let len = data.len();
        Self::new(data, vec![len], bits)
    }

    pub fn from_signed(values: &[i64], shape: Vec<usize>, bits: u32) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as u64).collect(), shape, bits)
    }

    pub fn zeros(shape: Vec<usize>, bits: u32) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(vec![0; len], shape, bits)
    }

    /// Same shape and width as `self`, filled from `f(index)`.
    pub fn map_indexed(&self, mut f: impl FnMut(usize, u64) -> u64) -> Self {
        let m = mask(self.bits);
        Self {
            data: self
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i, v) & m)
                .collect(),
            shape: self.shape.clone(),
            bits: self.bits,
        }
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch(self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Reduces every element into a narrower ring `Z_2^bits`.
    pub fn reduce_to(&self, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        if bits > self.bits {
            return Err(Error::BitsMismatch(self.bits, bits));
        }
        let m = mask(bits);
        Ok(Self {
            data: self.data.iter().map(|v| v & m).collect(),
            shape: self.shape.clone(),
            bits,
        })
    }

    /// Elementwise ring arithmetic. `b` must have the same shape, or hold a
    /// single element that is broadcast. `Neg` ignores `b`.
    pub fn arith(op: RingOp, a: &RingTensor, b: Option<&RingTensor>) -> Result<RingTensor> {
        if op == RingOp::Neg {
            return Ok(a.neg());
        }
        let b = b.ok_or_else(|| Error::InvalidArgument(format!("{op:?} needs two operands")))?;
        if a.bits != b.bits {
            return Err(Error::BitsMismatch(a.bits, b.bits));
        }
        let f: fn(u64, u64) -> u64 = match op {
            RingOp::Add => u64::wrapping_add,
            RingOp::Sub => u64::wrapping_sub,
            RingOp::Mul => u64::wrapping_mul,
            RingOp::Neg => unreachable!(),
        };
        let m = mask(a.bits);
        let data = if a.shape == b.shape {
            a.data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| f(x, y) & m)
                .collect()
        } else if b.data.len() == 1 {
            let y = b.data[0];
            a.data.iter().map(|&x| f(x, y) & m).collect()
        } else {
            return Err(Error::ShapeMismatch(a.shape.clone(), b.shape.clone()));
        };
        Ok(RingTensor {
            data,
            shape: a.shape.clone(),
            bits: a.bits,
        })
    }

    pub fn add(&self, other: &RingTensor) -> Result<RingTensor> {
        Self::arith(RingOp::Add, self, Some(other))
    }

    pub fn sub(&self, other: &RingTensor) -> Result<RingTensor> {
        Self::arith(RingOp::Sub, self, Some(other))
    }

    pub fn mul(&self, other: &RingTensor) -> Result<RingTensor> {
        Self::arith(RingOp::Mul, self, Some(other))
    }

    pub fn neg(&self) -> RingTensor {
        let m = mask(self.bits);
        RingTensor {
            data: self.data.iter().map(|&x| x.wrapping_neg() & m).collect(),
            shape: self.shape.clone(),
            bits: self.bits,
        }
    }

    pub fn scale(&self, k: u64) -> RingTensor {
        self.map_indexed(|_, v| v.wrapping_mul(k))
    }

    pub fn add_scalar(&self, k: u64) -> RingTensor {
        self.map_indexed(|_, v| v.wrapping_add(k))
    }

    /// Bit planes of every element, most significant bit first.
    pub fn bit_decompose(&self) -> Vec<RingTensor> {
        (0..self.bits)
            .map(|i| {
                let shift = self.bits - 1 - i;
                RingTensor {
                    data: self.data.iter().map(|&v| (v >> shift) & 1).collect(),
                    shape: self.shape.clone(),
                    bits: self.bits,
                }
            })
            .collect()
    }

    /// Inverse of [`bit_decompose`](Self::bit_decompose).
    pub fn recompose(planes: &[RingTensor]) -> Result<RingTensor> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no bit planes".into()))?;
        let bits = planes.len() as u32;
        let mut out = vec![0u64; first.len()];
        for plane in planes {
            if plane.shape != first.shape {
                return Err(Error::ShapeMismatch(
                    first.shape.clone(),
                    plane.shape.clone(),
                ));
            }
            for (o, &b) in out.iter_mut().zip(&plane.data) {
                *o = (*o << 1) | (b & 1);
            }
        }
        RingTensor::new(out, first.shape.clone(), bits)
    }

    pub fn signed_values(&self) -> Vec<i64> {
        self.data.iter().map(|&v| to_signed(v, self.bits)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[u64], bits: u32) -> RingTensor {
        RingTensor::from_vec(v.to_vec(), bits).unwrap()
    }

    #[test]
    fn arith_examples() {
        assert_eq!(t(&[250], 8).add(&t(&[10], 8)).unwrap().data(), &[4]);
        assert_eq!(t(&[1], 8).neg().data(), &[255]);
        assert_eq!(t(&[16], 8).mul(&t(&[16], 8)).unwrap().data(), &[0]);
        assert_eq!(
            t(&[3, 4, 5], 8).sub(&t(&[4], 8)).unwrap().data(),
            &[255, 0, 1]
        );
    }

    #[test]
    fn arith_errors() {
        assert!(matches!(
            t(&[1, 2], 8).add(&t(&[1, 2, 3], 8)),
            Err(Error::ShapeMismatch(..))
        ));
        assert!(matches!(
            t(&[1], 8).add(&t(&[1], 16)),
            Err(Error::BitsMismatch(8, 16))
        ));
        assert!(RingTensor::from_vec(vec![1], 3).is_err());
        assert!(RingTensor::from_vec(vec![1], 65).is_err());
    }

    #[test]
    fn bit_decompose_examples() {
        let planes = |v: u64, bits| -> Vec<u64> {
            t(&[v], bits)
                .bit_decompose()
                .iter()
                .map(|p| p.data()[0])
                .collect()
        };
        assert_eq!(planes(5, 4), vec![0, 1, 0, 1]);
        assert_eq!(planes(0, 4), vec![0, 0, 0, 0]);
        assert_eq!(planes(128, 8), vec![1, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn signed_examples() {
        assert_eq!(t(&[255, 127, 128], 8).signed_values(), vec![-1, 127, -128]);
        assert_eq!(to_signed(u64::MAX, 64), -1);
    }

    #[test]
    fn exhaustive_small_widths() {
        for bits in 4..=10u32 {
            let all: Vec<u64> = (0..1u64 << bits).collect();
            let a = t(&all, bits);
            assert_eq!(RingTensor::recompose(&a.bit_decompose()).unwrap(), a);
            assert!(a.add(&a.neg()).unwrap().data().iter().all(|&v| v == 0));
            let lo = -(1i64 << (bits - 1));
            let hi = (1i64 << (bits - 1)) - 1;
            for v in lo..=hi {
                assert_eq!(to_signed(from_signed(v, bits), bits), v);
            }
        }
    }

    proptest! {
        #[test]
        fn recompose_roundtrip(bits in 11u32..=64, raw in prop::collection::vec(any::<u64>(), 1..32)) {
            let a = RingTensor::from_vec(raw, bits).unwrap();
            prop_assert_eq!(RingTensor::recompose(&a.bit_decompose()).unwrap(), a);
        }

        #[test]
        fn add_neg_is_zero(bits in 4u32..=64, raw in prop::collection::vec(any::<u64>(), 1..32)) {
            let a = RingTensor::from_vec(raw, bits).unwrap();
            prop_assert!(a.add(&a.neg()).unwrap().data().iter().all(|&v| v == 0));
        }

        #[test]
        fn signed_roundtrip(bits in 11u32..=64, v in any::<i64>()) {
            let half = if bits == 64 { i64::MAX } else { (1i64 << (bits - 1)) - 1 };
            let v = v.clamp(-half - 1, half);
            prop_assert_eq!(to_signed(from_signed(v, bits), bits), v);
        }
    }
}
