//! Length-extending PRG from fixed-key AES in Matyas–Meyer–Oseas mode.
//!
//! `G(s) = AES_k1(s) ^ s || AES_k2(s) ^ s || ...` where the keys are public
//! constants: `k_i` is the byte run `16(i-1) .. 16i`. Blocks are read and
//! written as little-endian `u128`. The bit layout of the sliced fields is
//! documented in `LAYOUT.md`.

use std::sync::OnceLock;

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;

use crate::error::{Error, Result};
use crate::ring::mask;

/// Security parameter: seeds are 127-bit strings.
pub const LAMBDA: u32 = 127;
pub const SEED_MASK: u128 = (1u128 << LAMBDA) - 1;
pub const MAX_BLOCKS: usize = 4;

/// A 127-bit PRG seed held in a 128-bit block whose top bit is clear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(u128);

impl Seed {
    /// Clears the top bit of `raw`.
    pub fn new(raw: u128) -> Self {
        Seed(raw & SEED_MASK)
    }

    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        Seed::new(rng.gen())
    }

    pub fn value(self) -> u128 {
        self.0
    }

    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Seed::new(u128::from_le_bytes(bytes))
    }
}

struct Ciphers([Aes128; MAX_BLOCKS]);

fn ciphers() -> &'static Ciphers {
    static CIPHERS: OnceLock<Ciphers> = OnceLock::new();
    CIPHERS.get_or_init(|| {
        Ciphers(std::array::from_fn(|i| {
            let key: [u8; 16] = std::array::from_fn(|b| (16 * i + b) as u8);
            Aes128::new(&GenericArray::from(key))
        }))
    })
}

/// The fixed AES key for expansion block `index` (0-based).
pub fn block_key(index: usize) -> [u8; 16] {
    std::array::from_fn(|b| (16 * index + b) as u8)
}

fn check_blocks(out_blocks: usize) -> Result<()> {
    if (2..=MAX_BLOCKS).contains(&out_blocks) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "PRG supports 2..={MAX_BLOCKS} output blocks, got {out_blocks}"
        )))
    }
}

/// Expands one seed into `out_blocks` 128-bit blocks.
pub fn expand(seed: Seed, out_blocks: usize) -> Result<Vec<u128>> {
    check_blocks(out_blocks)?;
    let input = GenericArray::from(seed.to_bytes());
    Ok(ciphers().0[..out_blocks]
        .iter()
        .map(|aes| {
            let mut block = input;
            aes.encrypt_block(&mut block);
            u128::from_le_bytes(block.into()) ^ seed.0
        })
        .collect())
}

/// Expands many seeds at once. Output is block-major: `out[b][i]` is block
/// `b` of `seeds[i]`. Each cipher processes the whole batch in one call so
/// the AES pipeline stays full.
pub fn expand_batch(seeds: &[u128], out_blocks: usize) -> Result<Vec<Vec<u128>>> {
    check_blocks(out_blocks)?;
    let input: Vec<_> = seeds
        .iter()
        .map(|s| GenericArray::from((s & SEED_MASK).to_le_bytes()))
        .collect();
    Ok(ciphers().0[..out_blocks]
        .iter()
        .map(|aes| {
            let mut blocks = input.clone();
            aes.encrypt_blocks(&mut blocks);
            blocks
                .iter()
                .zip(seeds)
                .map(|(b, s)| u128::from_le_bytes((*b).into()) ^ (s & SEED_MASK))
                .collect()
        })
        .collect())
}

/// Blocks needed by the comparison expansion for an output ring of
/// `out_bits`: three while both `(sigma, tau)` fields fit in one block.
pub fn cmp_blocks(out_bits: u32) -> usize {
    if 2 * (out_bits + 1) <= 128 {
        3
    } else {
        4
    }
}

/// Seed/control-bit pair of one half of an expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SeedBit {
    pub seed: u128,
    pub bit: u8,
}

/// `(s_L || t_L, s_R || t_R)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EqExpansion {
    pub halves: [SeedBit; 2],
}

/// `(sigma_L || tau_L, sigma_R || tau_R)` with `sigma` reduced to the output ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LeafExpansion {
    pub sigma: [u64; 2],
    pub tau: [u8; 2],
}

#[inline]
pub(crate) fn split_seed_block(block: u128) -> SeedBit {
    SeedBit {
        seed: block & SEED_MASK,
        bit: (block >> LAMBDA) as u8,
    }
}

#[inline]
pub(crate) fn split_leaf_blocks(blocks: &[u128], out_bits: u32) -> LeafExpansion {
    let m = mask(out_bits) as u128;
    if blocks.len() == 3 {
        let b = blocks[2];
        let w = out_bits as u128;
        LeafExpansion {
            sigma: [(b & m) as u64, ((b >> (w + 1)) & m) as u64],
            tau: [((b >> w) & 1) as u8, ((b >> (2 * w + 1)) & 1) as u8],
        }
    } else {
        let w = out_bits;
        LeafExpansion {
            sigma: [(blocks[2] & m) as u64, (blocks[3] & m) as u64],
            tau: [((blocks[2] >> w) & 1) as u8, ((blocks[3] >> w) & 1) as u8],
        }
    }
}

/// Slices a 256-bit expansion into `(s_L, t_L, s_R, t_R)`.
pub fn slice_eq(raw: &[u128]) -> Result<EqExpansion> {
    if raw.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "equality slicing needs exactly 2 blocks, got {}",
            raw.len()
        )));
    }
    Ok(EqExpansion {
        halves: [split_seed_block(raw[0]), split_seed_block(raw[1])],
    })
}

/// Inverse of [`slice_eq`].
pub fn reassemble_eq(e: &EqExpansion) -> [u128; 2] {
    e.halves.map(|h| h.seed | ((h.bit as u128) << LAMBDA))
}

/// Slices a comparison expansion into its seed half and its leaf half.
pub fn slice_cmp(raw: &[u128], out_bits: u32) -> Result<(EqExpansion, LeafExpansion)> {
    let need = cmp_blocks(out_bits);
    if !(1..=64).contains(&out_bits) {
        return Err(Error::UnsupportedBits(out_bits));
    }
    if raw.len() < need {
        return Err(Error::InvalidArgument(format!(
            "comparison slicing for {out_bits}-bit outputs needs {need} blocks, got {}",
            raw.len()
        )));
    }
    let eq = slice_eq(&raw[..2])?;
    Ok((eq, split_leaf_blocks(&raw[..need], out_bits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn parse_hex(s: &str) -> Vec<u8> {
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    #[test]
    fn pinned_vectors() {
        let text = include_str!("../testdata/prg_vectors.txt");
        let mut checked = 0;
        for line in text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
        {
            let mut parts = line.split_whitespace();
            let seed: [u8; 16] = parse_hex(parts.next().unwrap()).try_into().unwrap();
            let blocks: usize = parts.next().unwrap().parse().unwrap();
            let expected = parse_hex(parts.next().unwrap());
            let got: Vec<u8> = expand(Seed::from_bytes(seed), blocks)
                .unwrap()
                .iter()
                .flat_map(|b| b.to_le_bytes())
                .collect();
            assert_eq!(got, expected, "seed {seed:02x?}");
            checked += 1;
        }
        assert!(checked >= 48);
    }

    #[test]
    fn zero_seed_is_aes_of_zero() {
        let out = expand(Seed::default(), 2).unwrap();
        let known = u128::from_le_bytes(
            parse_hex("c6a13b37878f5b826f4f8162a1c8d879")
                .try_into()
                .unwrap(),
        );
        assert_eq!(out[0], known);
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = Seed::random(&mut rng);
            let two = expand(s, 2).unwrap();
            assert_eq!(two, expand(s, 2).unwrap());
            assert_eq!(&expand(s, 3).unwrap()[..2], &two[..]);
            assert_eq!(&expand(s, 4).unwrap()[..3], &expand(s, 3).unwrap()[..]);
        }
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let seeds: Vec<u128> = (0..37).map(|_| Seed::random(&mut rng).value()).collect();
        let batch = expand_batch(&seeds, 4).unwrap();
        for (i, &s) in seeds.iter().enumerate() {
            let single = expand(Seed::new(s), 4).unwrap();
            for b in 0..4 {
                assert_eq!(batch[b][i], single[b]);
            }
        }
    }

    #[test]
    fn block_count_validated() {
        assert!(expand(Seed::default(), 1).is_err());
        assert!(expand(Seed::default(), 5).is_err());
        assert!(expand_batch(&[0], 0).is_err());
    }

    #[test]
    fn seed_top_bit_cleared() {
        assert_eq!(Seed::new(u128::MAX).value(), SEED_MASK);
        assert_eq!(Seed::from_bytes([0xff; 16]).to_bytes()[15], 0x7f);
    }

    #[test]
    fn slice_eq_layout() {
        assert_eq!(slice_eq(&[0, 0]).unwrap(), EqExpansion::default());
        let probe = slice_eq(&[1u128 << 127, 0]).unwrap();
        assert_eq!(probe.halves[0], SeedBit { seed: 0, bit: 1 });
        assert_eq!(probe.halves[1], SeedBit::default());
        let probe = slice_eq(&[0, 1u128 << 127]).unwrap();
        assert_eq!(probe.halves[1].bit, 1);
        let raw = [0x1234_5678_9abc_def0_u128 | (1 << 127), u128::MAX];
        assert_eq!(reassemble_eq(&slice_eq(&raw).unwrap()), raw);
        assert!(slice_eq(&[0]).is_err());
        assert!(slice_eq(&[0, 0, 0]).is_err());
    }

    #[test]
    fn slice_cmp_layout() {
        let (e, l) = slice_cmp(&[0, 0, 0], 32).unwrap();
        assert_eq!(e, EqExpansion::default());
        assert_eq!(l, LeafExpansion::default());

        // tau_R sits at bit 2n+1 of the third block
        let (_, l) = slice_cmp(&[0, 0, 1u128 << 65], 32).unwrap();
        assert_eq!(
            l,
            LeafExpansion {
                sigma: [0, 0],
                tau: [0, 1]
            }
        );
        let (_, l) = slice_cmp(&[0, 0, 1u128 << 32], 32).unwrap();
        assert_eq!(l.tau, [1, 0]);

        // sigma_L is the low n bits of the third block
        let third = 0xdead_beef_cafe_f00d_u128 | (0x55u128 << 100);
        let (_, l) = slice_cmp(&[0, 0, third], 16).unwrap();
        assert_eq!(l.sigma[0], 0xf00d);
        assert_eq!(l.sigma[1], ((third >> 17) & 0xffff) as u64);

        // 64-bit outputs spill into a fourth block
        assert_eq!(cmp_blocks(63), 3);
        assert_eq!(cmp_blocks(64), 4);
        assert!(slice_cmp(&[0, 0, 0], 64).is_err());
        let (_, l) = slice_cmp(&[0, 0, (1u128 << 64) | 7, 9], 64).unwrap();
        assert_eq!(
            l,
            LeafExpansion {
                sigma: [7, 9],
                tau: [1, 0]
            }
        );
    }
}
