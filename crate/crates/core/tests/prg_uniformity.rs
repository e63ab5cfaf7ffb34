use ariann::prg::{expand, expand_batch, Seed};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64)
        .unwrap()
        .cdf(stat)
}

#[test]
fn output_bytes_are_uniform() {
    let seeds: Vec<u128> = (0..20_000u128).collect();
    let blocks = expand_batch(&seeds, 4).unwrap();
    let mut counts = [0u64; 256];
    for b in blocks.iter().flatten() {
        for byte in b.to_le_bytes() {
            counts[byte as usize] += 1;
        }
    }
    let p = chi_square_p(&counts);
    assert!(p > 1e-4, "p = {p}");
}

#[test]
fn output_bits_are_balanced_per_position() {
    let seeds: Vec<u128> = (0..8192u128)
        .map(|i| i.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .collect();
    let blocks = expand_batch(&seeds, 2).unwrap();
    let n = seeds.len() as f64;
    for block in &blocks {
        for bit in 0..128 {
            let ones = block.iter().filter(|v| (*v >> bit) & 1 == 1).count() as f64;
            // Six standard deviations of a fair coin.
            assert!(
                (ones - n / 2.0).abs() < 6.0 * (n / 4.0).sqrt(),
                "bit {bit}: {ones}"
            );
        }
    }
}

#[test]
fn batch_and_single_expansion_agree() {
    let seeds = [1u128, 2, 0xdead_beef, 1 << 100];
    let batch = expand_batch(&seeds, 3).unwrap();
    for (i, &s) in seeds.iter().enumerate() {
        let single = expand(Seed::new(s), 3).unwrap();
        for b in 0..3 {
            assert_eq!(single[b], batch[b][i]);
        }
    }
}
