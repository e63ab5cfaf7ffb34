//! Generates comparison keys for a few secret thresholds and shows that
//! each party's key alone gives random-looking output while the sum is
//! `1[x <= alpha]`.

use ariann::fss::{eval_cmp, keygen_cmp};
use ariann::ring::mask;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ariann::Result<()> {
    let n = 8;
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for _ in 0..3 {
        let (alpha, k0, k1) = keygen_cmp(n, &mut rng)?;
        println!("alpha = {alpha}");
        for x in [0, alpha.saturating_sub(1), alpha, alpha + 1, 255] {
            let a = eval_cmp(0, &k0, x)?;
            let b = eval_cmp(1, &k1, x)?;
            let sum = a.wrapping_add(b) & mask(n);
            println!("  x = {x:>3}: share0 = {a:>3}, share1 = {b:>3}, sum = {sum}");
        }
    }
    let check = ariann::experiments::exhaustive_fss(6, 0)?;
    println!(
        "exhaustive n=6: {} cases, {} comparison and {} equality mismatches",
        check.cases, check.cmp_mismatches, check.eq_mismatches
    );
    Ok(())
}
