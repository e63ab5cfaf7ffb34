//! Key sizes, key files on disk and the dealer audit: a sample of keys is
//! re-derived from the dealer's randomness and compared byte for byte.

use ariann::experiments::key_size;
use ariann::nn::relu_plan;
use ariann::runtime::{audit_bundles, Dealer};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ariann::Result<()> {
    let k = key_size(32, 1000, 0)?;
    println!(
        "32-bit comparison key: {} bytes (formula {:.1}, older scheme {:.0})",
        k.bytes_per_key, k.formula_bytes, k.baseline_bytes
    );

    let plan = relu_plan(500, 64, 32)?;
    let mut dealer = Dealer::new(4).with_tapes();
    let mut bundles = dealer.deal(&plan)?;
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    audit_bundles(dealer.tape_records(), &bundles, 50, &mut rng)?;
    println!("honest dealer: 50 sampled keys re-derived and matched");

    let path = std::env::temp_dir().join("ariann-example-keys.party0");
    let kb =
        ariann::fss::KeyBatch::from_cmp(&[&bundles[0].cmp[0], &bundles[1].cmp[0]])?.for_party(0)?;
    kb.write_file(&path)?;
    println!(
        "wrote {} ({} bytes)",
        path.display(),
        std::fs::metadata(&path)?.len()
    );
    std::fs::remove_file(&path)?;

    // Swap the two parties' comparison keys: every audited key now differs.
    bundles.swap(0, 1);
    match audit_bundles(dealer.tape_records(), &bundles, 50, &mut rng) {
        Ok(()) => println!("tampering went unnoticed"),
        Err(e) => println!("tampered bundles: {e}"),
    }
    Ok(())
}
