//! ReLU on secret-shared values: one comparison round plus one
//! multiplication round.

use ariann::nn::relu;
use ariann::runtime::{run_pair, Session};
use ariann::sharing::AdditiveShare;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ariann::Result<()> {
    let values = [-3.25, -0.001, 0.0, 0.5, 7.125];
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let x = AdditiveShare::share_plain(&values, vec![values.len()], 64, 3, &mut rng)?;
    let mut s = Session::local_pair(9);
    let (a, b) = run_pair(&mut s, |sess| relu(sess, &x[sess.party()], 32))?;
    println!(
        "relu({values:?}) = {:?}",
        AdditiveShare::reconstruct_plain(&a, &b)?
    );
    let ledger = s[0].ledger();
    println!(
        "{} rounds, {} bytes sent by party 0",
        ledger.rounds(),
        ledger.total.bytes_sent
    );
    for (tag, c) in &ledger.per_tag {
        println!("  {tag}: {} rounds", c.rounds);
    }
    Ok(())
}
