//! Private argmax (one-hot) and 2x2 max pooling.

use ariann::nn::{argmax, maxpool, maxpool_k2};
use ariann::runtime::{run_pair, Session};
use ariann::sharing::AdditiveShare;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ariann::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let scores = [0.1, 2.5, -1.0, 0.7, 3.0, 3.5, 1.0, 0.0];
    let x = AdditiveShare::share_plain(&scores, vec![2, 4], 64, 3, &mut rng)?;
    let mut s = Session::local_pair(1);
    let (a, b) = run_pair(&mut s, |sess| argmax(sess, &x[sess.party()], 32))?;
    println!(
        "argmax rows of {scores:?}: {:?} ({} rounds)",
        AdditiveShare::reconstruct_ring(&a, &b)?.data(),
        s[0].ledger().rounds()
    );

    let img: Vec<f64> = (0..16).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
    let x = AdditiveShare::share_plain(&img, vec![1, 1, 4, 4], 64, 3, &mut rng)?;
    let mut s = Session::local_pair(2);
    let (a, b) = run_pair(&mut s, |sess| maxpool(sess, &x[sess.party()], 2, 2, 32))?;
    println!("image {img:?}");
    println!(
        "maxpool 2x2: {:?} ({} rounds)",
        AdditiveShare::reconstruct_plain(&a, &b)?,
        s[0].ledger().rounds()
    );
    let mut s = Session::local_pair(3);
    let (a, b) = run_pair(&mut s, |sess| maxpool_k2(sess, &x[sess.party()], 2, 32))?;
    println!(
        "maxpool as two pairwise maxima: {:?} ({} rounds)",
        AdditiveShare::reconstruct_plain(&a, &b)?,
        s[0].ledger().rounds()
    );
    Ok(())
}
