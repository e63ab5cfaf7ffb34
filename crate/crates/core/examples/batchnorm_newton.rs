//! Private inverse square root by Newton iteration, as used by batch
//! normalization, with cold and warm starts.

use ariann::experiments::newton_sweep;
use ariann::nn::{batchnorm_forward, BatchNormState, LayerPosition, NewtonPolicy};
use ariann::runtime::{run_pair, Session};
use ariann::sharing::AdditiveShare;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ariann::Result<()> {
    let sweep = newton_sweep(1.1, 3, 0)?;
    println!(
        "variance drifting over [1e-2, 1e2] in {} steps: cold start error {:.3}%, warm start error at most {:.2}%",
        sweep.steps,
        100.0 * sweep.max_rel_error_cold,
        100.0 * sweep.max_rel_error_warm
    );

    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let batch = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
    let x = AdditiveShare::share_plain(&batch, vec![4, 2], 64, 3, &mut rng)?;
    let gamma = AdditiveShare::share_plain(&[1.0, 1.0], vec![2], 64, 3, &mut rng)?;
    let beta = AdditiveShare::share_plain(&[0.0, 0.0], vec![2], 64, 3, &mut rng)?;
    let policy = NewtonPolicy::default();
    let mut s = Session::local_pair(2);
    let (a, b) = run_pair(&mut s, |sess| {
        let p = sess.party();
        let mut state = BatchNormState::default();
        batchnorm_forward(
            sess,
            &x[p],
            &gamma[p],
            &beta[p],
            1e-3,
            &policy,
            LayerPosition::Middle,
            &mut state,
        )
    })?;
    println!(
        "batch norm of two features: {:?}",
        AdditiveShare::reconstruct_plain(&a, &b)?
    );
    println!("{} rounds for a cold start", s[0].ledger().rounds());
    Ok(())
}
