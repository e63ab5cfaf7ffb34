//! Private matrix product and convolution with Beaver triples: one round
//! each, exact modulo the ring.

use ariann::beaver::{beaver_op, BilinearOp, ConvGeom};
use ariann::runtime::{run_pair, Session};
use ariann::sharing::AdditiveShare;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ariann::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let b = [0.5, -1.0, 0.25, 2.0, -0.5, 1.5];
    let x = AdditiveShare::share_plain(&a, vec![2, 3], 64, 3, &mut rng)?;
    let y = AdditiveShare::share_plain(&b, vec![3, 2], 64, 3, &mut rng)?;
    let op = BilinearOp::MatMul { m: 2, k: 3, n: 2 };
    let mut s = Session::local_pair(1);
    let (p, q) = run_pair(&mut s, |sess| {
        beaver_op(sess, &op, &x[sess.party()], &y[sess.party()])?.truncate(3)
    })?;
    println!(
        "[2x3] x [3x2] = {:?} in {} round",
        AdditiveShare::reconstruct_plain(&p, &q)?,
        s[0].ledger().rounds()
    );

    let g = ConvGeom {
        batch: 1,
        in_ch: 1,
        height: 4,
        width: 4,
        out_ch: 1,
        kernel_h: 2,
        kernel_w: 2,
        stride: 2,
        padding: 0,
    };
    let img: Vec<f64> = (0..16).map(f64::from).collect();
    let x = AdditiveShare::share_plain(&img, g.input_shape(), 64, 3, &mut rng)?;
    let w = AdditiveShare::share_plain(&[1.0, 0.0, 0.0, -1.0], g.weight_shape(), 64, 3, &mut rng)?;
    let op = BilinearOp::Conv2d(g);
    let mut s = Session::local_pair(2);
    let (p, q) = run_pair(&mut s, |sess| {
        beaver_op(sess, &op, &x[sess.party()], &w[sess.party()])?.truncate(3)
    })?;
    println!(
        "2x2 stride-2 convolution = {:?} in {} round",
        AdditiveShare::reconstruct_plain(&p, &q)?,
        s[0].ledger().rounds()
    );

    let bad = ariann::experiments::beaver_mismatches(true, 20, 64, 3)?;
    println!("random convolutions checked against the plaintext map: {bad}/20 mismatches");
    Ok(())
}
