//! Preprocessing is deterministic per seed, survives serialization and can
//! be consumed only once.

use ariann::beaver::{beaver_op, BilinearOp};
use ariann::error::Error;
use ariann::nn::relu_plan;
use ariann::runtime::{
    run_pair, Dealer, PrepBundle, PrepItem, PrepPlan, PrepStore, Session, DEFAULT_TIMEOUT_MS,
};
use ariann::sharing::AdditiveShare;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::time::Duration;

#[test]
fn same_seed_same_bundles() {
    let plan = relu_plan(100, 64, 32).unwrap();
    let a = Dealer::new(7).deal(&plan).unwrap();
    let b = Dealer::new(7).deal(&plan).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].cmp.iter().map(|c| c.len()).sum::<usize>(), 100);
    for (p, bundle) in a.iter().enumerate() {
        let (party, back) = PrepBundle::from_bytes(&bundle.to_bytes(p).unwrap()).unwrap();
        assert_eq!(party, p);
        assert_eq!(&back, bundle);
    }
}

#[test]
fn reused_triple_is_refused() {
    let op = BilinearOp::MatMul { m: 2, k: 3, n: 2 };
    let plan = PrepPlan {
        items: vec![PrepItem::Triple {
            op: op.clone(),
            bits: 64,
        }],
    };
    let [b0, b1] = Dealer::new(1).deal(&plan).unwrap();
    let stores = [
        PrepStore::preloaded(0, b0.clone()),
        PrepStore::preloaded(1, b1.clone()),
    ];
    let mut s =
        Session::local_pair_from(stores, Duration::from_millis(DEFAULT_TIMEOUT_MS)).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let x = AdditiveShare::share_plain(&[1.0; 6], vec![2, 3], 64, 0, &mut rng).unwrap();
    let y = AdditiveShare::share_plain(&[2.0; 6], vec![3, 2], 64, 0, &mut rng).unwrap();
    run_pair(&mut s, |sess| {
        beaver_op(sess, &op, &x[sess.party()], &y[sess.party()])
    })
    .unwrap();
    // A dealer replaying the same bundle must not get its triple used again.
    s[0].prep().absorb(b0);
    s[1].prep().absorb(b1);
    let err = run_pair(&mut s, |sess| {
        beaver_op(sess, &op, &x[sess.party()], &y[sess.party()])
    })
    .unwrap_err();
    assert!(matches!(err, Error::Reuse { .. }), "{err:?}");
}
