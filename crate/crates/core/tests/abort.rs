//! Liveness: a failed or silent peer ends the session with an error
//! within the configured timeout.

use std::net::TcpListener;
use std::time::{Duration, Instant};

use ariann::error::Error;
use ariann::nn::{relu, relu_plan};
use ariann::runtime::{Dealer, PrepStore, Session};
use ariann::sharing::AdditiveShare;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

#[test]
fn vanished_peer_aborts_without_hanging() {
    std::env::set_var("ARIANN_TIMEOUT_MS", "500");
    let addr = free_addr();
    let plan = relu_plan(4, 64, 32).unwrap();
    let [b0, b1] = Dealer::new(1).deal(&plan).unwrap();
    let a = addr.clone();
    let peer = std::thread::spawn(move || {
        // Connects, then disappears before the first exchange.
        let s = Session::tcp(1, &a, PrepStore::preloaded(1, b1)).unwrap();
        drop(s);
    });
    let mut s0 = Session::tcp(0, &addr, PrepStore::preloaded(0, b0)).unwrap();
    peer.join().unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let [x0, _] =
        AdditiveShare::share_plain(&[1.0, -1.0, 2.0, 0.5], vec![4], 64, 3, &mut rng).unwrap();
    let start = Instant::now();
    let err = relu(&mut s0, &x0, 32).unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(
        matches!(
            err,
            Error::Transport(_) | Error::Timeout(_) | Error::SessionClosed | Error::Io(_)
        ),
        "{err:?}"
    );
}

#[test]
fn silent_peer_times_out() {
    std::env::set_var("ARIANN_TIMEOUT_MS", "300");
    let addr = free_addr();
    let plan = relu_plan(2, 64, 32).unwrap();
    let [b0, b1] = Dealer::new(2).deal(&plan).unwrap();
    let a = addr.clone();
    let (tx, rx) = std::sync::mpsc::channel::<()>();
    let peer = std::thread::spawn(move || {
        // Stays connected but never answers.
        let _s = Session::tcp(1, &a, PrepStore::preloaded(1, b1)).unwrap();
        let _ = rx.recv();
    });
    let mut s0 = Session::tcp(0, &addr, PrepStore::preloaded(0, b0)).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let [x0, _] = AdditiveShare::share_plain(&[1.0, -1.0], vec![2], 64, 3, &mut rng).unwrap();
    let start = Instant::now();
    let err = relu(&mut s0, &x0, 32).unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(matches!(err, Error::Timeout(_)), "{err:?}");
    tx.send(()).unwrap();
    peer.join().unwrap();
}
