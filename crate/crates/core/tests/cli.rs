use std::process::Command;

fn ariann(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ariann"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn exit_codes() {
    assert_eq!(ariann(&["--help"]).0, 0);
    assert_eq!(ariann(&["--version"]).0, 0);
    assert_eq!(ariann(&[]).0, 1);
    assert_eq!(ariann(&["bench", "--program", "nope"]).0, 1);
    assert_eq!(ariann(&["bench", "--program", "relu", "--k", "70"]).0, 1);
    let (code, out, _) = ariann(&["compare", "--n", "5", "--exhaustive"]);
    assert_eq!(code, 0);
    ariann::report::validate_report(&out).unwrap();
}

#[test]
fn wrapped_comparisons_are_reported_as_mismatch() {
    // Inputs in [-10, 10) at three decimals do not fit a 12-bit comparison
    // domain, so some signs come out wrong.
    let (code, out, _) = ariann(&["bench", "--program", "relu", "--batch", "2000", "--k", "12"]);
    assert_eq!(code, 3);
    let v = ariann::report::validate_line(out.trim()).unwrap();
    assert!(v["agreement"].as_f64().unwrap() < 1.0);
}

#[test]
fn split_roles_over_tcp() {
    let dir = std::env::temp_dir().join(format!("ariann-cli-{}", std::process::id()));
    let d = dir.to_str().unwrap();
    let common = [
        "bench",
        "--program",
        "relu",
        "--batch",
        "64",
        "--seed",
        "3",
        "--prep-dir",
        d,
    ];
    let (code, out, _) = ariann(&[&common[..], &["--role", "dealer"]].concat());
    assert_eq!(code, 0, "{out}");
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("tcp:{}", l.local_addr().unwrap())
    };
    let p0 = {
        let args = [&common[..], &["--role", "party0", "--transport", &addr]].concat();
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        std::thread::spawn(move || ariann(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()))
    };
    let (c1, o1, e1) = ariann(&[&common[..], &["--role", "party1", "--transport", &addr]].concat());
    let (c0, o0, e0) = p0.join().unwrap();
    assert_eq!((c0, c1), (0, 0), "{e0}\n{e1}");
    for o in [o0, o1] {
        let v = ariann::report::validate_line(o.trim()).unwrap();
        assert_eq!(v["rounds"], 2);
        assert_eq!(v["agreement"], 1.0);
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn missing_peer_is_a_protocol_abort() {
    let dir = std::env::temp_dir().join(format!("ariann-cli-abort-{}", std::process::id()));
    let d = dir.to_str().unwrap();
    let common = [
        "bench",
        "--program",
        "relu",
        "--batch",
        "8",
        "--prep-dir",
        d,
    ];
    assert_eq!(ariann(&[&common[..], &["--role", "dealer"]].concat()).0, 0);
    // Nothing listens on this port.
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("tcp:{}", l.local_addr().unwrap())
    };
    let out = Command::new(env!("CARGO_BIN_EXE_ariann"))
        .args([&common[..], &["--role", "party1", "--transport", &addr]].concat())
        .env("ARIANN_TIMEOUT_MS", "300")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}
