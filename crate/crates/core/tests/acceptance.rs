//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every criterion is reported even when an
//! earlier one fails. By default the process exits 0 after printing the
//! summary; with `ARIANN_ACCEPTANCE_STRICT=1` any failure exits 3.

use std::time::Instant;

use ariann::experiments::{self, Task};
use ariann::federated::{client_mask, fl_aggregate, fl_mask, FlTopology};
use ariann::ring::{mask, RingTensor};
use ariann::train::{Model, ModelSpec, PrivateConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fss_exactness() -> Outcome {
    let mut cases = 0;
    let mut bad = 0;
    for n in 4..=10 {
        let c = experiments::exhaustive_fss(n, n as u64).map_err(|e| e.to_string())?;
        cases += 2 * c.cases;
        bad += c.cmp_mismatches + c.eq_mismatches;
    }
    Ok((
        bad == 0,
        format!("n=4..10, {cases} evaluations, {bad} mismatches"),
    ))
}

fn sign_failure() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, y) in [16i64, -16, 256, -256, 1024, -1024].into_iter().enumerate() {
        let f = experiments::sign_failure_rate(y, 16, 100_000, 100 + i as u64)
            .map_err(|e| e.to_string())?;
        ok &= f.sigmas() <= 3.0;
        parts.push(format!(
            "y={y}: {}/{} ({:.1} sigma)",
            f.failures,
            f.trials,
            f.sigmas()
        ));
    }
    Ok((ok, parts.join(", ")))
}

fn key_size() -> Outcome {
    let k = experiments::key_size(32, 1000, 1).map_err(|e| e.to_string())?;
    let bound = (1.10 * k.formula_bytes).ceil();
    let ratio = k.baseline_bytes / k.bytes_per_key;
    Ok((
        k.bytes_per_key <= bound && ratio >= 2.4,
        format!(
            "{} bytes per key (bound {bound}, formula {:.1}), {ratio:.2}x smaller than {} bytes",
            k.bytes_per_key, k.formula_bytes, k.baseline_bytes
        ),
    ))
}

fn round_counts() -> Outcome {
    let counts = experiments::round_counts(64, 32, 5).map_err(|e| e.to_string())?;
    let ok = counts.iter().all(|(p, r)| *r == p.expected_rounds());
    let s: Vec<String> = counts.iter().map(|(p, r)| format!("{p} {r}")).collect();
    Ok((ok, s.join(", ")))
}

fn beaver_exactness() -> Outcome {
    let m = experiments::beaver_mismatches(false, 100, 64, 1).map_err(|e| e.to_string())?;
    let c = experiments::beaver_mismatches(true, 100, 64, 2).map_err(|e| e.to_string())?;
    Ok((
        m == 0 && c == 0,
        format!("matmul {m}/100 and conv {c}/100 mismatches"),
    ))
}

fn inference_parity() -> Outcome {
    let p = experiments::inference_parity(1000, &PrivateConfig::default(), 3)
        .map_err(|e| e.to_string())?;
    Ok((
        p.agreement >= 0.995,
        format!(
            "{} samples: plaintext {:.1}%, fixed {:.1}%, private {:.1}%, fixed/private agreement {:.2}%",
            p.samples,
            100.0 * p.plaintext,
            100.0 * p.fixed,
            100.0 * p.private,
            100.0 * p.agreement
        ),
    ))
}

fn training_parity() -> Outcome {
    let (p, ledger) =
        experiments::training_parity(Task::Moons, 1000, 10, &PrivateConfig::default(), 3)
            .map_err(|e| e.to_string())?;
    let gap = 100.0 * (p.private - p.fixed).abs();
    Ok((
        gap <= 1.0,
        format!(
            "moons: plaintext {:.1}%, fixed {:.1}%, private {:.1}% (gap {gap:.2} points, {} training rounds)",
            100.0 * p.plaintext,
            100.0 * p.fixed,
            100.0 * p.private,
            ledger.rounds()
        ),
    ))
}

fn precision_sweep() -> Outcome {
    let rows =
        experiments::precision_sweep(&[12, 16, 20, 24, 28, 32], 3, 7).map_err(|e| e.to_string())?;
    let ok = rows.iter().all(|r| match r.k {
        12 => r.agreement <= 0.30,
        k if k >= 24 => r.agreement >= 0.99,
        _ => true,
    });
    let s: Vec<String> = rows
        .iter()
        .map(|r| format!("k={} {:.1}%", r.k, 100.0 * r.agreement))
        .collect();
    Ok((ok, format!("3 decimals: {}", s.join(", "))))
}

fn batchnorm_newton() -> Outcome {
    let n = experiments::newton_sweep(1.1, 3, 1).map_err(|e| e.to_string())?;
    Ok((
        n.max_rel_error_warm <= 0.05 && n.max_rel_error_cold <= 0.05,
        format!(
            "{} steps over [1e-2, 1e2]: warm ({} iterations) max error {:.2}%, cold ({} iterations) {:.2}%",
            n.steps,
            n.warm_iters,
            100.0 * n.max_rel_error_warm,
            n.cold_iters,
            100.0 * n.max_rel_error_cold
        ),
    ))
}

fn flatten(m: &Model<RingTensor>) -> Vec<u64> {
    m.layer_params()
        .flat_map(|p| {
            p.w.data()
                .iter()
                .chain(p.b.data())
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

fn federated() -> Outcome {
    let spec = ModelSpec::mlp(&[3, 4, 2]);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut topologies = 0;
    for n in 2..=8 {
        for k in 1..n {
            let topo = FlTopology::new(n, k, (n * 10 + k) as u64).map_err(|e| e.to_string())?;
            let mut total = vec![0u64; 200];
            for c in 0..n {
                let mu = client_mask(&topo, c, 3, 200, 64).map_err(|e| e.to_string())?;
                for (t, v) in total.iter_mut().zip(mu) {
                    *t = t.wrapping_add(v);
                }
            }
            if total.iter().any(|&v| v != 0) {
                return Ok((false, format!("masks do not cancel for n={n} k={k}")));
            }
            let models: Vec<Model<RingTensor>> = (0..n)
                .map(|i| spec.init(i as u64).and_then(|m| m.to_fixed(64, 3)))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let mut server = Vec::new();
            let mut masked = Vec::new();
            for (i, m) in models.iter().enumerate() {
                let [s0, s1] = m.share(3, &mut rng).map_err(|e| e.to_string())?;
                server.push(s0);
                masked.push(Some(fl_mask(&topo, i, 3, &s1).map_err(|e| e.to_string())?));
            }
            let agg = fl_aggregate(&server, &masked).map_err(|e| e.to_string())?;
            let got = flatten(
                &ariann::train::reconstruct_model(&agg[0], &agg[1]).map_err(|e| e.to_string())?,
            );
            let mut want = vec![0u64; got.len()];
            for m in &models {
                for (w, v) in want.iter_mut().zip(flatten(m)) {
                    *w = w.wrapping_add(v) & mask(64);
                }
            }
            if got != want {
                return Ok((
                    false,
                    format!("aggregate differs from the plaintext sum for n={n} k={k}"),
                ));
            }
            topologies += 1;
        }
    }
    let d = experiments::federated_xor(2, 1, 10, 2, 5).map_err(|e| e.to_string())?;
    let gap = 100.0 * (d.federated - d.centralized).abs();
    Ok((
        gap <= 2.0,
        format!(
            "{topologies} topologies cancel and aggregate exactly; XOR with 2 clients: federated {:.1}%, centralized {:.1}% (gap {gap:.1} points)",
            100.0 * d.federated,
            100.0 * d.centralized
        ),
    ))
}

fn gradient_check() -> Outcome {
    let g = experiments::gradient_check(4, 1e-2, 0.05, 1).map_err(|e| e.to_string())?;
    Ok((
        g.failures == 0 && g.compared > 0,
        format!(
            "4-2-1 net: {}/{} components compared, max relative error {:.2}%",
            g.compared,
            g.components,
            100.0 * g.max_rel_error
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("fss-exactness", fss_exactness),
        ("sign-failure-rate", sign_failure),
        ("key-size", key_size),
        ("round-counts", round_counts),
        ("beaver-exactness", beaver_exactness),
        ("inference-parity", inference_parity),
        ("training-parity", training_parity),
        ("precision-sweep", precision_sweep),
        ("batchnorm-newton", batchnorm_newton),
        ("federated-aggregation", federated),
        ("gradient-check", gradient_check),
    ];
    let mut passed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        passed += ok as usize;
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:>2} {name}: {detail} [{:.1}s]",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    match experiments::comparison_smoke(100_000, 9) {
        Ok((wall, ledger)) => println!(
            "INFO    smoke: 100000 batched comparisons online in {:.1} ms, {} round, {} bytes sent",
            wall.as_secs_f64() * 1e3,
            ledger.rounds(),
            ledger.total.bytes_sent
        ),
        Err(e) => println!("INFO    smoke: 100000 batched comparisons failed: {e}"),
    }
    println!("{passed}/{} criteria passed", criteria.len());
    if passed < criteria.len() && std::env::var("ARIANN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1")
    {
        std::process::exit(3);
    }
}
