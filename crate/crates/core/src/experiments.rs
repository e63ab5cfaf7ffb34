//! Reproducible measurements shared by the command line tool, the
//! examples and the acceptance suite.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::beaver::{beaver_op, mul, BilinearOp, ConvGeom};
use crate::data::{blobs, moons, xor_blobs, Dataset};
use crate::error::{Error, Result};
use crate::federated::{FlClient, FlState, FlTopology};
use crate::fss::{
    keygen_cmp_batch, keygen_eq_batch, sign_protocol, FssParams, KeyBatch, KeygenTape,
};
use crate::nn::{
    argmax, argmax_plan, inv_sqrt_newton, maxpool, maxpool_k2, maxpool_plan, relu, relu_plan,
    NewtonPolicy,
};
use crate::ring::{mask, RingTensor};
use crate::runtime::{run_pair, Dealer, PrepItem, PrepPlan, PrepStore, RoundLedger, Session};
use crate::sharing::{encode, share_tensor, AdditiveShare};
use crate::train::{
    accuracy, backward, classes, forward, mse_grad, predict, predict_private, reconstruct_model,
    train, train_private, Fixed, Float, FloatTensor, Model, ModelSpec, Private, PrivateConfig,
    TrainConfig,
};

/// Mismatch counts of an exhaustive key check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FssCheck {
    pub n_bits: u32,
    pub cases: u64,
    pub cmp_mismatches: u64,
    pub eq_mismatches: u64,
}

/// Generates one comparison and one equality key for every `alpha` in
/// `Z_2^n` and evaluates each on every `x`, checking `1[x <= alpha]` and
/// `1[x == alpha]`.
pub fn exhaustive_fss(n_bits: u32, seed: u64) -> Result<FssCheck> {
    let params = FssParams::uniform(n_bits)?;
    let size = 1usize << n_bits;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let tapes: Vec<KeygenTape> = (0..size as u64)
        .map(|alpha| {
            let mut t = KeygenTape::sample(params, &mut rng);
            t.alpha = alpha;
            t
        })
        .collect();
    let [c0, c1] = keygen_cmp_batch(params, &tapes, 0)?;
    let [e0, e1] = keygen_eq_batch(params, &tapes, 0)?;
    let m = mask(params.out_bits);
    let mut check = FssCheck {
        n_bits,
        cases: 0,
        cmp_mismatches: 0,
        eq_mismatches: 0,
    };
    for x in 0..size as u64 {
        let xs = vec![x; size];
        let (a, b) = (c0.eval(&xs)?, c1.eval(&xs)?);
        let (p, q) = (e0.eval(&xs)?, e1.eval(&xs)?);
        for alpha in 0..size {
            let cmp = a[alpha].wrapping_add(b[alpha]) & m;
            let eq = p[alpha].wrapping_add(q[alpha]) & m;
            check.cases += 1;
            check.cmp_mismatches += (cmp != (x <= alpha as u64) as u64) as u64;
            check.eq_mismatches += (eq != (x == alpha as u64) as u64) as u64;
        }
    }
    Ok(check)
}

/// Empirical failure count of the sign protocol on a fixed input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignFailure {
    pub y: i64,
    pub n_bits: u32,
    pub trials: usize,
    pub failures: usize,
    /// `|y| / 2^n`.
    pub expected_rate: f64,
}

impl SignFailure {
    pub fn rate(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }

    /// Distance of the observed count from its expectation in binomial
    /// standard deviations.
    pub fn sigmas(&self) -> f64 {
        let p = self.expected_rate;
        let n = self.trials as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        let diff = self.failures as f64 - n * p;
        if sd == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff.abs() / sd
        }
    }
}

/// Runs the sign protocol `trials` times on fresh shares of `y` with fresh
/// keys, all in `Z_2^n`, and counts wrong results.
pub fn sign_failure_rate(y: i64, n_bits: u32, trials: usize, seed: u64) -> Result<SignFailure> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x = RingTensor::from_signed(&vec![y; trials], vec![trials], n_bits)?;
    let shares = share_tensor(&x, &mut rng);
    let mut s = Session::local_pair(seed ^ 0x5151);
    let (a, b) = run_pair(&mut s, |sess| {
        sign_protocol(sess, &shares[sess.party()], n_bits)
    })?;
    let want = (y <= 0) as u64;
    let failures = a.add(&b)?.data().iter().filter(|&&v| v != want).count();
    Ok(SignFailure {
        y,
        n_bits,
        trials,
        failures,
        expected_rate: y.unsigned_abs() as f64 / 2f64.powi(n_bits as i32),
    })
}

/// Serialized comparison key size per element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeySize {
    pub n_bits: u32,
    pub bytes_per_key: f64,
    /// `n(lambda + 2n + 4) + lambda + 2n`, in bytes.
    pub formula_bytes: f64,
    /// `n(4 lambda + n)`, in bytes.
    pub baseline_bytes: f64,
}

pub fn key_size(n_bits: u32, count: usize, seed: u64) -> Result<KeySize> {
    let params = FssParams::uniform(n_bits)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let tapes: Vec<_> = (0..count)
        .map(|_| KeygenTape::sample(params, &mut rng))
        .collect();
    let [b0, b1] = keygen_cmp_batch(params, &tapes, 0)?;
    let kb = KeyBatch::from_cmp(&[&b0, &b1])?;
    let payload = kb.payloads[0].as_ref().map(|p| p.len()).unwrap_or(0);
    let (n, l) = (n_bits as f64, crate::prg::LAMBDA as f64);
    Ok(KeySize {
        n_bits,
        bytes_per_key: payload as f64 / count as f64,
        formula_bytes: (n * (l + 2.0 * n + 4.0) + l + 2.0 * n) / 8.0,
        baseline_bytes: n * (4.0 * l + n) / 8.0,
    })
}

/// A benchmarkable private operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Program {
    Compare,
    Relu,
    Argmax,
    Maxpool,
    MaxpoolK2,
    Matmul,
    Conv,
}

impl Program {
    pub const ALL: [Program; 7] = [
        Program::Compare,
        Program::Relu,
        Program::Argmax,
        Program::Maxpool,
        Program::MaxpoolK2,
        Program::Matmul,
        Program::Conv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Program::Compare => "compare",
            Program::Relu => "relu",
            Program::Argmax => "argmax",
            Program::Maxpool => "maxpool",
            Program::MaxpoolK2 => "maxpool-k2",
            Program::Matmul => "matmul",
            Program::Conv => "conv",
        }
    }

    /// Online rounds of one invocation.
    pub fn expected_rounds(self) -> u64 {
        match self {
            Program::Compare | Program::Matmul | Program::Conv => 1,
            Program::Relu | Program::Argmax => 2,
            Program::Maxpool => 3,
            Program::MaxpoolK2 => 4,
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Program {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Program::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown program {s}")))
    }
}

/// What to run: the program, its batch size and the ring parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchSpec {
    pub program: Program,
    pub batch: usize,
    pub bits: u32,
    pub precision: u32,
    pub k: u32,
    pub seed: u64,
}

const ARGMAX_WIDTH: usize = 10;
const POOL_SIDE: usize = 4;
const MATMUL_DIM: usize = 16;

fn conv_geom(batch: usize) -> ConvGeom {
    ConvGeom {
        batch,
        in_ch: 2,
        height: 6,
        width: 6,
        out_ch: 3,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 1,
    }
}

/// Plaintext operands of a benchmark, encoded in the ring.
#[derive(Debug, Clone)]
pub struct BenchInputs {
    pub x: RingTensor,
    pub w: Option<RingTensor>,
}

impl BenchSpec {
    fn x_shape(&self) -> Vec<usize> {
        match self.program {
            Program::Compare | Program::Relu => vec![self.batch],
            Program::Argmax => vec![self.batch, ARGMAX_WIDTH],
            Program::Maxpool | Program::MaxpoolK2 => vec![self.batch, 1, POOL_SIDE, POOL_SIDE],
            Program::Matmul => vec![self.batch, MATMUL_DIM],
            Program::Conv => conv_geom(self.batch).input_shape(),
        }
    }

    fn w_shape(&self) -> Option<Vec<usize>> {
        match self.program {
            Program::Matmul => Some(vec![MATMUL_DIM, MATMUL_DIM]),
            Program::Conv => Some(conv_geom(self.batch).weight_shape()),
            _ => None,
        }
    }

    fn op(&self) -> Option<BilinearOp> {
        match self.program {
            Program::Matmul => Some(BilinearOp::MatMul {
                m: self.batch,
                k: MATMUL_DIM,
                n: MATMUL_DIM,
            }),
            Program::Conv => Some(BilinearOp::Conv2d(conv_geom(self.batch))),
            _ => None,
        }
    }

    /// Deterministic operands: reals in `[-10, 10)`, weights in `[-1, 1)`.
    pub fn inputs(&self) -> Result<BenchInputs> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let shape = self.x_shape();
        let n: usize = shape.iter().product();
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let x = encode(&xs, shape, self.bits, self.precision)?;
        let w = match self.w_shape() {
            Some(s) => {
                let n: usize = s.iter().product();
                let ws: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Some(encode(&ws, s, self.bits, self.precision)?)
            }
            None => None,
        };
        Ok(BenchInputs { x, w })
    }

    /// Both parties' input shares, derived from the seed.
    pub fn shares(&self, inputs: &BenchInputs) -> [(AdditiveShare, Option<AdditiveShare>); 2] {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ 0xa5a5);
        let [x0, x1] = AdditiveShare::share_ring(&inputs.x, self.precision, &mut rng);
        match &inputs.w {
            Some(w) => {
                let [w0, w1] = AdditiveShare::share_ring(w, self.precision, &mut rng);
                [(x0, Some(w0)), (x1, Some(w1))]
            }
            None => [(x0, None), (x1, None)],
        }
    }

    /// Preprocessing the program consumes.
    pub fn plan(&self) -> Result<PrepPlan> {
        let (b, bits, k) = (self.batch, self.bits, self.k);
        match self.program {
            Program::Compare => Ok(PrepPlan {
                items: vec![PrepItem::Cmp {
                    params: FssParams::new(k, bits)?,
                    count: b,
                }],
            }),
            Program::Relu => relu_plan(b, bits, k),
            Program::Argmax => argmax_plan(b, ARGMAX_WIDTH, bits, k),
            Program::Maxpool => maxpool_plan(b * (POOL_SIDE / 2) * (POOL_SIDE / 2), 2, bits, k),
            Program::MaxpoolK2 => {
                let w = b * (POOL_SIDE / 2) * (POOL_SIDE / 2);
                let mut p = relu_plan(2 * w, bits, k)?;
                p.extend(relu_plan(w, bits, k)?);
                Ok(p)
            }
            Program::Matmul | Program::Conv => Ok(PrepPlan {
                items: vec![PrepItem::Triple {
                    op: self.op().expect("bilinear program"),
                    bits,
                }],
            }),
        }
    }

    /// Runs the program on one party's shares.
    pub fn run(
        &self,
        sess: &mut Session,
        x: &AdditiveShare,
        w: Option<&AdditiveShare>,
    ) -> Result<AdditiveShare> {
        let k = self.k;
        match self.program {
            Program::Compare => {
                let r = sess.scope("comparison", |s| sign_protocol(s, &x.value, k))?;
                AdditiveShare::new(x.party, r, 0)
            }
            Program::Relu => relu(sess, x, k),
            Program::Argmax => argmax(sess, x, k),
            Program::Maxpool => maxpool(sess, x, 2, 2, k),
            Program::MaxpoolK2 => maxpool_k2(sess, x, 2, k),
            Program::Matmul | Program::Conv => {
                let w = w.ok_or_else(|| Error::InvalidArgument("missing weights".into()))?;
                let op = self.op().expect("bilinear program");
                let tag = if self.program == Program::Matmul {
                    "matmul"
                } else {
                    "conv"
                };
                sess.scope(tag, |s| beaver_op(s, &op, x, w))?
                    .truncate(self.precision)
            }
        }
    }

    /// Plaintext result and the tolerance (in ring units) of each element.
    pub fn oracle(&self, inputs: &BenchInputs) -> Result<(Vec<i64>, i64)> {
        let x = inputs.x.signed_values();
        let d = crate::sharing::scale(self.precision) as i64;
        Ok(match self.program {
            Program::Compare => (x.iter().map(|&v| (v <= 0) as i64).collect(), 0),
            Program::Relu => (x.iter().map(|&v| v.max(0)).collect(), 0),
            Program::Argmax => {
                let mut out = Vec::with_capacity(x.len());
                for row in x.chunks(ARGMAX_WIDTH) {
                    let m = *row.iter().max().expect("non-empty row");
                    out.extend(row.iter().map(|&v| (v == m) as i64));
                }
                (out, 0)
            }
            Program::Maxpool | Program::MaxpoolK2 => {
                (crate::nn::maxpool_plain(&x, inputs.x.shape(), 2, 2).0, 0)
            }
            Program::Matmul | Program::Conv => {
                let w = inputs
                    .w
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("missing weights".into()))?;
                let op = self.op().expect("bilinear program");
                let y = op.apply(&inputs.x, w)?;
                (
                    y.signed_values().iter().map(|v| v.div_euclid(d)).collect(),
                    1,
                )
            }
        })
    }
}

/// Fraction of elements within `tol` of the oracle.
pub fn agreement(got: &[i64], want: &[i64], tol: i64) -> f64 {
    if want.is_empty() {
        return 1.0;
    }
    got.iter()
        .zip(want)
        .filter(|(a, b)| (*a - *b).abs() <= tol)
        .count() as f64
        / want.len() as f64
}

/// How the two parties of a benchmark talk to each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportChoice {
    Local,
    Tcp(String),
}

impl FromStr for TransportChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "local" {
            return Ok(TransportChoice::Local);
        }
        match s.strip_prefix("tcp:") {
            Some(addr) if !addr.is_empty() => Ok(TransportChoice::Tcp(addr.to_string())),
            _ => Err(Error::InvalidArgument(format!(
                "transport must be `local` or `tcp:host:port`, got {s}"
            ))),
        }
    }
}

/// Outcome of one benchmark run.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub ledger: RoundLedger,
    pub wall: Duration,
    pub agreement: f64,
    pub output: Vec<i64>,
}

/// Deals preprocessing offline, runs the online phase of both parties on
/// the chosen transport and checks the reconstructed output.
pub fn run_bench(spec: &BenchSpec, transport: &TransportChoice) -> Result<BenchResult> {
    let inputs = spec.inputs()?;
    let shares = spec.shares(&inputs);
    let [b0, b1] = Dealer::new(spec.seed ^ 0xdea1).deal(&spec.plan()?)?;
    let mut sessions = match transport {
        TransportChoice::Local => Session::local_pair_from(
            [PrepStore::preloaded(0, b0), PrepStore::preloaded(1, b1)],
            crate::runtime::timeout_from_env(),
        )?,
        TransportChoice::Tcp(addr) => {
            let a = addr.clone();
            let h = std::thread::spawn(move || Session::tcp(0, &a, PrepStore::preloaded(0, b0)));
            let s1 = Session::tcp(1, addr, PrepStore::preloaded(1, b1));
            let s0 = h
                .join()
                .map_err(|_| Error::Transport("listener thread panicked".into()))?;
            [s0?, s1?]
        }
    };
    let start = Instant::now();
    let (y0, y1) = run_pair(&mut sessions, |sess| {
        let (x, w) = &shares[sess.party()];
        spec.run(sess, x, w.as_ref())
    })?;
    let wall = start.elapsed();
    let out = AdditiveShare::reconstruct_ring(&y0, &y1)?.signed_values();
    let (want, tol) = spec.oracle(&inputs)?;
    Ok(BenchResult {
        ledger: sessions[0].ledger().clone(),
        wall,
        agreement: agreement(&out, &want, tol),
        output: out,
    })
}

/// Rounds measured on one small instance of every program.
pub fn round_counts(bits: u32, k: u32, seed: u64) -> Result<Vec<(Program, u64)>> {
    Program::ALL
        .iter()
        .map(|&p| {
            let spec = BenchSpec {
                program: p,
                batch: 3,
                bits,
                precision: 3,
                k,
                seed,
            };
            Ok((
                p,
                run_bench(&spec, &TransportChoice::Local)?.ledger.rounds(),
            ))
        })
        .collect()
}

/// Instances of a bilinear protocol whose reconstruction differs from the
/// plaintext map mod `2^bits`.
pub fn beaver_mismatches(conv: bool, instances: usize, bits: u32, seed: u64) -> Result<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let m = mask(bits);
    let mut bad = 0;
    for i in 0..instances {
        let op = if conv {
            let k = rng.gen_range(1..=3);
            BilinearOp::Conv2d(ConvGeom {
                batch: rng.gen_range(1..=2),
                in_ch: rng.gen_range(1..=3),
                height: rng.gen_range(k..=6),
                width: rng.gen_range(k..=6),
                out_ch: rng.gen_range(1..=3),
                kernel_h: k,
                kernel_w: k,
                stride: rng.gen_range(1..=2),
                padding: rng.gen_range(0..=1),
            })
        } else {
            BilinearOp::MatMul {
                m: rng.gen_range(1..=8),
                k: rng.gen_range(1..=8),
                n: rng.gen_range(1..=8),
            }
        };
        let (sa, sb, _) = op.shapes();
        let mut rand_t = |s: Vec<usize>| {
            let n: usize = s.iter().product();
            RingTensor::new((0..n).map(|_| rng.gen::<u64>() & m).collect(), s, bits)
        };
        let (x, y) = (rand_t(sa)?, rand_t(sb)?);
        let xs = AdditiveShare::share_ring(&x, 0, &mut rng);
        let ys = AdditiveShare::share_ring(&y, 0, &mut rng);
        let mut s = Session::local_pair(seed ^ i as u64);
        let (a, b) = run_pair(&mut s, |sess| {
            let p = sess.party();
            let r = beaver_op(sess, &op, &xs[p], &ys[p])?;
            if sess.ledger().rounds() != 1 {
                return Err(Error::InvalidArgument(
                    "bilinear protocol took more than one round".into(),
                ));
            }
            Ok(r)
        })?;
        if AdditiveShare::reconstruct_ring(&a, &b)? != op.apply(&x, &y)? {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Largest relative error of the private inverse square root along two
/// drifting variance sequences spanning `[1e-2, 1e2]` (one rising, one
/// falling). The first step is a cold start; every later step warm
/// starts from the previous estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonSweep {
    pub steps: usize,
    pub warm_iters: usize,
    pub cold_iters: usize,
    pub max_rel_error_warm: f64,
    pub max_rel_error_cold: f64,
    pub rounds: u64,
}

pub fn newton_sweep(drift: f64, precision: u32, seed: u64) -> Result<NewtonSweep> {
    let policy = NewtonPolicy::default();
    let (lo, hi) = (1e-2f64, 1e2f64);
    let steps = ((hi / lo).ln() / drift.ln()).ceil() as usize + 1;
    let seq: Vec<[f64; 2]> = (0..steps)
        .map(|t| {
            let up = (lo * drift.powi(t as i32)).min(hi);
            let down = (hi / drift.powi(t as i32)).max(lo);
            [up, down]
        })
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shares: Vec<[AdditiveShare; 2]> = seq
        .iter()
        .map(|v| AdditiveShare::share_plain(v, vec![2], 64, precision, &mut rng))
        .collect::<Result<_>>()?;
    let theta0 = encode(&[policy.theta0; 2], vec![2], 64, precision)?;
    let mut s = Session::local_pair(seed);
    let (a, b) = run_pair(&mut s, |sess| {
        let p = sess.party();
        let mut theta = AdditiveShare::from_public(p, &theta0, precision)?;
        let mut out = Vec::with_capacity(steps);
        for (t, v) in shares.iter().enumerate() {
            let iters = if t == 0 {
                policy.cold_iters
            } else {
                policy.warm_iters
            };
            theta = inv_sqrt_newton(sess, &v[p], &theta, iters, policy.c)?;
            out.push(theta.clone());
        }
        Ok(out)
    })?;
    let mut warm: f64 = 0.0;
    let mut cold: f64 = 0.0;
    for (t, (x, y)) in a.iter().zip(&b).enumerate() {
        let got = AdditiveShare::reconstruct_plain(x, y)?;
        for (g, v) in got.iter().zip(seq[t]) {
            let e = (g * v.sqrt() - 1.0).abs();
            if t == 0 {
                cold = cold.max(e);
            } else {
                warm = warm.max(e);
            }
        }
    }
    Ok(NewtonSweep {
        steps,
        warm_iters: policy.warm_iters,
        cold_iters: policy.cold_iters,
        max_rel_error_warm: warm,
        max_rel_error_cold: cold,
        rounds: s[0].ledger().rounds(),
    })
}

/// Accuracies of one model in the three execution modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Parity {
    pub samples: usize,
    pub plaintext: f64,
    pub fixed: f64,
    pub private: f64,
    /// Fraction of samples where fixed point and private predict the same
    /// label.
    pub agreement: f64,
}

fn fixed_tensor(t: FloatTensor, bits: u32, precision: u32) -> Result<RingTensor> {
    t.to_fixed(bits, precision)
}

fn labels_of(y: &RingTensor, precision: u32, outputs: usize) -> Vec<usize> {
    classes(&FloatTensor::from_fixed(y, precision).data, outputs)
}

/// Two-class toy tasks for the parity checks and the training demo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Noisy XOR: four Gaussian blobs at the corners of `[-1, 1]^2`.
    Xor,
    /// Two interleaved half circles.
    Moons,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xor" => Ok(Task::Xor),
            "moons" => Ok(Task::Moons),
            _ => Err(Error::InvalidArgument(format!("unknown task {s}"))),
        }
    }
}

impl Task {
    /// 200 training points and `test` held-out points.
    pub fn split(self, test: usize, seed: u64) -> (Dataset, Dataset) {
        match self {
            Task::Xor => xor_blobs(200 + test, 0.3, seed).split(200),
            Task::Moons => moons(200 + test, 0.1, seed).split(200),
        }
    }
}

/// Three-layer MLP used for the parity checks.
pub fn parity_model() -> ModelSpec {
    ModelSpec::mlp(&[2, 16, 16, 1])
}

fn parity_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 10,
        lr: 0.1,
        momentum: 0.9,
        shuffle_seed: 1,
        allow_loss_reveal: false,
    }
}

/// Trains in plaintext, then evaluates plaintext, fixed point and private.
pub fn inference_parity(samples: usize, pc: &PrivateConfig, seed: u64) -> Result<Parity> {
    let (tr, te) = Task::Moons.split(samples, seed);
    let mut m = parity_model().init(seed)?;
    train(
        &mut Float,
        &mut m,
        &tr.x_tensor()?,
        &tr.y_tensor()?,
        &parity_config(),
    )?;
    let xt = te.x_tensor()?;
    let plain = classes(&predict(&mut Float, &m, &xt)?.data, te.outputs);
    let mf = m.to_fixed(pc.bits, pc.precision)?;
    let xf = fixed_tensor(xt, pc.bits, pc.precision)?;
    let mut fx = Fixed {
        bits: pc.bits,
        precision: pc.precision,
    };
    let fixed = labels_of(&predict(&mut fx, &mf, &xf)?, pc.precision, te.outputs);
    let (yp, _) = predict_private(&mf, &xf, pc)?;
    let private = labels_of(&yp, pc.precision, te.outputs);
    Ok(Parity {
        samples: te.len(),
        plaintext: accuracy(&plain, &te.labels),
        fixed: accuracy(&fixed, &te.labels),
        private: accuracy(&private, &te.labels),
        agreement: accuracy(&private, &fixed),
    })
}

/// Trains the same initial model in plaintext, fixed point and privately
/// with identical seeds and compares held-out accuracy.
pub fn training_parity(
    task: Task,
    samples: usize,
    epochs: usize,
    pc: &PrivateConfig,
    seed: u64,
) -> Result<(Parity, RoundLedger)> {
    let (tr, te) = task.split(samples, seed);
    let cfg = TrainConfig {
        epochs,
        ..parity_config()
    };
    let init = parity_model().init(seed)?;
    let mut fm = init.clone();
    train(&mut Float, &mut fm, &tr.x_tensor()?, &tr.y_tensor()?, &cfg)?;
    let fixed_init = init.to_fixed(pc.bits, pc.precision)?;
    let x = fixed_tensor(tr.x_tensor()?, pc.bits, pc.precision)?;
    let y = fixed_tensor(tr.y_tensor()?, pc.bits, pc.precision)?;
    let mut fx = Fixed {
        bits: pc.bits,
        precision: pc.precision,
    };
    let mut xm = fixed_init.clone();
    train(&mut fx, &mut xm, &x, &y, &cfg)?;
    let run = train_private(&fixed_init, &x, &y, &cfg, pc)?;
    let xt = te.x_tensor()?;
    let xf = fixed_tensor(xt.clone(), pc.bits, pc.precision)?;
    let plain = classes(&predict(&mut Float, &fm, &xt)?.data, te.outputs);
    let fixed = labels_of(&predict(&mut fx, &xm, &xf)?, pc.precision, te.outputs);
    let private = labels_of(
        &predict(&mut fx, &run.model, &xf)?,
        pc.precision,
        te.outputs,
    );
    let parity = Parity {
        samples: te.len(),
        plaintext: accuracy(&plain, &te.labels),
        fixed: accuracy(&fixed, &te.labels),
        private: accuracy(&private, &te.labels),
        agreement: accuracy(&private, &fixed),
    };
    Ok((parity, run.ledgers[0].clone()))
}

/// One row of the precision sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    /// Comparison domain width.
    pub k: u32,
    pub precision: u32,
    /// Agreement of private labels with plaintext labels.
    pub agreement: f64,
    pub accuracy: f64,
}

/// The multi-class toy model of the precision sweep: a three-layer MLP on
/// ten Gaussian clusters in eight dimensions, trained in plaintext.
pub fn sweep_model(seed: u64) -> Result<(Model<FloatTensor>, Dataset)> {
    let d = blobs(2000, 10, 8, 1.0, seed);
    let (tr, te) = d.split(1000);
    let mut m = ModelSpec::mlp(&[8, 32, 32, 10]).init(seed)?;
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        lr: 0.1,
        momentum: 0.9,
        shuffle_seed: seed,
        allow_loss_reveal: false,
    };
    train(&mut Float, &mut m, &tr.x_tensor()?, &tr.y_tensor()?, &cfg)?;
    Ok((m, te))
}

/// Evaluates the toy model privately with comparisons in `Z_2^k` for
/// every `k`, keeping arithmetic in `Z_2^64`.
pub fn precision_sweep(ks: &[u32], precision: u32, seed: u64) -> Result<Vec<SweepRow>> {
    let (m, te) = sweep_model(seed)?;
    let xt = te.x_tensor()?;
    let plain = classes(&predict(&mut Float, &m, &xt)?.data, te.outputs);
    let mf = m.to_fixed(64, precision)?;
    let xf = xt.to_fixed(64, precision)?;
    ks.iter()
        .map(|&k| {
            let pc = PrivateConfig {
                k,
                precision,
                dealer_seed: seed ^ k as u64,
                share_seed: seed,
                bits: 64,
            };
            let (y, _) = predict_private(&mf, &xf, &pc)?;
            let labels = labels_of(&y, precision, te.outputs);
            Ok(SweepRow {
                k,
                precision,
                agreement: accuracy(&labels, &plain),
                accuracy: accuracy(&labels, &te.labels),
            })
        })
        .collect()
}

/// Private gradients against central finite differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub components: usize,
    /// Components with `|gradient| > threshold` that were compared.
    pub compared: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

/// Gradient check on a 4-2-1 network: the private backward pass against
/// central differences of the loss of the same (decoded) model.
pub fn gradient_check(
    precision: u32,
    threshold: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheck> {
    let spec = ModelSpec::mlp(&[4, 2, 1]);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let fixed = spec.init(seed)?.to_fixed(64, precision)?;
    let float = fixed.to_float(precision)?;
    let xs: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = FloatTensor::new(xs, vec![8, 4])?;
    let y = FloatTensor::new(ys, vec![8, 1])?;
    let [m0, m1] = fixed.share(precision, &mut rng)?;
    let xsh = AdditiveShare::share_ring(&x.to_fixed(64, precision)?, precision, &mut rng);
    let ysh = AdditiveShare::share_ring(&y.to_fixed(64, precision)?, precision, &mut rng);
    let models = [m0, m1];
    let mut s = Session::local_pair(seed);
    let (a, b) = run_pair(&mut s, |sess| {
        let p = sess.party();
        let mut m = models[p].clone();
        let mut be = Private::new(sess, 32);
        let (pred, tape) = forward(&mut be, &m, &xsh[p])?;
        let g = mse_grad(&be, &pred, &ysh[p])?;
        backward(&mut be, &mut m, tape, &g)?;
        Ok(Model::new(spec.clone(), m.grads.clone()))
    })?;
    let grads = reconstruct_model(&a, &b)?.to_float(precision)?;
    let loss = |m: &Model<FloatTensor>| -> Result<f64> {
        let p = predict(&mut Float, m, &x)?;
        Float.mse(&p, &y)
    };
    use crate::train::Backend;
    let h = 1e-6;
    let mut out = GradCheck {
        components: 0,
        compared: 0,
        max_rel_error: 0.0,
        failures: 0,
    };
    for (li, p) in float.params.iter().enumerate() {
        let Some(p) = p else { continue };
        let g = grads.params[li]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("missing gradient".into()))?;
        for (which, len) in [(0, p.w.data.len()), (1, p.b.data.len())] {
            for e in 0..len {
                let nudge = |d: f64| {
                    let mut mm = float.clone();
                    let q = mm.params[li].as_mut().expect("layer params");
                    if which == 0 {
                        q.w.data[e] += d;
                    } else {
                        q.b.data[e] += d;
                    }
                    mm
                };
                let fd = (loss(&nudge(h))? - loss(&nudge(-h))?) / (2.0 * h);
                let got = if which == 0 { g.w.data[e] } else { g.b.data[e] };
                out.components += 1;
                if fd.abs() > threshold {
                    out.compared += 1;
                    let rel = (got - fd).abs() / fd.abs();
                    out.max_rel_error = out.max_rel_error.max(rel);
                    out.failures += (rel > tolerance) as usize;
                }
            }
        }
    }
    Ok(out)
}

/// Federated demo outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FederatedDemo {
    pub clients: usize,
    pub rounds: usize,
    pub centralized: f64,
    pub federated: f64,
    pub aggregators: Vec<usize>,
    /// Training rounds of each client session in the last federated round.
    pub training_rounds: Vec<u64>,
}

/// Noisy XOR split across `clients`; each federated round trains every
/// client's copy for `local_epochs`, and the result is compared with
/// centralized fixed-point training for `rounds * local_epochs` epochs.
pub fn federated_xor(
    clients: usize,
    k: usize,
    rounds: usize,
    local_epochs: usize,
    seed: u64,
) -> Result<FederatedDemo> {
    let pc = PrivateConfig::default();
    let d = xor_blobs(1200, 0.3, seed);
    let (tr, te) = d.split(200);
    let init = ModelSpec::mlp(&[2, 8, 1])
        .init(seed)?
        .to_fixed(pc.bits, pc.precision)?;
    let cfg = TrainConfig {
        epochs: rounds * local_epochs,
        batch_size: 10,
        lr: 0.1,
        momentum: 0.9,
        shuffle_seed: seed,
        allow_loss_reveal: false,
    };
    let f = |t: FloatTensor| t.to_fixed(pc.bits, pc.precision);
    let mut fx = Fixed {
        bits: pc.bits,
        precision: pc.precision,
    };
    let mut central = init.clone();
    train(
        &mut fx,
        &mut central,
        &f(tr.x_tensor()?)?,
        &f(tr.y_tensor()?)?,
        &cfg,
    )?;
    let xf = f(te.x_tensor()?)?;
    let mut acc = |m: &Model<RingTensor>| -> Result<f64> {
        Ok(accuracy(
            &labels_of(&predict(&mut fx, m, &xf)?, pc.precision, 1),
            &te.labels,
        ))
    };
    let centralized = acc(&central)?;
    let per = tr.len() / clients;
    let data: Vec<FlClient> = (0..clients)
        .map(|i| {
            let part = tr.subset(&(i * per..(i + 1) * per).collect::<Vec<_>>());
            Ok(FlClient {
                x: f(part.x_tensor()?)?,
                y: f(part.y_tensor()?)?,
            })
        })
        .collect::<Result<_>>()?;
    let topo = FlTopology::new(clients, k, seed)?;
    let mut state = FlState::new(&init, topo, pc.precision, seed)?;
    let local = TrainConfig {
        epochs: local_epochs,
        ..cfg
    };
    let mut aggregators = Vec::new();
    let mut training_rounds = Vec::new();
    for _ in 0..rounds {
        let rep = state.round(&data, &local, &pc)?;
        aggregators.push(rep.aggregator);
        training_rounds = rep.training.iter().map(|l| l.rounds()).collect();
    }
    let global = reconstruct_model(&state.copies[0][0], &state.copies[0][1])?;
    Ok(FederatedDemo {
        clients,
        rounds,
        centralized,
        federated: acc(&global)?,
        aggregators,
        training_rounds,
    })
}

/// Online phase of `count` batched comparisons.
pub fn comparison_smoke(count: usize, seed: u64) -> Result<(Duration, RoundLedger)> {
    let spec = BenchSpec {
        program: Program::Compare,
        batch: count,
        bits: 64,
        precision: 3,
        k: 32,
        seed,
    };
    let r = run_bench(&spec, &TransportChoice::Local)?;
    if r.agreement < 1.0 - 1e-3 {
        return Err(Error::InvalidArgument(format!(
            "comparison agreement {}",
            r.agreement
        )));
    }
    Ok((r.wall, r.ledger))
}

/// Elementwise product of two shared tensors, used by the examples.
pub fn private_product(a: &[f64], b: &[f64], precision: u32, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let xs = AdditiveShare::share_plain(a, vec![a.len()], 64, precision, &mut rng)?;
    let ys = AdditiveShare::share_plain(b, vec![b.len()], 64, precision, &mut rng)?;
    let mut s = Session::local_pair(seed);
    let (p, q) = run_pair(&mut s, |sess| {
        mul(sess, &xs[sess.party()], &ys[sess.party()])
    })?;
    AdditiveShare::reconstruct_plain(&p, &q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_small_domain() {
        let c = exhaustive_fss(5, 1).unwrap();
        assert_eq!(c.cases, 1024);
        assert_eq!((c.cmp_mismatches, c.eq_mismatches), (0, 0));
    }

    #[test]
    fn programs_round_trip_and_agree() {
        for p in Program::ALL {
            assert_eq!(p.name().parse::<Program>().unwrap(), p);
            let spec = BenchSpec {
                program: p,
                batch: 4,
                bits: 64,
                precision: 3,
                k: 32,
                seed: 9,
            };
            let r = run_bench(&spec, &TransportChoice::Local).unwrap();
            assert_eq!(r.agreement, 1.0, "{p}");
            assert_eq!(r.ledger.rounds(), p.expected_rounds(), "{p}");
        }
        assert!("tcp:".parse::<TransportChoice>().is_err());
        assert_eq!(
            "tcp:127.0.0.1:1".parse::<TransportChoice>().unwrap(),
            TransportChoice::Tcp("127.0.0.1:1".into())
        );
    }

    #[test]
    fn key_size_matches_formula() {
        let k = key_size(32, 16, 3).unwrap();
        assert_eq!(k.bytes_per_key, 824.0);
        assert!(k.bytes_per_key <= (1.10 * k.formula_bytes).ceil());
        assert!(k.baseline_bytes / k.bytes_per_key >= 2.4);
    }

    #[test]
    fn beaver_is_exact() {
        assert_eq!(beaver_mismatches(false, 10, 64, 1).unwrap(), 0);
        assert_eq!(beaver_mismatches(true, 10, 32, 2).unwrap(), 0);
    }

    #[test]
    fn sign_failures_track_magnitude() {
        let f = sign_failure_rate(2048, 16, 4000, 5).unwrap();
        assert!(f.sigmas() < 5.0, "{f:?}");
        assert_eq!(sign_failure_rate(0, 16, 1000, 6).unwrap().failures, 0);
    }
}
