//! The `ariann` command line tool.
//!
//! Every subcommand writes JSON-lines records (see [`crate::report`]) to
//! stdout or to `--report`, and a short human summary to stderr.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 protocol
//! abort, 3 a result disagreed with its plaintext oracle.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::experiments::{self, BenchSpec, Program, Task, TransportChoice};
use crate::federated::FlConfig;
use crate::fss::{gen_cmp_batch, gen_eq_batch, FssParams, KeyBatch};
use crate::report::{validate_report, Record, SCHEMA};
use crate::runtime::{PrepBundle, PrepStore, Session};
use crate::train::PrivateConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ariann",
    version,
    about = "Private neural network evaluation and training with function secret sharing"
)]
pub struct Cli {
    /// Append records to this file instead of printing them.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check comparison and equality keys, or run batched private comparisons.
    Compare(CompareArgs),
    /// Run one private operation as dealer, party or all three roles.
    #[command(alias = "run")]
    Bench(BenchArgs),
    /// Agreement of private and plaintext labels as the comparison domain shrinks.
    PrecisionSweep(SweepArgs),
    /// Train the same model in plaintext, fixed point and privately.
    DemoTrain(TrainArgs),
    /// Evaluate a plaintext-trained model in all three modes.
    Infer(InferArgs),
    /// Federated training of noisy XOR across several clients.
    FlDemo(FlArgs),
    /// Generate a batch of function keys.
    Keygen(KeygenArgs),
    /// Validate a report file, or print the record schema.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Domain width in bits.
    #[arg(long, default_value_t = 8)]
    pub n: u32,
    /// Check every (alpha, x) pair of the domain.
    #[arg(long)]
    pub exhaustive: bool,
    /// Comparisons to run when not exhaustive.
    #[arg(long, default_value_t = 1000)]
    pub batch: usize,
    #[arg(long, default_value = "local")]
    pub transport: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    AllInOne,
    Dealer,
    Party0,
    Party1,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "all-in-one")]
    pub role: Role,
    /// compare, relu, argmax, maxpool, maxpool-k2, matmul or conv.
    #[arg(long)]
    pub program: String,
    #[arg(long, default_value_t = 1000)]
    pub batch: usize,
    /// `local` or `tcp:host:port`.
    #[arg(long, default_value = "local")]
    pub transport: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Arithmetic ring width.
    #[arg(long, default_value_t = 64)]
    pub bits: u32,
    /// Decimal digits of the fixed-point encoding.
    #[arg(long, default_value_t = 3)]
    pub precision: u32,
    /// Comparison domain width.
    #[arg(long, default_value_t = 32)]
    pub k: u32,
    /// Where the dealer writes and the parties read preprocessing.
    #[arg(long)]
    pub prep_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "toy-mlp")]
    pub model: String,
    /// Comparison domain widths to try.
    #[arg(long, value_delimiter = ',', default_value = "12,16,20,24,28,32")]
    pub ks: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub precisions: Vec<u32>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// xor or moons.
    #[arg(long, default_value = "xor")]
    pub task: String,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub precision: u32,
    #[arg(long, default_value_t = 32)]
    pub k: u32,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub precision: u32,
    #[arg(long, default_value_t = 32)]
    pub k: u32,
}

#[derive(Debug, Args)]
pub struct FlArgs {
    /// Topology file with `n`, `k`, `seed` and optional `client.<i>` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, default_value_t = 2)]
    pub local_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KeyKindArg {
    Cmp,
    Eq,
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    #[arg(long, value_enum, default_value = "cmp")]
    pub kind: KeyKindArg,
    #[arg(long, default_value_t = 32)]
    pub n: u32,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix: writes `<out>.party0` and `<out>.party1`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report to validate; prints the schema when omitted.
    pub file: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut out: Box<dyn Write> = match &cli.report {
        Some(p) => match OpenOptions::new().create(true).append(true).open(p) {
            Ok(f) => Box::new(f),
            Err(e) => {
                eprintln!("error: cannot open {}: {e}", p.display());
                return EXIT_USAGE;
            }
        },
        None => Box::new(std::io::stdout()),
    };
    match dispatch(&cli.command, out.as_mut()) {
        Ok(Outcome::Pass) => EXIT_OK,
        Ok(Outcome::Mismatch(msg)) => {
            eprintln!("mismatch: {msg}");
            EXIT_MISMATCH
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Transport(_)
        | Error::Timeout(_)
        | Error::Desync { .. }
        | Error::PeerAborted(_)
        | Error::SessionClosed
        | Error::AuditFailed(_)
        | Error::FederatedAbort(_)
        | Error::Reuse { .. }
        | Error::PrepExhausted(_) => EXIT_ABORT,
        _ => EXIT_USAGE,
    }
}

/// Whether the command's results matched their oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Pass,
    Mismatch(String),
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Mismatch(msg())
    }
}

pub fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<Outcome> {
    match cmd {
        Command::Compare(a) => compare(a, out),
        Command::Bench(a) => bench(a, out),
        Command::PrecisionSweep(a) => sweep(a, out),
        Command::DemoTrain(a) => demo_train(a, out),
        Command::Infer(a) => infer(a, out),
        Command::FlDemo(a) => fl_demo(a, out),
        Command::Keygen(a) => keygen(a, out),
        Command::Report(a) => report(a, out),
    }
}

fn compare(a: &CompareArgs, out: &mut dyn Write) -> Result<Outcome> {
    let transport: TransportChoice = a.transport.parse()?;
    if a.exhaustive {
        let start = Instant::now();
        let c = experiments::exhaustive_fss(a.n, a.seed)?;
        let bad = c.cmp_mismatches + c.eq_mismatches;
        Record::new("fss-exhaustive")
            .wall(start.elapsed())
            .agreement(1.0 - bad as f64 / (2 * c.cases) as f64)
            .with_all(c)
            .write(out)?;
        eprintln!(
            "n={}: {} cases, {} comparison and {} equality mismatches",
            a.n, c.cases, c.cmp_mismatches, c.eq_mismatches
        );
        return Ok(check(bad == 0, || format!("{bad} mismatches")));
    }
    let spec = BenchSpec {
        program: Program::Compare,
        batch: a.batch,
        bits: 64,
        precision: 0,
        k: a.n,
        seed: a.seed,
    };
    bench_all_in_one(&spec, &transport, out)
}

fn bench_spec(a: &BenchArgs) -> Result<BenchSpec> {
    let program: Program = a.program.parse()?;
    if a.batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    FssParams::new(a.k, a.bits)?;
    Ok(BenchSpec {
        program,
        batch: a.batch,
        bits: a.bits,
        precision: a.precision,
        k: a.k,
        seed: a.seed,
    })
}

fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<Outcome> {
    let spec = bench_spec(a)?;
    let transport: TransportChoice = a.transport.parse()?;
    match a.role {
        Role::AllInOne => bench_all_in_one(&spec, &transport, out),
        Role::Dealer => {
            let dir = a
                .prep_dir
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("dealer needs --prep-dir".into()))?;
            bench_dealer(&spec, dir, out)
        }
        Role::Party0 | Role::Party1 => {
            let dir = a
                .prep_dir
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("parties need --prep-dir".into()))?;
            let TransportChoice::Tcp(addr) = transport else {
                return Err(Error::InvalidArgument(
                    "a single party needs --transport tcp:host:port".into(),
                ));
            };
            bench_party(
                &spec,
                if a.role == Role::Party0 { 0 } else { 1 },
                dir,
                &addr,
                out,
            )
        }
    }
}

fn spec_record(op: &str, spec: &BenchSpec) -> Record {
    Record::new(op)
        .with("program", spec.program)
        .with("batch", spec.batch)
        .with("bits", spec.bits)
        .with("precision", spec.precision)
        .with("k", spec.k)
        .with("seed", spec.seed)
        .with("expected_rounds", spec.program.expected_rounds())
}

fn bench_all_in_one(
    spec: &BenchSpec,
    transport: &TransportChoice,
    out: &mut dyn Write,
) -> Result<Outcome> {
    let r = experiments::run_bench(spec, transport)?;
    let name = match transport {
        TransportChoice::Local => "local",
        TransportChoice::Tcp(_) => "tcp",
    };
    spec_record(spec.program.name(), spec)
        .ledger(&r.ledger)
        .wall(r.wall)
        .agreement(r.agreement)
        .with("transport", name)
        .write(out)?;
    eprintln!(
        "{} x{}: {} rounds, {} bytes sent, {:.1} ms, agreement {:.4}",
        spec.program,
        spec.batch,
        r.ledger.rounds(),
        r.ledger.total.bytes_sent,
        r.wall.as_secs_f64() * 1e3,
        r.agreement
    );
    Ok(check(
        r.agreement == 1.0 && r.ledger.rounds() == spec.program.expected_rounds(),
        || {
            format!(
                "agreement {} over {} rounds",
                r.agreement,
                r.ledger.rounds()
            )
        },
    ))
}

fn prep_path(dir: &Path, party: usize) -> PathBuf {
    dir.join(format!("party{party}.prep"))
}

fn bench_dealer(spec: &BenchSpec, dir: &Path, out: &mut dyn Write) -> Result<Outcome> {
    let start = Instant::now();
    let bundles = crate::runtime::Dealer::new(spec.seed ^ 0xdea1).deal(&spec.plan()?)?;
    fs::create_dir_all(dir)?;
    let mut sizes = Vec::new();
    for (p, b) in bundles.iter().enumerate() {
        let bytes = b.to_bytes(p)?;
        sizes.push(bytes.len());
        fs::write(prep_path(dir, p), bytes)?;
    }
    spec_record("dealer", spec)
        .wall(start.elapsed())
        .with("bundle_bytes", &sizes)
        .write(out)?;
    eprintln!(
        "wrote {} and {}",
        prep_path(dir, 0).display(),
        prep_path(dir, 1).display()
    );
    Ok(Outcome::Pass)
}

fn bench_party(
    spec: &BenchSpec,
    party: usize,
    dir: &Path,
    addr: &str,
    out: &mut dyn Write,
) -> Result<Outcome> {
    let (owner, bundle) = PrepBundle::from_bytes(&fs::read(prep_path(dir, party))?)?;
    if owner != party {
        return Err(Error::Format(format!("bundle belongs to party {owner}")));
    }
    let inputs = spec.inputs()?;
    let (x, w) = spec.shares(&inputs)[party].clone();
    let mut sess = Session::tcp(party, addr, PrepStore::preloaded(party, bundle))?;
    let run = |sess: &mut Session| -> Result<_> {
        sess.handshake(&format!(
            "{}/{}/{}/{}/{}/{}",
            spec.program, spec.batch, spec.bits, spec.precision, spec.k, spec.seed
        ))?;
        sess.ledger_mut().reset();
        let start = Instant::now();
        let y = spec.run(sess, &x, w.as_ref())?;
        let wall = start.elapsed();
        let ledger = sess.ledger().clone();
        let opened = sess.reveal(&y)?;
        Ok((ledger, wall, opened))
    };
    let (ledger, wall, opened) = match run(&mut sess) {
        Ok(v) => v,
        Err(e) => {
            sess.abort(&e.to_string());
            return Err(e);
        }
    };
    let (want, tol) = spec.oracle(&inputs)?;
    let agreement = experiments::agreement(&opened.signed_values(), &want, tol);
    spec_record(spec.program.name(), spec)
        .ledger(&ledger)
        .wall(wall)
        .agreement(agreement)
        .with("party", party)
        .with("transport", "tcp")
        .write(out)?;
    eprintln!(
        "party {party}: {} rounds, agreement {agreement:.4}",
        ledger.rounds()
    );
    Ok(check(
        agreement == 1.0 && ledger.rounds() == spec.program.expected_rounds(),
        || format!("agreement {agreement} over {} rounds", ledger.rounds()),
    ))
}

fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<Outcome> {
    if a.model != "toy-mlp" {
        return Err(Error::InvalidArgument(format!(
            "unknown model {}; only toy-mlp is available",
            a.model
        )));
    }
    for &p in &a.precisions {
        let start = Instant::now();
        for row in experiments::precision_sweep(&a.ks, p, a.seed)? {
            Record::new("precision-sweep")
                .wall(start.elapsed())
                .agreement(row.agreement)
                .with_all(row)
                .write(out)?;
            eprintln!(
                "k={:>2} precision={}: agreement {:5.1}%, accuracy {:5.1}%",
                row.k,
                p,
                100.0 * row.agreement,
                100.0 * row.accuracy
            );
        }
    }
    Ok(Outcome::Pass)
}

fn private_config(precision: u32, k: u32, seed: u64) -> Result<PrivateConfig> {
    FssParams::new(k, 64)?;
    Ok(PrivateConfig {
        precision,
        k,
        dealer_seed: seed ^ 0xdea1,
        share_seed: seed ^ 0x5eed,
        ..PrivateConfig::default()
    })
}

fn demo_train(a: &TrainArgs, out: &mut dyn Write) -> Result<Outcome> {
    let task: Task = a.task.parse()?;
    let pc = private_config(a.precision, a.k, a.seed)?;
    let start = Instant::now();
    let (p, ledger) = experiments::training_parity(task, a.test, a.epochs, &pc, a.seed)?;
    Record::new("demo-train")
        .ledger(&ledger)
        .wall(start.elapsed())
        .agreement(p.agreement)
        .with("task", task)
        .with("epochs", a.epochs)
        .with("seed", a.seed)
        .with_all(p)
        .write(out)?;
    eprintln!(
        "{:?} after {} epochs: plaintext {:.1}%, fixed point {:.1}%, private {:.1}%",
        task,
        a.epochs,
        100.0 * p.plaintext,
        100.0 * p.fixed,
        100.0 * p.private
    );
    Ok(Outcome::Pass)
}

fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<Outcome> {
    let pc = private_config(a.precision, a.k, a.seed)?;
    let start = Instant::now();
    let p = experiments::inference_parity(a.samples, &pc, a.seed)?;
    Record::new("infer")
        .wall(start.elapsed())
        .agreement(p.agreement)
        .with_all(p)
        .write(out)?;
    eprintln!(
        "{} samples: plaintext {:.1}%, fixed point {:.1}%, private {:.1}%, private/fixed agreement {:.2}%",
        p.samples,
        100.0 * p.plaintext,
        100.0 * p.fixed,
        100.0 * p.private,
        100.0 * p.agreement
    );
    Ok(Outcome::Pass)
}

fn fl_demo(a: &FlArgs, out: &mut dyn Write) -> Result<Outcome> {
    let (n, k, seed) = match &a.config {
        Some(p) => {
            let cfg = FlConfig::parse(&fs::read_to_string(p)?)?;
            (cfg.n, cfg.k, cfg.seed)
        }
        None => (2, 1, a.seed),
    };
    let start = Instant::now();
    let d = experiments::federated_xor(n, k, a.rounds, a.local_epochs, seed)?;
    Record::new("fl-demo")
        .wall(start.elapsed())
        .with("k", k)
        .with_all(&d)
        .write(out)?;
    eprintln!(
        "{} clients, {} rounds: federated {:.1}%, centralized {:.1}%",
        d.clients,
        d.rounds,
        100.0 * d.federated,
        100.0 * d.centralized
    );
    Ok(Outcome::Pass)
}

fn keygen(a: &KeygenArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let start = Instant::now();
    let kb = match a.kind {
        KeyKindArg::Cmp => {
            let ([k0, k1], _) =
                gen_cmp_batch(FssParams::uniform(a.n)?, a.count, 0, false, &mut rng)?;
            KeyBatch::from_cmp(&[&k0, &k1])?
        }
        KeyKindArg::Eq => {
            let ([k0, k1], _) =
                gen_eq_batch(FssParams::uniform(a.n)?, a.count, 0, false, &mut rng)?;
            KeyBatch::from_eq(&[&k0, &k1])?
        }
    };
    let mut sizes = Vec::new();
    for p in 0..2 {
        let path = PathBuf::from(format!("{}.party{p}", a.out.display()));
        let part = kb.for_party(p)?;
        part.write_file(&path)?;
        sizes.push(fs::metadata(&path)?.len());
    }
    let per_key =
        kb.payloads[0].as_ref().map(|p| p.len()).unwrap_or(0) as f64 / a.count.max(1) as f64;
    Record::new("keygen")
        .wall(start.elapsed())
        .with("kind", format!("{:?}", a.kind).to_lowercase())
        .with("n", a.n)
        .with("count", a.count)
        .with("file_bytes", &sizes)
        .with("bytes_per_key", per_key)
        .write(out)?;
    eprintln!("{} keys, {per_key} bytes each", a.count);
    Ok(Outcome::Pass)
}

fn report(a: &ReportArgs, out: &mut dyn Write) -> Result<Outcome> {
    match &a.file {
        None => {
            writeln!(out, "{SCHEMA}")?;
            Ok(Outcome::Pass)
        }
        Some(p) => {
            let n = validate_report(&fs::read_to_string(p)?)?;
            eprintln!("{n} valid records");
            Ok(Outcome::Pass)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String) {
        let cli = match Cli::try_parse_from(std::iter::once("ariann").chain(args.iter().copied())) {
            Ok(c) => c,
            Err(e) => {
                return (
                    if e.use_stderr() { EXIT_USAGE } else { EXIT_OK },
                    String::new(),
                )
            }
        };
        let mut buf = Vec::new();
        let code = match dispatch(&cli.command, &mut buf) {
            Ok(Outcome::Pass) => EXIT_OK,
            Ok(Outcome::Mismatch(_)) => EXIT_MISMATCH,
            Err(e) => exit_code(&e),
        };
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn exhaustive_compare_reports_zero_mismatches() {
        let (code, out) = run(&["compare", "--n", "6", "--exhaustive"]);
        assert_eq!(code, 0);
        let v = crate::report::validate_line(out.trim()).unwrap();
        assert_eq!(v["cases"], 4096);
        assert_eq!(v["cmp_mismatches"], 0);
    }

    #[test]
    fn bench_reports_rounds() {
        let (code, out) = run(&["bench", "--program", "relu", "--batch", "50"]);
        assert_eq!(code, 0);
        let v = crate::report::validate_line(out.trim()).unwrap();
        assert_eq!(v["rounds"], 2);
        assert_eq!(v["agreement"], 1.0);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(&["bench"]).0, EXIT_USAGE);
        assert_eq!(run(&["bench", "--program", "softmax"]).0, EXIT_USAGE);
        assert_eq!(
            run(&["bench", "--program", "relu", "--transport", "udp"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run(&["bench", "--program", "relu", "--role", "party0"]).0,
            EXIT_USAGE
        );
        assert_eq!(run(&["--help"]).0, EXIT_OK);
        assert_eq!(main_with_args(["ariann", "frobnicate"]), EXIT_USAGE);
    }

    #[test]
    fn demo_train_is_deterministic() {
        let args = [
            "demo-train",
            "--task",
            "xor",
            "--epochs",
            "1",
            "--test",
            "50",
            "--seed",
            "4",
        ];
        let strip = |s: String| {
            let mut v: serde_json::Value = serde_json::from_str(s.trim()).unwrap();
            v["wall_ms"] = 0.into();
            v
        };
        let (c1, a) = run(&args);
        let (c2, b) = run(&args);
        assert_eq!((c1, c2), (0, 0));
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn schema_is_printed() {
        let (code, out) = run(&["report"]);
        assert_eq!(code, 0);
        assert!(out.contains("\"required\""));
    }
}
