//! `rabin-lab`: simulate, estimate, enumerate and verify from the shell.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rabin_mutex::adversary::CATALOG;
use rabin_mutex::analysis::{cond_tail_values, max_tail_exact, t34_series_bound, trunc_geom, unique_max_prob};
use rabin_mutex::experiment::suite::{theorem_suite, Report, SuiteConfig, SUITES};
use rabin_mutex::experiment::{
    enumerate_exact, estimate, run_spec_trial, EstimateResult, ExactResult, ExperimentError, Mode, EVENT_SYNTAX,
};
use rabin_mutex::{Probability, Rational};
use serde::Serialize;
use thiserror::Error;

mod config;
mod output;

use config::{default_seed, Config, Format, Layer};
use output::{emit, write_trace, write_trace_to, Tabular};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 3,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::UnknownSuite(_) | ExperimentError::Invalid(_) | ExperimentError::NonDeterministic(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rabin-lab", version, about = "Randomized mutual exclusion laboratory")]
#[command(after_help = "The default seed is read from RABIN_LAB_SEED when --seed is absent.\n\
Exit codes: 0 success, 1 a verified property failed, 2 usage or configuration error, 3 runtime error.")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one trace and write it as line-delimited JSON
    Simulate(Layer),
    /// Monte Carlo estimate of P[target | condition]
    Estimate(Layer),
    /// Exact P[target | condition] by enumerating the choice tree
    Exact(Layer),
    /// Closed-form distributions and bounds
    Dist(DistArgs),
    /// Run a named scenario suite and report its checks
    Verify(VerifyArgs),
    /// List adversaries, predicates, suites or variants
    List {
        #[arg(value_enum)]
        what: ListWhat,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DistKind {
    /// Truncated geometric lottery distribution on 1..=b
    TruncGeom,
    /// P[max of s draws >= v]
    MaxTail,
    /// P[exactly one of m draws holds the maximum]
    UniqueMax,
    /// Series bound used for the lockout argument
    T34Bound,
    /// P[B >= x | B <= A] against P[B >= x]
    CondTail,
}

#[derive(clap::Args, Debug)]
struct DistArgs {
    #[arg(value_enum)]
    kind: DistKind,
    #[arg(long)]
    b: Option<u32>,
    #[arg(long)]
    s: Option<u64>,
    #[arg(long)]
    v: Option<i64>,
    #[arg(long)]
    m: Option<u64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    r: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(clap::Args, Debug)]
struct VerifyArgs {
    /// Suite id; see `list suites`
    suite: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the suite's main trial count
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ListWhat {
    Adversaries,
    Predicates,
    Suites,
    Variants,
}

#[derive(Serialize)]
struct TraceHeader<'a> {
    config: &'a Config,
    params: &'a rabin_mutex::protocol::ProtocolParams,
    seed: u64,
    adversary: &'a rabin_mutex::adversary::AdversarySpec,
    stop: rabin_mutex::engine::StopReason,
    steps: usize,
}

#[derive(Serialize)]
struct EstimateOut {
    config: Config,
    result: EstimateResult,
}

impl Tabular for EstimateOut {
    fn header(&self) -> Vec<String> {
        ["estimate", "ci_low", "ci_high", "std_error", "trials", "accepted", "successes", "horizon_exhausted", "seed"]
            .map(String::from)
            .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let r = &self.result;
        vec![vec![
            r.estimate.to_string(),
            r.ci.0.to_string(),
            r.ci.1.to_string(),
            r.std_error.to_string(),
            r.trials.to_string(),
            r.accepted.to_string(),
            r.successes.to_string(),
            r.horizon_exhausted.to_string(),
            r.seed.to_string(),
        ]]
    }
}

#[derive(Serialize)]
struct ExactOut {
    config: Config,
    probability_f64: f64,
    result: ExactResult,
}

impl Tabular for ExactOut {
    fn header(&self) -> Vec<String> {
        ["probability", "probability_f64", "leaves", "conditioning_mass", "joint_mass", "total_mass"]
            .map(String::from)
            .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let r = &self.result;
        vec![vec![
            r.probability.to_string(),
            self.probability_f64.to_string(),
            r.leaves.to_string(),
            r.conditioning_mass.to_string(),
            r.joint_mass.to_string(),
            r.total_mass.to_string(),
        ]]
    }
}

/// Result of `dist`: a small table plus the inputs that produced it.
#[derive(Serialize)]
struct DistOut {
    quantity: &'static str,
    inputs: BTreeMap<&'static str, String>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    holds: Option<bool>,
}

impl Tabular for DistOut {
    fn header(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.to_string()).collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows.clone()
    }
}

impl Tabular for Report {
    fn header(&self) -> Vec<String> {
        ["suite", "check", "pass", "detail"].map(String::from).to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.checks
            .iter()
            .map(|c| vec![self.id.clone(), c.name.clone(), c.pass.to_string(), c.detail.clone()])
            .collect()
    }
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn exact_cell(p: &Rational) -> [String; 2] {
    [p.to_string(), p.to_f64().to_string()]
}

fn run_dist(a: &DistArgs) -> Result<DistOut, CliError> {
    let mut inputs = BTreeMap::new();
    let out = match a.kind {
        DistKind::TruncGeom => {
            let b = need(a.b, "b")?;
            if b == 0 {
                return Err(CliError::Usage("--b must be at least 1".into()));
            }
            inputs.insert("b", b.to_string());
            let d = trunc_geom::<Rational>(b);
            let rows = d.iter().map(|(v, m)| [vec![v.to_string()], exact_cell(m).to_vec()].concat()).collect();
            DistOut { quantity: "trunc-geom", inputs, columns: vec!["value", "mass", "mass_f64"], rows, holds: None }
        }
        DistKind::MaxTail => {
            let s = need(a.s, "s")?;
            let v = need(a.v, "v")?;
            if s == 0 {
                return Err(CliError::Usage("--s must be at least 1".into()));
            }
            inputs.insert("s", s.to_string());
            inputs.insert("v", v.to_string());
            if let Some(b) = a.b {
                inputs.insert("b", b.to_string());
            }
            let p = max_tail_exact::<Rational>(s, v, a.b);
            DistOut {
                quantity: "max-tail",
                inputs,
                columns: vec!["probability", "probability_f64"],
                rows: vec![exact_cell(&p).to_vec()],
                holds: None,
            }
        }
        DistKind::UniqueMax => {
            let m = need(a.m, "m")?;
            let b = need(a.b, "b")?;
            if m == 0 || b == 0 {
                return Err(CliError::Usage("--m and --b must be at least 1".into()));
            }
            inputs.insert("m", m.to_string());
            inputs.insert("b", b.to_string());
            let p = unique_max_prob::<Rational>(m, b);
            DistOut {
                quantity: "unique-max",
                inputs,
                columns: vec!["probability", "probability_f64"],
                rows: vec![exact_cell(&p).to_vec()],
                holds: None,
            }
        }
        DistKind::T34Bound => {
            let n = need(a.n, "n")?;
            let r = need(a.r, "r")?;
            let eta = need(a.eta, "eta")?;
            inputs.insert("n", n.to_string());
            inputs.insert("r", r.to_string());
            inputs.insert("eta", eta.to_string());
            let sb = t34_series_bound(n, r, eta).map_err(|e| CliError::Usage(e.to_string()))?;
            DistOut {
                quantity: "t34-bound",
                inputs,
                columns: vec!["series", "bound", "holds"],
                rows: vec![vec![sb.series.to_string(), sb.bound.to_string(), sb.holds().to_string()]],
                holds: Some(sb.holds()),
            }
        }
        DistKind::CondTail => {
            let b = need(a.b, "b")?;
            let s = a.s.unwrap_or(1);
            if b == 0 || s == 0 {
                return Err(CliError::Usage("--b and --s must be at least 1".into()));
            }
            inputs.insert("b", b.to_string());
            inputs.insert("s", s.to_string());
            // B is one draw, A the maximum of s independent draws.
            let one = trunc_geom::<Rational>(b);
            let values = cond_tail_values(&one, &one.max_of(s));
            let holds = values.iter().all(|(_, c, u)| c <= u);
            let rows = values
                .iter()
                .map(|(x, c, u)| [vec![x.to_string()], exact_cell(c).to_vec(), exact_cell(u).to_vec()].concat())
                .collect();
            DistOut {
                quantity: "cond-tail",
                inputs,
                columns: vec!["x", "conditional", "conditional_f64", "unconditional", "unconditional_f64"],
                rows,
                holds: Some(holds),
            }
        }
    };
    Ok(out)
}

fn list(what: ListWhat) {
    match what {
        ListWhat::Adversaries => {
            for e in CATALOG {
                println!("{:<20} {}", e.name, e.summary);
                for (k, doc) in e.params {
                    println!("    {k:<12} {doc}");
                }
            }
        }
        ListWhat::Predicates => {
            for (syntax, doc) in EVENT_SYNTAX {
                println!("{syntax:<28} {doc}");
            }
        }
        ListWhat::Suites => {
            for (id, doc) in SUITES {
                println!("{id:<14} {doc}");
            }
        }
        ListWhat::Variants => {
            println!("optimized     redraw on a round change or when the shared value is lower");
            println!("deoptimized   redraw only on a round change");
            println!("ben-or        boolean lottery with two round numbers");
        }
    }
}

/// Returns whether the checked property held; `Ok(true)` when there is none.
fn run(cmd: Cmd) -> Result<bool, CliError> {
    match cmd {
        Cmd::Simulate(layer) => {
            let c = layer.resolve(false)?;
            let spec = c.spec(Mode::Montecarlo)?;
            let trace = run_spec_trial(&spec, c.seed)?;
            let header = TraceHeader {
                config: &c,
                params: &trace.params,
                seed: c.seed,
                adversary: &spec.adversary,
                stop: trace.stop,
                steps: trace.steps.len(),
            };
            match &c.out {
                Some(path) => write_trace(&trace, &header, path)?,
                None => {
                    let mut w = std::io::BufWriter::new(std::io::stdout().lock());
                    match write_trace_to(&mut w, &header, &trace) {
                        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                            return Err(CliError::Runtime(e.to_string()))
                        }
                        _ => {}
                    }
                }
            }
            Ok(true)
        }
        Cmd::Estimate(layer) => {
            let c = layer.resolve(true)?;
            let result = estimate(&c.spec(Mode::Montecarlo)?)?;
            let (format, out) = (c.format, c.out.clone());
            emit(&EstimateOut { config: c, result }, format, out.as_deref())?;
            Ok(true)
        }
        Cmd::Exact(layer) => {
            let c = layer.resolve(true)?;
            let result = enumerate_exact(&c.spec(Mode::Exact)?)?;
            let (format, out) = (c.format, c.out.clone());
            emit(&ExactOut { probability_f64: result.probability.to_f64(), config: c, result }, format, out.as_deref())?;
            Ok(true)
        }
        Cmd::Dist(a) => {
            let d = run_dist(&a)?;
            emit(&d, a.format, a.out.as_deref())?;
            Ok(d.holds.unwrap_or(true))
        }
        Cmd::Verify(a) => {
            let seed = match a.seed {
                Some(s) => s,
                None => default_seed()?,
            };
            let cfg = SuiteConfig { seed, trials: a.trials, workers: a.workers };
            let report = theorem_suite(&a.suite, &cfg)?;
            emit(&report, a.format, a.out.as_deref())?;
            for c in report.failed_checks() {
                eprintln!("FAIL {}: {}", c.name, c.detail);
            }
            Ok(report.pass)
        }
        Cmd::List { what } => {
            list(what);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
