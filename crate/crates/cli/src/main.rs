//! `delaymargin`: robustness margins for linear systems with time-varying delays.
//!
//! Exit codes: 0 success (verdicts are data), 2 invalid input, 3 inconclusive
//! stability certificate, 4 numerical failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use delaymargin::analysis::{self, AnalysisConfig, AnalysisError, AnalysisReport, AnalyzeOptions};
use delaymargin::feedback::GainSelection;
use delaymargin::freq::Verdict;
use delaymargin::io::{load_system, parse_json, LoadedSystem};
use delaymargin::margins::{extended, MarginReport};
use delaymargin::model::{Controller, DelayRealization};
use delaymargin::simulate::{self, falsify::perturbed_closed_loop, InputSignal, SimError, TimeSeries};

const EXIT_INPUT: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "delaymargin", version, about = "Robustness margins for linear systems with time-varying delays")]
struct Cli {
    /// JSON file overriding tolerances and sweep parameters.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify stability, compute gains and evaluate every applicable margin.
    Analyze {
        system: PathBuf,
        /// Gain families: l2, linf or all.
        #[arg(long, default_value = "all")]
        gains: GainSelection,
        /// Restrict the margin checks to one theorem id.
        #[arg(long)]
        theorem: Option<String>,
        /// Simulate random delay realizations inside every admissible margin.
        #[arg(long)]
        falsify: bool,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one margin theorem, including the largest admissible scaling.
    Margin {
        system: PathBuf,
        #[arg(long)]
        theorem: String,
        /// Controller JSON (`{"kernel": [...]}`), replacing any in the system file.
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        gains: GainSelection,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the system for one delay realization and input; CSV output.
    Simulate {
        system: PathBuf,
        /// Delay realization as a JSON file or inline JSON; nominal delays by default.
        #[arg(long)]
        delays: Option<String>,
        /// zero, step[:A], sin:A:OMEGA, switch:A:DWELL:SEED, inline JSON or a JSON file.
        #[arg(long, default_value = "step:1")]
        input: String,
        /// Horizon.
        #[arg(long = "T", default_value_t = 20.0)]
        t_end: f64,
        /// Step; a twentieth of the smallest delay by default.
        #[arg(long)]
        dt: Option<f64>,
        /// Write the CSV here; the summary then goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the delayed-integrator example and compare with the reference values.
    Reproduce {
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self { code: EXIT_INPUT, message: message.to_string() }
    }

    fn numeric(message: impl ToString) -> Self {
        Self { code: EXIT_NUMERIC, message: message.to_string() }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        if e.is_input() {
            Failure::input(e)
        } else {
            Failure::numeric(e)
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Csv(_) => Failure::numeric(e),
            _ => Failure::input(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    configure_threads()?;
    let cfg = match &cli.config {
        Some(p) => parse_json::<AnalysisConfig>(&p.display().to_string(), &read(p)?).map_err(Failure::input)?,
        None => AnalysisConfig::default(),
    };
    match cli.command {
        Command::Analyze { system, gains, theorem, falsify, out } => {
            let (text, loaded) = load(&system)?;
            let opts = AnalyzeOptions { gains, theorem, falsify };
            let mut report = analysis::analyze(&loaded.system, &loaded.perturbation, loaded.controller.as_ref(), &opts, &cfg)?;
            report.system_hash = Some(hash(&text));
            emit_json(&report, out.as_deref())?;
            Ok(stability_code(&report))
        }
        Command::Margin { system, theorem, controller, gains, out } => {
            let (text, mut loaded) = load(&system)?;
            if let Some(path) = controller {
                let ctrl: Controller = parse_json(&path.display().to_string(), &read(&path)?).map_err(Failure::input)?;
                ctrl.check(&loaded.system).map_err(Failure::input)?;
                loaded.controller = Some(ctrl);
            }
            let opts = AnalyzeOptions { gains, theorem: Some(theorem.clone()), falsify: false };
            let report = analysis::analyze(&loaded.system, &loaded.perturbation, loaded.controller.as_ref(), &opts, &cfg)?;
            let code = stability_code(&report);
            let out_doc = MarginOutput {
                system_hash: hash(&text),
                margin: report.margins.into_iter().next(),
                skipped: report.skipped.into_iter().next().map(|s| s.reason),
                stability: report.stability.verdict,
                closed_loop_stability: report.closed_loop.as_ref().map(|c| c.certificate.verdict),
                notes: report.notes,
            };
            emit_json(&out_doc, out.as_deref())?;
            Ok(code)
        }
        Command::Simulate { system, delays, input, t_end, dt, out } => {
            let (_, loaded) = load(&system)?;
            simulate_cmd(&loaded, delays.as_deref(), &input, t_end, dt, out.as_deref())
        }
        Command::Reproduce { out, json } => {
            let r = analysis::reproduce(&cfg)?;
            if json {
                emit_json(&r, None)?;
            } else {
                print!("{}", r.render());
            }
            if let Some(p) = out {
                write_atomic(&p, &to_json(&r)?)?;
            }
            Ok(0)
        }
    }
}

/// A single-theorem result; `margin` is absent when the theorem was skipped.
#[derive(Serialize)]
struct MarginOutput {
    system_hash: String,
    margin: Option<MarginReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
    stability: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_loop_stability: Option<Verdict>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct SimulationSummary {
    t_end: f64,
    dt: f64,
    samples: usize,
    #[serde(serialize_with = "extended::serialize")]
    linf_x: f64,
    #[serde(serialize_with = "extended::serialize")]
    l2_x: f64,
    linf_u: f64,
    /// Growth rate of the state-derivative envelope over the second half;
    /// positive while instability or an unsettled transient dominates.
    #[serde(skip_serializing_if = "Option::is_none")]
    growth_rate: Option<f64>,
    /// The state crossed the divergence threshold.
    diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    divergence_time: Option<f64>,
}

fn simulate_cmd(
    loaded: &LoadedSystem,
    delays: Option<&str>,
    input: &str,
    t_end: f64,
    dt: Option<f64>,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let sys = &loaded.system;
    let real = match delays {
        None => DelayRealization::nominal(sys),
        Some(spec) => {
            let (name, text) = inline_or_file(spec)?;
            parse_json::<DelayRealization>(&name, &text).map_err(Failure::input)?
        }
    };
    real.check(sys, None).map_err(Failure::input)?;
    let signal = parse_input(input)?;
    let dt = dt.unwrap_or_else(|| simulate::suggested_step(&real));
    let ts: TimeSeries = match &loaded.controller {
        Some(k) => {
            let (cl, cl_real) = perturbed_closed_loop(sys, k, &real)?;
            simulate::integrate(&cl, &cl_real, &signal, t_end, dt)?
        }
        None => simulate::integrate(sys, &real, &signal, t_end, dt)?,
    };
    let summary = SimulationSummary {
        t_end,
        dt,
        samples: ts.len(),
        linf_x: ts.linf_x(),
        l2_x: ts.l2_x(),
        linf_u: ts.linf_u(),
        growth_rate: ts.growth_rate(),
        diverged: ts.divergence.is_some(),
        divergence_time: ts.divergence,
    };
    let mut csv = Vec::new();
    ts.write_csv(&mut csv)?;
    match out {
        Some(p) => {
            write_atomic(p, &csv)?;
            emit_json(&summary, None)?;
        }
        None => {
            io::stdout().write_all(&csv).map_err(Failure::numeric)?;
            eprintln!("{}", String::from_utf8_lossy(&to_json(&summary)?).trim_end());
        }
    }
    Ok(0)
}

fn parse_input(spec: &str) -> Result<InputSignal, Failure> {
    let bad = || Failure::input(format!("input '{spec}': expected zero, step[:A], sin:A:OMEGA, switch:A:DWELL:SEED or JSON"));
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |i: usize| parts.get(i).ok_or_else(bad)?.parse::<f64>().map_err(|_| bad());
    match parts[0] {
        "zero" if parts.len() == 1 => Ok(InputSignal::zero()),
        "step" if parts.len() == 1 => Ok(InputSignal::step(1.0)),
        "step" if parts.len() == 2 => Ok(InputSignal::step(num(1)?)),
        "sin" if parts.len() == 3 => Ok(InputSignal::sinusoid(num(1)?, num(2)?)),
        "switch" if parts.len() == 4 => {
            let seed = parts[3].parse::<u64>().map_err(|_| bad())?;
            Ok(InputSignal::random_switching(num(1)?, num(2)?, seed))
        }
        _ if spec.trim_start().starts_with('{') || Path::new(spec).is_file() => {
            let (name, text) = inline_or_file(spec)?;
            parse_json(&name, &text).map_err(Failure::input)
        }
        _ => Err(bad()),
    }
}

/// Inline JSON (starting with `{`) or the contents of a file.
fn inline_or_file(spec: &str) -> Result<(String, String), Failure> {
    if spec.trim_start().starts_with('{') {
        Ok(("<inline>".into(), spec.to_string()))
    } else {
        let p = Path::new(spec);
        Ok((p.display().to_string(), read(p)?))
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("DELAYMARGIN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::input(format!("DELAYMARGIN_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Failure::numeric)
}

fn read(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))
}

fn load(p: &Path) -> Result<(String, LoadedSystem), Failure> {
    let text = read(p)?;
    let loaded = load_system(&p.display().to_string(), &text).map_err(Failure::input)?;
    Ok((text, loaded))
}

fn hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn stability_code(r: &AnalysisReport) -> u8 {
    let cl = r.closed_loop.as_ref().map(|c| c.certificate.verdict);
    if r.stability.verdict == Verdict::Inconclusive || cl == Some(Verdict::Inconclusive) {
        EXIT_INCONCLUSIVE
    } else {
        0
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, Failure> {
    let mut buf = serde_json::to_vec_pretty(v).map_err(Failure::numeric)?;
    buf.push(b'\n');
    Ok(buf)
}

fn emit_json<T: Serialize>(v: &T, out: Option<&Path>) -> Result<(), Failure> {
    let buf = to_json(v)?;
    match out {
        Some(p) => write_atomic(p, &buf),
        None => io::stdout().write_all(&buf).map_err(Failure::numeric),
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: &dyn std::fmt::Display| Failure::input(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(bytes).map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}
