//! `metrion` — batch frontend for the energy attribution pipeline.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 internal invariant
//! breach (conservation check failure). `METRION_LOG` controls logging.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use metrion_core::attribution::ModelParams;
use metrion_core::ingestion::{parse_trace_file, ParsedTrace};
use metrion_core::pipeline::{
    self, attribute_window, coverage, prepare, render_report, window_spans, PipelineError,
};
use metrion_core::simulator::{mape, simulate, Archetype, GroundTruthLedger, SimConfig};
use metrion_core::store::{FileStore, MeasurementStore};
use metrion_core::Ns;

#[derive(Parser)]
#[command(name = "metrion", version, about = "Trace-driven energy attribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace and its ground-truth ledger.
    Simulate(SimulateArgs),
    /// Parse a trace and append its measurements to a store file.
    Ingest(IngestArgs),
    /// Attribute a trace's energy to threads and applications.
    Attribute(AttributeArgs),
    /// Summarise an attribution report as a table.
    Report(ReportArgs),
    /// Score an attribution report against a ground-truth ledger.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchetypeArg {
    CpuHeavy,
    DramHeavy,
    Combined,
}

impl From<ArchetypeArg> for Archetype {
    fn from(a: ArchetypeArg) -> Self {
        match a {
            ArchetypeArg::CpuHeavy => Archetype::CpuHeavy,
            ArchetypeArg::DramHeavy => Archetype::DramHeavy,
            ArchetypeArg::Combined => Archetype::Combined,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulator config JSON; mutually exclusive with --archetype.
    #[arg(long, conflicts_with = "archetype")]
    config: Option<PathBuf>,
    /// Use a built-in workload archetype instead of a config file.
    #[arg(long, value_enum)]
    archetype: Option<ArchetypeArg>,
    /// Override the RNG seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Sensor noise for --archetype runs (relative stddev).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Output directory for <label>.metrion.jsonl and <label>.ledger.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Trace file (.metrion.jsonl).
    #[arg(long)]
    trace: PathBuf,
    /// Measurement store file to append to (created if missing).
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args)]
struct AttributeArgs {
    /// Trace file (.metrion.jsonl).
    #[arg(long)]
    trace: PathBuf,
    /// Attribution window length in nanoseconds.
    #[arg(long, default_value_t = 250_000_000)]
    window_ns: Ns,
    /// SMT contention correction factor.
    #[arg(long)]
    sigma: Option<f64>,
    /// Energy weight of remote-socket DRAM accesses.
    #[arg(long)]
    gamma_remote: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of windows attributed in parallel (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Emit full-precision values instead of 6 significant digits.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON produced by `metrion attribute`.
    report: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Report JSON produced by `metrion attribute`.
    report: PathBuf,
    /// Ground-truth ledger produced by `metrion simulate`.
    ledger: PathBuf,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("METRION_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Attribute(args) => cmd_attribute(args),
        Command::Report(args) => cmd_report(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let conservation = err
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(PipelineError::Conservation { .. })));
            if conservation {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn write_output(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, contents)
            .with_context(|| format!("writing {}", path.display()))?,
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            // A closed pipe (e.g. `| head`) is not an error for us.
            if let Err(err) = writeln!(stdout, "{contents}") {
                if err.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(err.into());
                }
            }
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut config: SimConfig = match (&args.config, args.archetype) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing simulator config {}", path.display()))?
        }
        (None, Some(archetype)) => {
            Archetype::from(archetype).config(args.seed.unwrap_or(42), args.noise)
        }
        _ => bail!("exactly one of --config or --archetype is required"),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let output = simulate(&config)?;
    // Serialize everything before touching the filesystem so a failure
    // leaves no partial files.
    let ledger_json = serde_json::to_string_pretty(&output.ledger)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let trace_path = args.out.join(format!("{}.metrion.jsonl", config.label));
    let ledger_path = args.out.join(format!("{}.ledger.json", config.label));
    fs::write(&trace_path, &output.trace)
        .with_context(|| format!("writing {}", trace_path.display()))?;
    fs::write(&ledger_path, ledger_json)
        .with_context(|| format!("writing {}", ledger_path.display()))?;
    println!("{}", trace_path.display());
    println!("{}", ledger_path.display());
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let parsed = parse_trace_file(&args.trace)
        .with_context(|| format!("parsing {}", args.trace.display()))?;
    let mut store = FileStore::open(&args.store)
        .with_context(|| format!("opening store {}", args.store.display()))?;
    let appended = store.append(&parsed.measurements)?;
    println!(
        "ingested {} measurements ({} appended, {} already present)",
        parsed.measurements.len(),
        appended,
        parsed.measurements.len() - appended
    );
    Ok(())
}

fn model_params(sigma: Option<f64>, gamma_remote: Option<f64>) -> Result<ModelParams<f64>> {
    let mut params = ModelParams::<f64>::default();
    if let Some(sigma) = sigma {
        params.smt_sigma = sigma;
    }
    if let Some(gamma) = gamma_remote {
        params.gamma_remote = gamma;
    }
    params.validate()?;
    Ok(params)
}

fn attribute_parsed(
    parsed: &ParsedTrace,
    window_ns: Ns,
    params: &ModelParams<f64>,
    jobs: Option<usize>,
) -> Result<metrion_core::FullReport> {
    let prepared = prepare(parsed)?;
    let (t0, t1) = coverage(&prepared)?;
    let spans = window_spans(t0, t1, window_ns)?;
    // Windows are independent; compute in parallel, assemble in order.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    let windows = pool.install(|| {
        use rayon::prelude::*;
        spans
            .par_iter()
            .map(|&(a, b, _)| attribute_window::<f64>(&prepared, a, b, params))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(pipeline::assemble(window_ns, &spans, windows))
}

fn cmd_attribute(args: AttributeArgs) -> Result<()> {
    let params = model_params(args.sigma, args.gamma_remote)?;
    let parsed = parse_trace_file(&args.trace)
        .with_context(|| format!("parsing {}", args.trace.display()))?;
    let report = attribute_parsed(&parsed, args.window_ns, &params, args.jobs)?;
    let rendered = serde_json::to_string_pretty(&render_report(&report, args.raw))?;
    write_output(args.out.as_deref(), &rendered)
}

fn shares_table(rows: &mut Vec<String>, heading: &str, owners: &Value) {
    rows.push(heading.to_owned());
    let Some(owners) = owners.as_object() else {
        return;
    };
    for (owner, comps) in owners {
        for (comp, share) in comps.as_object().into_iter().flatten() {
            rows.push(format!(
                "  {owner:<24} {comp:<12} active {:>12} J  idle {:>12} J  total {:>12} J",
                share["active_j"], share["idle_j"], share["total_j"]
            ));
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.report)
        .with_context(|| format!("reading {}", args.report.display()))?;
    let report: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing report {}", args.report.display()))?;
    let mut rows = Vec::new();
    rows.push(format!(
        "span [{}, {}) ns, window {} ns, {} windows{}",
        report["t_start_ns"],
        report["t_stop_ns"],
        report["window_ns"],
        report["windows"].as_array().map(Vec::len).unwrap_or(0),
        if report["partial_last_window"].as_bool() == Some(true) {
            " (last partial)"
        } else {
            ""
        },
    ));
    shares_table(&mut rows, "applications:", &report["totals"]["applications"]);
    shares_table(&mut rows, "threads:", &report["totals"]["threads"]);
    write_output(args.out.as_deref(), &rows.join("\n"))
}

/// Per-(window, thread, component) active joules from a rendered report.
fn report_keys(report: &Value) -> Result<BTreeMap<(usize, String, String), f64>> {
    let mut map = BTreeMap::new();
    let windows = report["windows"]
        .as_array()
        .ok_or_else(|| anyhow!("report has no windows array"))?;
    for (i, w) in windows.iter().enumerate() {
        for (thread, comps) in w["threads"].as_object().into_iter().flatten() {
            for (comp, share) in comps.as_object().into_iter().flatten() {
                let active = share["active_j"]
                    .as_f64()
                    .ok_or_else(|| anyhow!("non-numeric active_j in report"))?;
                map.insert((i, thread.clone(), comp.clone()), active);
            }
        }
    }
    Ok(map)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let report: Value = serde_json::from_str(
        &fs::read_to_string(&args.report)
            .with_context(|| format!("reading {}", args.report.display()))?,
    )?;
    let ledger: GroundTruthLedger = serde_json::from_str(
        &fs::read_to_string(&args.ledger)
            .with_context(|| format!("reading {}", args.ledger.display()))?,
    )?;

    let n_windows = report["windows"].as_array().map(Vec::len).unwrap_or(0);
    if n_windows != ledger.windows.len() {
        bail!(
            "key mismatch: report has {n_windows} windows, ledger has {}",
            ledger.windows.len()
        );
    }
    let attributed_raw = report_keys(&report)?;

    let mut truth: BTreeMap<(usize, String, String), f64> = BTreeMap::new();
    for (i, w) in ledger.windows.iter().enumerate() {
        for (thread, comps) in &w.thread_active_j {
            for (comp, joules) in comps {
                truth.insert(
                    (i, thread.as_str().to_owned(), comp.as_str().to_owned()),
                    *joules,
                );
            }
        }
    }
    // A thread the model gave no energy may be absent from the report; that
    // is an attribution of zero. The reverse — energy attributed to a key
    // the ledger does not know — is a key mismatch.
    for key in attributed_raw.keys() {
        if !truth.contains_key(key) {
            bail!(
                "key mismatch: report attributes energy to (window {}, {}, {}) unknown to the ledger",
                key.0, key.1, key.2
            );
        }
    }
    let attributed: BTreeMap<_, _> = truth
        .keys()
        .map(|k| (k.clone(), attributed_raw.get(k).copied().unwrap_or(0.0)))
        .collect();

    let overall = mape(&attributed, &truth)?;
    let mut components: BTreeMap<String, _> = BTreeMap::new();
    let comp_names: std::collections::BTreeSet<String> =
        truth.keys().map(|k| k.2.clone()).collect();
    for comp in comp_names {
        let t: BTreeMap<_, _> = truth
            .iter()
            .filter(|(k, _)| k.2 == comp)
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        let a: BTreeMap<_, _> = attributed
            .iter()
            .filter(|(k, _)| k.2 == comp)
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        components.insert(comp, mape(&a, &t)?);
    }

    let summary = json!({
        "workload": ledger.label,
        "overall": overall,
        "per_component": components,
    });
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&summary)?)
}
