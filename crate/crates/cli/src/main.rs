use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use roadpatch_core::nes::OptStatus;
use roadpatch_core::run::{
    evaluate_run, load_patch, merge_runs, optimize_run, verify_run, OracleKind, RunConfig, RunDirectory, ENDPOINT_ENV,
};
use roadpatch_core::Error;
use tracing::info;

const EXIT_CONFIG: u8 = 2;
const EXIT_ORACLE: u8 = 3;
const EXIT_INTERRUPTED: u8 = 4;

#[derive(Parser)]
#[command(name = "roadpatch", version, about = "Black-box adversarial patch optimization and evaluation for driving vision-language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a patch for a scenario and write a run directory
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Run approach trials with a patch (and benign baselines) and compute metrics
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Patch PNG; must match the scenario's patch size
        #[arg(long, required_unless_present = "benign", conflicts_with = "benign")]
        patch: Option<PathBuf>,
        /// Benign trials only
        #[arg(long)]
        benign: bool,
        /// Trials per condition
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Merge several run directories into comparison tables and a chart
    Report {
        /// Output directory for tables.csv and asr_by_distance.svg
        #[arg(long)]
        out: PathBuf,
        runs: Vec<PathBuf>,
    },
    /// Recompute the content hashes listed in a run's index.json
    Verify { run: PathBuf },
    /// Print a fully populated run config
    InitConfig {
        #[arg(long, default_value = "crosswalk")]
        scenario: String,
        #[arg(long, value_enum, default_value_t = Format::Toml)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Toml,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Mock,
    Http,
}

#[derive(Args)]
struct Common {
    /// Run config (JSON or TOML); built-in crosswalk defaults if omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    oracle: Option<OracleArg>,
    /// Base URL of the oracle bridge
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default().resolve(Path::new("."))?,
        };
        if let Some(o) = self.oracle {
            cfg.oracle.kind = match o {
                OracleArg::Mock => OracleKind::Mock,
                OracleArg::Http => OracleKind::Http,
            };
        }
        if let Some(e) = &self.endpoint {
            cfg.oracle.endpoint = Some(e.clone());
        }
        if let Some(s) = self.seed {
            cfg.nes.seed = s;
        }
        if let Some(p) = self.parallelism {
            cfg.nes.parallelism = p;
        }
        Ok(cfg)
    }
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Oracle(_) | Error::Objective { .. } => EXIT_ORACLE,
            Error::Io { .. } | Error::InsufficientData(_) => 1,
            _ => EXIT_CONFIG,
        };
        Failure { code, err: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure { code: 1, err }
    }
}

fn fail(code: u8, msg: String) -> Failure {
    Failure { code, err: anyhow::anyhow!(msg) }
}

fn optimize(common: &Common) -> Result<(), Failure> {
    let cfg = common.load()?;
    cfg.validate()?;
    let (oracle, embedder) = cfg.build_oracles()?;
    let dir = RunDirectory::create(&common.out)?;
    let interrupt = Arc::new(AtomicBool::new(false));
    let flag = interrupt.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing interrupt handler")?;
    let out = optimize_run(&cfg, oracle.as_ref(), embedder.as_ref(), &dir, &interrupt)?;
    let s = &out.summary;
    info!(
        iterations = s.iterations_completed,
        best_loss = ?s.best_loss,
        candidate_evals = s.candidate_evals,
        oracle_queries = s.oracle_queries,
        "optimization finished"
    );
    println!("{}", dir.join(roadpatch_core::run::BEST_PATCH_FILE).display());
    match &s.status {
        OptStatus::Completed | OptStatus::EarlyStopped { .. } => Ok(()),
        OptStatus::Interrupted => Err(fail(EXIT_INTERRUPTED, format!("interrupted after {} iterations; checkpoint written", s.iterations_completed))),
        OptStatus::Aborted { error } => Err(fail(EXIT_ORACLE, format!("oracle failure: {error}"))),
    }
}

fn evaluate(common: &Common, patch: Option<&Path>, trials: Option<usize>) -> Result<(), Failure> {
    let mut cfg = common.load()?;
    if let Some(t) = trials {
        cfg.evaluation.trials = t;
    }
    cfg.validate()?;
    let patch = patch.map(|p| load_patch(p, cfg.scenario())).transpose()?;
    let (oracle, embedder) = cfg.build_oracles()?;
    let dir = RunDirectory::create(&common.out)?;
    let out = evaluate_run(&cfg, patch.as_ref(), oracle.as_ref(), embedder.as_ref(), &dir)?;
    let c = &out.report.counters;
    if c.frames_total > 0 && c.frames_valid == 0 {
        return Err(fail(EXIT_ORACLE, format!("all {} oracle queries failed", c.frames_total)));
    }
    let r = &out.report;
    info!(asr = ?r.asr_overall, baseline = ?r.baseline_rate, p_value = ?r.p_value, failed_queries = c.failed_queries, "evaluation finished");
    println!("{}", serde_json::to_string_pretty(r).context("printing report")?);
    Ok(())
}

fn report(out: &Path, runs: &[PathBuf]) -> Result<(), Failure> {
    if runs.is_empty() {
        return Err(fail(EXIT_CONFIG, "no run directories given".into()));
    }
    let rows = merge_runs(runs, out)?;
    info!(rows = rows.len(), out = %out.display(), "report written");
    Ok(())
}

fn verify(run: &Path) -> Result<(), Failure> {
    let v = verify_run(run)?;
    for p in &v.missing {
        println!("missing    {p}");
    }
    for p in &v.mismatched {
        println!("mismatch   {p}");
    }
    for p in &v.unlisted {
        println!("unlisted   {p}");
    }
    if v.is_ok() {
        println!("ok: {} files verified", v.checked);
        Ok(())
    } else {
        Err(fail(1, format!("{} missing, {} mismatched, {} unlisted", v.missing.len(), v.mismatched.len(), v.unlisted.len())))
    }
}

fn init_config(scenario: &str, format: Format) -> Result<(), Failure> {
    let cfg = RunConfig::builtin(scenario).resolve(Path::new("."))?;
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&cfg).context("serializing config")?,
        Format::Toml => toml::to_string_pretty(&cfg).context("serializing config")?,
    };
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Optimize { common } => optimize(common),
        Command::Evaluate { common, patch, benign: _, trials } => evaluate(common, patch.as_deref(), *trials),
        Command::Report { out, runs } => report(out, runs),
        Command::Verify { run } => verify(run),
        Command::InitConfig { scenario, format } => init_config(scenario, *format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
