use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use actor_anchor::config::RunConfig;
use actor_anchor::manifest::{self, Manifest};
use actor_anchor::runner::{self, CommandReport};
use actor_anchor::validate::validate_package;

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "actor-anchor", version, about = "Actor-anchored policy composition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add this offset to every seed in the configuration.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// PoE / KL-Reg equivalence audit on dataset states.
    AuditEquivalence(RunArgs),
    /// Main evaluation package with summaries, verdicts, AWR and risk tables.
    Rollout(RunArgs),
    /// Prior-degradation package.
    DegradePrior(RunArgs),
    /// Conservative-improvement bound on random tabular instances.
    CpiDiagnostic(RunArgs),
    /// α selection study on the validation/test split.
    AlphaStudy(RunArgs),
    /// Every experiment command followed by the manifest.
    All(RunArgs),
    /// Write the manifest for an output directory, or verify it.
    Manifest {
        #[command(flatten)]
        run: RunArgs,
        /// Recompute hashes and compare with the existing manifest.
        #[arg(long)]
        verify: bool,
    },
    /// Check manifest integrity, coverage, finiteness, seeds and matched pairs.
    Validate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration as TOML.
    PrintConfig,
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf), Failure> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading {}", path.display()))
            .map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    if let Some(offset) = args.seed_override {
        config.offset_seeds(offset);
        config.validate().map_err(|e| Failure::Config(e.into()))?;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if args.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build_global()
            .context("configuring worker threads")
            .map_err(Failure::Config)?;
    }
    let out = config.output_dir.clone();
    Ok((config, out))
}

fn created_unix() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

fn finish(name: &str, report: CommandReport) -> Result<u8, Failure> {
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    if report.failures.is_empty() {
        println!("{name}: ok");
        Ok(0)
    } else {
        for f in &report.failures {
            println!("FAIL {f}");
        }
        println!("{name}: {} check(s) failed", report.failures.len());
        Ok(EXIT_VALIDATION)
    }
}

fn write_manifest(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let path = Manifest::build(out, config, created_unix())
        .and_then(|m| m.write(out))
        .map_err(|e| Failure::Run(e.into()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn report_problems(name: &str, problems: Vec<String>) -> u8 {
    if problems.is_empty() {
        println!("{name}: PASS");
        0
    } else {
        for p in &problems {
            println!("FAIL {p}");
        }
        println!("{name}: FAIL ({} problem(s))", problems.len());
        EXIT_VALIDATION
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let run_err = |e: actor_anchor::Error| Failure::Run(e.into());
    match cli.command {
        Command::AuditEquivalence(args) => {
            let (config, out) = load(&args)?;
            finish("audit-equivalence", runner::cmd_audit_equivalence(&config, &out).map_err(run_err)?)
        }
        Command::Rollout(args) => {
            let (config, out) = load(&args)?;
            finish("rollout", runner::cmd_rollout(&config, &out).map_err(run_err)?)
        }
        Command::DegradePrior(args) => {
            let (config, out) = load(&args)?;
            finish("degrade-prior", runner::cmd_degrade_prior(&config, &out).map_err(run_err)?.0)
        }
        Command::CpiDiagnostic(args) => {
            let (config, out) = load(&args)?;
            finish("cpi-diagnostic", runner::cmd_cpi_diagnostic(&config, &out).map_err(run_err)?)
        }
        Command::AlphaStudy(args) => {
            let (config, out) = load(&args)?;
            finish("alpha-study", runner::cmd_alpha_study(&config, &out).map_err(run_err)?.0)
        }
        Command::All(args) => {
            let (config, out) = load(&args)?;
            let code = finish("all", runner::cmd_all(&config, &out).map_err(run_err)?)?;
            write_manifest(&config, &out)?;
            Ok(code)
        }
        Command::Manifest { run, verify } => {
            let (config, out) = load(&run)?;
            if verify {
                Ok(report_problems("manifest", manifest::verify(&out).map_err(run_err)?))
            } else {
                write_manifest(&config, &out)?;
                Ok(0)
            }
        }
        Command::Validate { out } => Ok(report_problems("validate", validate_package(&out).map_err(run_err)?)),
        Command::PrintConfig => {
            print!("{}", RunConfig::default().to_toml_string());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
