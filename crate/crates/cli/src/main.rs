use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ubalab::orchestrator::{compare_runs, ExperimentConfig, Pipeline, Stage, StageRecord, CACHE_ENV};
use ubalab::pathcount::CorrelationReport;

#[derive(Debug, Parser)]
#[command(name = "ubalab", version, about = "Target-user injection attack lab")]
struct Cli {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the repeat seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Uplift cache directory.
    #[arg(long, global = true, env = CACHE_ENV)]
    cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest, filter and select targets.
    Prepare {
        /// Print the default config and exit.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Build (or fetch from cache) the uplift tables.
    Estimate,
    /// Allocate the fake-user budget.
    Allocate,
    /// Generate fake users and evaluate the victims.
    Attack,
    /// Run the detectors and re-evaluate on the filtered data.
    Defend,
    /// Path-count versus score correlation report.
    Correlate {
        /// Walk order (1, 3, 5 or 7).
        #[arg(long)]
        order: Option<usize>,
    },
    /// Average seeds and compare runs.
    Report {
        /// Further run directories to include in the comparison.
        #[arg(long = "with", num_args = 1..)]
        with: Vec<PathBuf>,
    },
    /// All stages in order.
    Run,
}

fn load_config(cli: &Cli) -> ubalab::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(cache) = &cli.cache {
        cfg.cache_dir = Some(cache.clone());
    }
    if let Command::Correlate { order: Some(order) } = cli.command {
        cfg.correlation.get_or_insert_with(Default::default).orders = vec![order];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_stage(r: &StageRecord) {
    let hits = r.artifacts.iter().filter(|a| a.cache_hit).count();
    println!(
        "{}: {} artifacts ({} from cache) in {:.1}s",
        r.name,
        r.artifacts.len(),
        hits,
        r.seconds
    );
}

fn execute(cli: &Cli) -> ubalab::Result<()> {
    if let Command::Prepare { print_defaults: true } = cli.command {
        println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let pipeline = Pipeline::new(cfg)?;
    let stage = match &cli.command {
        Command::Prepare { .. } => Stage::Prepare,
        Command::Estimate => Stage::Estimate,
        Command::Allocate => Stage::Allocate,
        Command::Attack => Stage::Attack,
        Command::Defend => Stage::Defend,
        Command::Correlate { .. } => Stage::Correlate,
        Command::Report { .. } => Stage::Report,
        Command::Run => {
            let outcome = pipeline.run()?;
            for r in &outcome.manifest.stages {
                print_stage(r);
            }
            let k = pipeline.config().ks.iter().copied().min().unwrap_or(10);
            print!("{}", outcome.comparison.summary(k));
            println!("manifest: {}", pipeline.out_dir().join("manifest.json").display());
            return Ok(());
        }
    };
    let record = pipeline.run_stage(stage)?;
    print_stage(&record);
    match &cli.command {
        Command::Correlate { .. } => {
            for a in record.artifacts.iter().filter(|a| a.path.ends_with(".json")) {
                let path = pipeline.out_dir().join(&a.path);
                let text = std::fs::read_to_string(&path).map_err(|e| ubalab::Error::io(&path, e))?;
                let r: CorrelationReport = serde_json::from_str(&text)?;
                println!(
                    "order {}: spearman r = {:.4}, p = {:.3e}, {} groups over {} pairs",
                    r.order,
                    r.spearman_r,
                    r.p_value,
                    r.groups.len(),
                    r.n_pairs
                );
            }
        }
        Command::Report { with } => {
            let mut dirs = vec![pipeline.out_dir().to_path_buf()];
            dirs.extend(with.iter().cloned());
            let cmp = compare_runs(&dirs)?;
            let k = pipeline.config().ks.iter().copied().min().unwrap_or(10);
            print!("{}", cmp.summary(k));
            if !with.is_empty() {
                let path = pipeline.out_dir().join("reports/cross-comparison.csv");
                let file = std::fs::File::create(&path).map_err(|e| ubalab::Error::io(&path, e))?;
                cmp.write_delimited(',', file)?;
                println!("comparison: {}", path.display());
            }
        }
        _ => {}
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
