use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stancekit::config::BackendKind;
use stancekit::runner::{self, SearchSetup, SEARCH_KEY_ENV};
use stancekit::{AblationVariant, RunConfig};

#[derive(Parser)]
#[command(name = "stancekit", version, about = "Knowledge-infused stance detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warm the knowledge cache for every target in the configured splits.
    Retrieve(Common),
    /// Run one variant end to end and score it on the test split.
    Run(Common),
    /// Run Baseline, CoT, Phase1-Only and LoT with shared data and cache.
    Ablation(Common),
    /// Run LoT at several phase-1 epoch settings.
    EpochSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly increasing epoch counts.
        #[arg(long, value_delimiter = ',', required = true)]
        epochs: Vec<u32>,
    },
    /// Score a predictions file against a gold file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        golds: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Process,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Shorthand for `--backend mock`.
    #[arg(long, conflicts_with = "backend")]
    mock_backend: bool,
    /// Answer searches from `search.fixtures` instead of the live API.
    #[arg(long)]
    mock_search: bool,
    #[arg(long)]
    runs_root: Option<PathBuf>,
    /// baseline, cot, phase1-only or lot.
    #[arg(long)]
    variant: Option<AblationVariant>,
    /// Force the sequential code path.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(id) = &self.run_id {
            cfg.run_id = id.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.mock_backend {
            cfg.backend.kind = BackendKind::Mock;
        } else if let Some(b) = self.backend {
            cfg.backend.kind = match b {
                BackendArg::Mock => BackendKind::Mock,
                BackendArg::Process => BackendKind::Process,
            };
        }
        if let Some(root) = &self.runs_root {
            cfg.runs_root = root.clone();
        }
        if let Some(v) = self.variant {
            cfg.pipeline.variant = v;
        }
        if self.sequential {
            cfg.pipeline.parallel = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn search(&self, cfg: &RunConfig) -> Result<SearchSetup> {
        if self.mock_search {
            Ok(runner::mock_search(cfg)?)
        } else {
            Ok(runner::live_search(std::env::var(SEARCH_KEY_ENV).ok())?)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Retrieve(common) => {
            let cfg = common.load()?;
            let search = common.search(&cfg)?;
            let store = runner::open_store(&cfg, &search)?;
            let stats = runner::cmd_retrieve(&cfg, &search, &store)?;
            println!(
                "unique targets {}, fetched {}, cached {}, empty {}",
                stats.unique_targets, stats.fetched, stats.cached, stats.empty
            );
        }
        Command::Run(common) => {
            let cfg = common.load()?;
            let search = common.search(&cfg)?;
            let store = runner::open_store(&cfg, &search)?;
            let mut backend = runner::open_backend(&cfg)?;
            let outcome = runner::cmd_run(&cfg, backend.as_mut(), &search, &store)?;
            println!("{} -> {}", cfg.pipeline.variant.display_name(), outcome.run_dir.display());
            print!("{}", outcome.report.render_table());
        }
        Command::Ablation(common) => {
            let cfg = common.load()?;
            let search = common.search(&cfg)?;
            let store = runner::open_store(&cfg, &search)?;
            let mut backend = runner::open_backend(&cfg)?;
            let (report, _) = runner::cmd_ablation(&cfg, backend.as_mut(), &search, &store)?;
            print!("{}", report.render_table());
        }
        Command::EpochSweep { common, epochs } => {
            let cfg = common.load()?;
            let search = common.search(&cfg)?;
            let store = runner::open_store(&cfg, &search)?;
            let mut backend = runner::open_backend(&cfg)?;
            let sweep = runner::cmd_epoch_sweep(&cfg, &epochs, backend.as_mut(), &search, &store)?;
            print!("{}", sweep.to_tsv());
            println!("# {}", runner::REFERENCE_SWEEP_TREND);
        }
        Command::Evaluate { predictions, golds } => {
            let report = runner::cmd_evaluate(&predictions, &golds)?;
            print!("{}", report.render_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
