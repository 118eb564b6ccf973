use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};
use fairtab::backend::{save_backend, Backend};
use fairtab::config::{ClassifierPath, ExperimentConfig, GridConfig, IntrinsicConfig, Stage};
use fairtab::io::write_jsonl;
use fairtab::prepare::{prepare, Benchmark};
use fairtab::report::{collect_reports, emit_report_table};
use fairtab_core::lm::neutral_corpus;

#[derive(Parser)]
#[command(name = "fairtab", version, about = "Gender-bias measurement and mitigation for tabular classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages of an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stage 1-4; defaults to the config's stage.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), conflicts_with = "all_stages")]
        stage: Option<u8>,
        /// Run stages 1-4 with one shared backend.
        #[arg(long)]
        all_stages: bool,
        /// Turn on augmentation (stage 1 becomes 2, stage 3 becomes 4).
        #[arg(long)]
        cda: bool,
        #[arg(long, value_enum)]
        path: Option<ClassifierPath>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write SVG bar charts of DP and EqOdds.
        #[arg(long)]
        plots: bool,
    },
    /// Probe stereotype gaps and perplexity before and after unlearning.
    Intrinsic {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search over unlearning learning rates and loss weights.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild tables (and plots) from the report.json files under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plots: bool,
    },
    /// Convert raw benchmark files into CSV, schema and task JSON.
    Prepare {
        #[arg(value_enum)]
        dataset: Benchmark,
        /// Directory with the raw UCI files, or the ACS export CSV.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Write the synthetic neutral corpus as JSONL.
    Neutral {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain and unlearn a backend once, saving both checkpoints.
    Backend {
        /// An intrinsic-probe config (its backend and unlearn sections).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            stage,
            all_stages,
            cda,
            path,
            out,
            plots,
        } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(p) = path {
                cfg.path = p;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(s) = stage {
                cfg.stage = Stage::try_from(s).map_err(anyhow::Error::msg)?;
            }
            if cda {
                if all_stages {
                    bail!("--cda selects a single stage; drop it with --all-stages");
                }
                cfg.stage = cfg.stage.with_cda();
            }
            cfg.validate()?;
            let stages: Vec<Stage> = if all_stages {
                Stage::ALL
                    .into_iter()
                    .filter(|s| cfg.path != ClassifierPath::Tabular || !s.unlearned())
                    .collect()
            } else {
                vec![cfg.stage]
            };
            let reports = fairtab::run_experiment(&cfg, &stages, plots)?;
            print!("{}", fairtab::report::table_markdown(&reports));
            log::info!("wrote {}", cfg.out.display());
        }
        Command::Intrinsic { config, out } => {
            let mut cfg = IntrinsicConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            let res = fairtab::run_intrinsic_eval(&cfg)?;
            print!("{}", fairtab::intrinsic::intrinsic_markdown(&res.rows));
        }
        Command::Grid { config, out } => {
            let mut cfg = GridConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            let rows = fairtab::run_grid(&cfg)?;
            print!("{}", fairtab_core::unlearn::grid_csv(&rows));
        }
        Command::Report { input, out, plots } => {
            let reports = collect_reports(&input)?;
            if reports.is_empty() {
                bail!("no report.json under {}", input.display());
            }
            let out = out.unwrap_or(input);
            for p in emit_report_table(&reports, &out, plots)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Prepare { dataset, raw, out } => {
            let n = prepare(dataset, &raw, &out)?;
            log::info!("{}: {n} rows written to {}", dataset.name(), out.display());
        }
        Command::Neutral { n, seed, out } => {
            write_jsonl(&out, &neutral_corpus(n, seed))?;
        }
        Command::Backend { config, out } => {
            let cfg = IntrinsicConfig::load(&config)?;
            let mut b = Backend::build(&cfg.backend, &[], &[])?;
            save_backend(&mut b, &cfg.unlearn, &out)?;
            log::info!("checkpoints written to {}", out.display());
        }
    }
    Ok(())
}
