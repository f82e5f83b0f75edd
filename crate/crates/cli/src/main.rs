use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ezfolio::config::RunConfig;
use ezfolio::harness::{self, DEFAULT_KS, DEFAULT_WINDOWS, OUT_DIR_ENV};
use ezfolio::{data, synthetic};

#[derive(Parser)]
#[command(name = "ezfolio", version, about = "Recursive-utility RL portfolio allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Train/evaluate this seed only (overrides run.seeds).
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel jobs (overrides run.workers).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; falls back to $EZFOLIO_OUT_DIR, then run.out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.run.seeds = vec![seed];
        }
        if let Some(w) = self.workers {
            if w == 0 {
                bail!("--workers must be >= 1");
            }
            cfg.run.workers = w;
        }
        let out = harness::resolve_out_dir(&cfg, self.out.as_deref());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a price file into per-split train/test/history returns.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// Price file (overrides data.prices).
        #[arg(long)]
        prices: Option<PathBuf>,
        /// Destination of the split files (overrides data.splits_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one agent per (split, seed) and write checkpoints.
    Train(Common),
    /// Evaluate checkpoints on each split's test range.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Results directory holding the checkpoints (default: the output directory).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Recursive-PPO grid over training window and CE sample count.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WINDOWS)]
        windows: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
    },
    /// Render stored results as tables.
    Report {
        /// Results directory; falls back to $EZFOLIO_OUT_DIR, then run.out_dir of --config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a seeded synthetic price file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Daily mean return per asset.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0005, -0.0005])]
        means: Vec<f64>,
        /// Daily return std per asset.
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.01])]
        stds: Vec<f64>,
    },
}

fn report_dir(out: Option<PathBuf>, config: Option<&Path>) -> Result<PathBuf> {
    if let Some(o) = out {
        return Ok(o);
    }
    if let Some(c) = config {
        return Ok(harness::resolve_out_dir(&RunConfig::load(c)?, None));
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => bail!("report needs --out, --config or ${OUT_DIR_ENV}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { config, prices, out } => {
            let cfg = RunConfig::load(&config)?;
            let prices = prices.unwrap_or_else(|| cfg.data.prices.clone());
            let out = out.unwrap_or_else(|| cfg.data.splits_dir.clone());
            let manifest = harness::cmd_ingest(&prices, &out, &cfg.data)
                .with_context(|| format!("ingesting {}", prices.display()))?;
            println!("wrote {} splits to {}", manifest.len(), out.display());
        }
        Command::Train(common) => {
            let (cfg, out) = common.load()?;
            let dirs = harness::cmd_train(&cfg, &out)?;
            for d in dirs {
                println!("{}", d.display());
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let (cfg, out) = common.load()?;
            let summary = harness::cmd_evaluate(&cfg, &out, checkpoint.as_deref())?;
            for (split, seed, r) in &summary.runs {
                println!("split {split} seed {seed}: sr {} cr_pct {:.2}", r.sr, r.cr_pct);
            }
            print!("{}", harness::cmd_report(&out)?);
        }
        Command::Ablate { common, windows, ks } => {
            let (cfg, out) = common.load()?;
            let cells = harness::cmd_ablate(&cfg, &out, &windows, &ks)?;
            println!("{} ablation cells written to {}", cells.len(), out.join("ablation").display());
        }
        Command::Report { out, config } => {
            let dir = report_dir(out, config.as_deref())?;
            let text = harness::cmd_report(&dir)?;
            fs::write(dir.join("report.txt"), &text).with_context(|| format!("writing report in {}", dir.display()))?;
            print!("{text}");
        }
        Command::Synth { out, rows, seed, means, stds } => {
            let returns = synthetic::gaussian_market(rows, &means, &stds, seed)?;
            let prices = synthetic::prices_from_returns(&returns);
            let mut buf = Vec::new();
            data::write_prices(&prices, &mut buf)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(&out, buf).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} rows to {}", prices.n_rows(), out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
