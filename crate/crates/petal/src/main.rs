use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use petal::config::{ExperimentConfig, RestoreKind};
use petal::harness::{cmd_adapt, cmd_train_source};
use petal::report::{build_table, load_runs};
use petal_core::bench::ScheduleMode;
use petal_core::engine::PredictFrom;

#[derive(Parser)]
#[command(name = "petal", version, about = "Continual test-time adaptation experiments on a synthetic corruption stream")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source model and fit its SWAG-diagonal posterior.
    TrainSource(Overrides),
    /// Run lifelong adaptation for every method and seed.
    Adapt(Overrides),
    /// Compare methods across one or more adapt output directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write report.csv and report.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    /// JSON experiment config; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = parse_mode)]
    schedule: Option<ScheduleMode>,
    #[arg(long, value_enum)]
    restore: Option<RestoreKind>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k_aug: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding model.ptta and posterior.ptta (defaults to --out).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_predict)]
    predict_from: Option<PredictFrom>,
    #[arg(long)]
    reset_optimizer_state: bool,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

fn parse_mode(s: &str) -> Result<ScheduleMode, String> {
    s.parse().map_err(|e: petal_core::Error| e.to_string())
}

fn parse_predict(s: &str) -> Result<PredictFrom, String> {
    s.parse().map_err(|e: petal_core::Error| e.to_string())
}

impl Overrides {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.method {
            cfg.methods = m.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(m) = self.schedule {
            cfg.schedule.mode = m;
        }
        let a = &mut cfg.adapt;
        if let Some(r) = self.restore {
            a.restore = r;
        }
        a.delta = self.delta.unwrap_or(a.delta);
        a.rho = self.rho.unwrap_or(a.rho);
        a.alpha = self.alpha.unwrap_or(a.alpha);
        a.tau = self.tau.unwrap_or(a.tau);
        a.k_aug = self.k_aug.unwrap_or(a.k_aug);
        a.predict_from = self.predict_from.unwrap_or(a.predict_from);
        a.reset_optimizer_state |= self.reset_optimizer_state;
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint_dir = Some(c.clone());
        }
        Ok(cfg)
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match run(cli, &mut io::stdout().lock()) {
        // stdout closed early, e.g. piped into `head`
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => Ok(()),
        r => r,
    }
}

fn run(cli: Cli, stdout: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainSource(o) => {
            let cfg = o.resolve()?;
            if o.dump_config {
                writeln!(stdout, "{}", cfg.to_json())?;
                return Ok(());
            }
            let s = cmd_train_source(&cfg)?;
            writeln!(
                stdout,
                "trained {} epochs, {} SWAG iterates, final loss {:.5}, clean test error {:.2}%",
                s.epoch_losses.len(),
                s.swag_iterates,
                s.epoch_losses.last().copied().unwrap_or(f64::NAN),
                s.clean_test.error
            )?;
            writeln!(stdout, "checkpoints written to {}", cfg.out_dir.display())?;
        }
        Command::Adapt(o) => {
            let cfg = o.resolve()?;
            if o.dump_config {
                writeln!(stdout, "{}", cfg.to_json())?;
                return Ok(());
            }
            let runs = cmd_adapt(&cfg, &mut std::io::stderr())?;
            let table = build_table(&runs)?;
            write!(stdout, "{}", table.to_text())?;
        }
        Command::Report { dirs, out } => {
            let table = build_table(&load_runs(&dirs)?)?;
            let text = table.to_text();
            write!(stdout, "{text}")?;
            if let Some(out) = out {
                std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                table.write_csv(&out.join("report.csv"))?;
                std::fs::write(out.join("report.txt"), text)?;
            }
        }
    }
    Ok(())
}
