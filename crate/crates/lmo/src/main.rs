use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lmo::config::{load_analysis_config, load_config, load_sweep_config};
use lmo::core::laws::StaticFitConfig;
use lmo::harness::{run_experiment, run_greedy, run_similarity_study, run_sweep};
use lmo::io::{fit_loss_log, read_loss_log, render_fit, render_sweep};
use lmo::report::{emit_report, render_greedy, render_report, Format};
use lmo::HarnessError;

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "lmo", version, about = "Data-mixing experiments on a simulated trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Replace the config's seeds with this one.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    parallelism: Option<u16>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) cell of an experiment config.
    Run { config: PathBuf },
    /// Fit a mixing law to a CSV loss log.
    Fit { loss_log: PathBuf },
    /// Run an analysis from an analysis config.
    Analyze { kind: AnalysisKind, config: PathBuf },
    /// Train every candidate mixture and tabulate validation losses.
    Sweep { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisKind {
    Similarity,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
        }
    }
}

fn deliver(text: &str, out: Option<&Path>) -> lmo::Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.into(), source: e })?;
            }
            std::fs::write(path, text).map_err(|e| HarnessError::Io { path: path.into(), source: e })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: &Cli) -> lmo::Result<u8> {
    let format = Format::from(cli.format);
    let out = cli.out.as_deref();
    let threads = cli.parallelism.map(usize::from);
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = load_config(config)?;
            if let Some(seed) = cli.seed_override {
                cfg.override_seed(seed);
            }
            let outcome = run_experiment(&cfg, threads)?;
            let report = &outcome.report;
            if out.is_some() || (cfg.output.report.is_none() && cfg.output.csv.is_none()) {
                deliver(&render_report(report, format)?, out)?;
            } else {
                if let Some(p) = &cfg.output.report {
                    emit_report(report, Format::Json, p)?;
                }
                if let Some(p) = &cfg.output.csv {
                    emit_report(report, Format::Csv, p)?;
                }
            }
            if let Some(dir) = &cfg.output.trajectories {
                outcome.write_trajectories(dir)?;
            }
            for c in report.cells.iter().filter(|c| !c.is_ok()) {
                eprintln!("cell {} seed {} failed: {}", c.method, c.seed, c.error.as_deref().unwrap_or(""));
            }
            Ok(if report.failed_cells() > 0 { EXIT_PARTIAL } else { 0 })
        }
        Command::Fit { loss_log } => {
            let log = read_loss_log(loss_log)?;
            let fit = StaticFitConfig { seed: cli.seed_override.unwrap_or(0), ..StaticFitConfig::default() };
            deliver(&render_fit(&fit_loss_log(&log, &fit)?, format)?, out)?;
            Ok(0)
        }
        Command::Analyze { kind, config } => {
            let mut cfg = load_analysis_config(config)?;
            match kind {
                AnalysisKind::Similarity => {
                    let study = cfg
                        .similarity
                        .as_mut()
                        .ok_or_else(|| HarnessError::Validation { path: "similarity".into(), message: "missing section".into() })?;
                    if let Some(seed) = cli.seed_override {
                        study.seeds = vec![seed];
                    }
                    deliver(&run_similarity_study(&cfg, threads)?.render(format)?, out)?;
                }
                AnalysisKind::Greedy => {
                    if let Some(seed) = cli.seed_override {
                        cfg.simulator.seed = seed;
                    }
                    deliver(&render_greedy(&run_greedy(&cfg)?, format)?, out)?;
                }
            }
            Ok(0)
        }
        Command::Sweep { config } => {
            let mut cfg = load_sweep_config(config)?;
            if let Some(seed) = cli.seed_override {
                cfg.seeds = vec![seed];
            }
            deliver(&render_sweep(&run_sweep(&cfg, threads)?, format)?, out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_PARTIAL })
        }
    }
}
