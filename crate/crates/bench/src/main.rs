use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bng_bench::config::{parse_config, ExperimentConfig, Task};
use bng_bench::experiment::{run_convex, RESIDUAL_TOL, run_experiment, summary_line, MnistData};
use bng_bench::metrics::write_metrics_csv;
use bng_bench::suite::{bound_csv, run_suite, verify_bounds, GridSpec};
use bng_bench::{BenchError, Result};
use bng_core::blocked::BlockLayout;
use clap::{Parser, Subcommand};

/// Block-normalized gradient experiments.
#[derive(Debug, Parser)]
#[command(name = "bng", version)]
struct Cli {
    /// Output directory (default: the config's `out`, else the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed of every run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one configuration and write its metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a depth × optimizer × transform × seed grid.
    Suite {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Check the AdaGradBNG regret bound on a convex task over many seeds.
    VerifyBounds {
        #[arg(long, value_parser = ["convex-logistic", "convex-lsq"])]
        task: String,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// One or more step counts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "10000")]
        steps: Vec<u64>,
        /// Extra config lines (key=value) applied to the task.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Outcome {
    Ok,
    Violation,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| BenchError::io(path, e))
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
    Ok(dir)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = parse_config(&read(config)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let dir = out_dir(cli, Some(&cfg))?;
            let name = stem(config);
            if cfg.task.is_convex() {
                let (table, run) = run_convex(&cfg)?;
                write_metrics_csv(&table, &dir.join(format!("{name}.csv")))?;
                let layout = BlockLayout::from_sizes(&cfg.blocks)?;
                let case = bng_bench::suite::BoundCase {
                    seed: cfg.seed,
                    steps: cfg.steps,
                    min_residual: run.min_residual,
                    violations: run.violations.len(),
                    lemma_ok: run.lemma_lhs.iter().zip(&run.lemma_rhs).all(|(l, h)| *l <= h + RESIDUAL_TOL),
                    passed: bng_bench::experiment::convex_run_passes(&run),
                    report: run.report.clone(),
                };
                let path = dir.join(format!("{name}_bounds.csv"));
                fs::write(&path, bound_csv(std::slice::from_ref(&case), &layout)).map_err(|e| BenchError::io(&path, e))?;
                println!("{}", summary_line(&cfg, &table));
                return Ok(if case.passed { Outcome::Ok } else { Outcome::Violation });
            }
            let table = run_experiment(&cfg)?;
            if !table.rows.is_empty() {
                write_metrics_csv(&table, &dir.join(format!("{name}.csv")))?;
            }
            println!("{}", summary_line(&cfg, &table));
            Ok(Outcome::Ok)
        }
        Command::Suite { grid } => {
            let mut spec = GridSpec::parse(&read(grid)?)?;
            if let Some(s) = cli.seed {
                spec.seeds = vec![s];
            }
            let dir = out_dir(cli, Some(&spec.base))?;
            let data = MnistData::load(&spec.base.data_dir)?;
            let result = run_suite(&spec, &data)?;
            for cell in &result.cells {
                let cfg = &cell.config;
                match &cell.outcome {
                    Ok(table) => {
                        if !table.rows.is_empty() {
                            let name = format!("depth{}_{}_seed{}.csv", cfg.depth(), cfg.arm(), cfg.seed);
                            write_metrics_csv(table, &dir.join(name))?;
                        }
                        println!("{}", summary_line(cfg, table));
                    }
                    Err(e) => println!("task={} arm={} depth={} seed={} FAILED: {e}", cfg.task, cfg.arm(), cfg.depth(), cfg.seed),
                }
            }
            let path = dir.join("summary.csv");
            fs::write(&path, result.summary_csv()).map_err(|e| BenchError::io(&path, e))?;
            Ok(Outcome::Ok)
        }
        Command::VerifyBounds { task, seeds, steps, config } => {
            let extra = match config {
                Some(p) => read(p)?,
                None => String::new(),
            };
            let base = parse_config(&format!("task={task}\n{extra}"))?;
            debug_assert!(matches!(base.task, Task::ConvexLogistic | Task::ConvexLsq));
            let first = cli.seed.unwrap_or(1);
            let seed_list: Vec<u64> = (first..first + seeds).collect();
            let cases = verify_bounds(&base, &seed_list, steps)?;
            let dir = out_dir(cli, Some(&base))?;
            let path = dir.join(format!("{task}_bounds.csv"));
            let layout = BlockLayout::from_sizes(&base.blocks)?;
            fs::write(&path, bound_csv(&cases, &layout)).map_err(|e| BenchError::io(&path, e))?;
            let failed = cases.iter().filter(|c| !c.passed).count();
            println!(
                "task={task} runs={} passed={} failed={failed} bounds={}",
                cases.len(),
                cases.len() - failed,
                path.display()
            );
            Ok(if failed == 0 { Outcome::Ok } else { Outcome::Violation })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
