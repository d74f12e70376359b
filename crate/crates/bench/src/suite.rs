//! Grids of MNIST runs and seed suites of convex bound checks.

use std::fmt::Write as _;

use bng_core::blocked::BlockLayout;
use bng_core::regret::BoundReport;
use rayon::prelude::*;

use crate::config::{parse_config, render, ExperimentConfig, Optimizer, Task, Transform};
use crate::error::{BenchError, ConfigError, Result};
use crate::experiment::{convex_run_passes, run_convex, run_mlp, MnistData};
use crate::metrics::{fmt_g9, MetricsTable};

/// A grid file is an ordinary config (the base for every cell) plus the keys
/// `depths`, `optimizers`, `transforms`, `seeds` (comma lists) and `parallelism`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub base: ExperimentConfig,
    pub depths: Vec<usize>,
    pub optimizers: Vec<Optimizer>,
    pub transforms: Vec<Transform>,
    pub seeds: Vec<u64>,
    pub parallelism: usize,
}

impl GridSpec {
    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut base_lines = Vec::new();
        let mut depths = vec![6, 12, 18];
        let mut optimizers = vec![Optimizer::Sgdm, Optimizer::Adagrad, Optimizer::Adam];
        let mut transforms = vec![Transform::Raw, Transform::Ng];
        let mut seeds = vec![1, 2, 3];
        let mut parallelism = 1;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let mut rest = Vec::new();
            for pair in raw.split('#').next().unwrap_or("").split_whitespace() {
                let Some((k, v)) = pair.split_once('=') else {
                    rest.push(pair);
                    continue;
                };
                fn list<T: std::str::FromStr>(line: usize, k: &str, v: &str) -> std::result::Result<Vec<T>, ConfigError>
                where
                    T::Err: std::fmt::Display,
                {
                    let out = v
                        .split(',')
                        .map(|p| p.trim().parse::<T>().map_err(|e| ConfigError::new(line, format!("bad value `{p}` for {k}: {e}"))))
                        .collect::<std::result::Result<Vec<T>, _>>()?;
                    if out.is_empty() {
                        return Err(ConfigError::new(line, format!("{k} is empty")));
                    }
                    Ok(out)
                }
                match k {
                    "depths" => depths = list(line, k, v)?,
                    "optimizers" => optimizers = list(line, k, v)?,
                    "transforms" => transforms = list(line, k, v)?,
                    "seeds" => seeds = list(line, k, v)?,
                    "parallelism" => {
                        parallelism = v
                            .parse()
                            .ok()
                            .filter(|p| *p > 0)
                            .ok_or_else(|| ConfigError::new(line, format!("bad parallelism `{v}`")))?
                    }
                    "depth" | "widths" | "optimizer" | "transform" | "seed" => {
                        return Err(ConfigError::new(line, format!("`{k}` is set per cell; use the plural grid key")));
                    }
                    _ => rest.push(pair),
                }
            }
            // Keep line numbering for base-config errors.
            base_lines.push(rest.join(" "));
        }
        let base = parse_config(&base_lines.join("\n"))?;
        if base.task != Task::MnistMlp {
            return Err(ConfigError::new(0, "grids run the mnist-mlp task; use verify-bounds for convex suites"));
        }
        if depths.contains(&0) {
            return Err(ConfigError::new(0, "depths must be positive"));
        }
        Ok(Self { base, depths, optimizers, transforms, seeds, parallelism })
    }

    /// Cell configs in a fixed order: depth, optimizer, transform, seed.
    pub fn cells(&self) -> Result<Vec<ExperimentConfig>> {
        let base = render(&self.base);
        let base: String = base
            .lines()
            .filter(|l| !["widths=", "optimizer=", "transform="].iter().any(|k| l.starts_with(k)))
            .collect::<Vec<_>>().join("\n");
        let mut out = Vec::new();
        for &d in &self.depths {
            for &o in &self.optimizers {
                for &t in &self.transforms {
                    for &s in &self.seeds {
                        let text = format!("{base}\ndepth={d}\noptimizer={o}\ntransform={t}");
                        let mut cfg = parse_config(&text)?;
                        cfg.seed = s;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug)]
pub struct CellResult {
    pub config: ExperimentConfig,
    pub outcome: std::result::Result<MetricsTable, String>,
}

#[derive(Debug)]
pub struct SuiteResult {
    pub cells: Vec<CellResult>,
}

impl SuiteResult {
    /// One row per cell plus one mean row per (depth, arm).
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("depth,arm,seed,final_epoch,final_train_loss,final_test_loss,final_test_acc,status\n");
        for c in &self.cells {
            let (epoch, tl, vl, va, status) = match &c.outcome {
                Ok(t) => match t.last() {
                    Some(r) => (
                        r.epoch.to_string(),
                        fmt_g9(r.train_loss),
                        fmt_g9(r.test_loss),
                        fmt_g9(r.test_acc),
                        if t.diverged.is_some() { "diverged" } else { "ok" }.to_string(),
                    ),
                    None => (String::new(), String::new(), String::new(), String::new(), "diverged".into()),
                },
                Err(e) => (String::new(), String::new(), String::new(), String::new(), format!("error: {}", e.replace(',', ";"))),
            };
            writeln!(s, "{},{},{},{epoch},{tl},{vl},{va},{status}", c.config.depth(), c.config.arm(), c.config.seed).unwrap();
        }
        for (depth, arm, mean) in self.arm_means() {
            writeln!(s, "{depth},{arm},mean,,{},,,", fmt_g9(mean)).unwrap();
        }
        s
    }

    /// Mean final train loss per (depth, arm) over cells that finished.
    pub fn arm_means(&self) -> Vec<(usize, String, f64)> {
        let mut groups: Vec<(usize, String, Vec<f64>)> = Vec::new();
        for c in &self.cells {
            let key = (c.config.depth(), c.config.arm());
            let loss = match &c.outcome {
                Ok(t) if t.diverged.is_none() => t.last().map(|r| r.train_loss),
                _ => None,
            };
            match groups.iter_mut().find(|(d, a, _)| (*d, a.clone()) == key) {
                Some(g) => g.2.extend(loss),
                None => groups.push((key.0, key.1, loss.into_iter().collect())),
            }
        }
        groups
            .into_iter()
            .filter(|(_, _, v)| !v.is_empty())
            .map(|(d, a, v)| (d, a, v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    }
}

/// Runs every cell; failures are recorded and the remaining cells still run.
pub fn run_suite(grid: &GridSpec, data: &MnistData) -> Result<SuiteResult> {
    let cells = grid.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.parallelism)
        .build()
        .map_err(|e| BenchError::Invalid(format!("thread pool: {e}")))?;
    let cells = pool.install(|| {
        cells
            .into_par_iter()
            .map(|config| {
                let outcome = run_mlp(&config, data).map_err(|e| e.to_string());
                CellResult { config, outcome }
            })
            .collect()
    });
    Ok(SuiteResult { cells })
}

#[derive(Debug, Clone)]
pub struct BoundCase {
    pub seed: u64,
    pub steps: u64,
    pub report: BoundReport,
    pub min_residual: f64,
    pub violations: usize,
    pub lemma_ok: bool,
    pub passed: bool,
}

/// AdaGradBNG over `seeds × steps` on the convex task described by `base`.
pub fn verify_bounds(base: &ExperimentConfig, seeds: &[u64], steps: &[u64]) -> Result<Vec<BoundCase>> {
    if !base.task.is_convex() {
        return Err(BenchError::Invalid(format!("verify-bounds needs a convex task, got {}", base.task)));
    }
    let mut out = Vec::new();
    for &seed in seeds {
        for &t in steps {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.steps = t;
            let (_, run) = run_convex(&cfg)?;
            let lemma_ok = run
                .lemma_lhs
                .iter()
                .zip(&run.lemma_rhs)
                .all(|(l, h)| *l <= h + crate::experiment::RESIDUAL_TOL);
            out.push(BoundCase {
                seed,
                steps: t,
                min_residual: run.min_residual,
                violations: run.violations.len(),
                lemma_ok,
                passed: convex_run_passes(&run),
                report: run.report,
            });
        }
    }
    Ok(out)
}

pub fn bound_csv(cases: &[BoundCase], layout: &BlockLayout) -> String {
    let mut s = BoundReport::csv_header(layout.num_blocks());
    s.push_str(",min_residual,passed\n");
    for c in cases {
        writeln!(s, "{},{:e},{}", c.report.csv_row(c.seed), c.min_residual, c.passed).unwrap();
    }
    s
}
