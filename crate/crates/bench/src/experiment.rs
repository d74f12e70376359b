use std::path::Path;
use std::time::Instant;

use bng_core::blocked::BlockLayout;
use bng_core::convex::{logistic_problem_with_l2, synth_least_squares, ConvexProblem};
use bng_core::data::{batch_iter, load_mnist_dir, BatchPlan, Dataset};
use bng_core::mlp::MlpModel;
use bng_core::optim::{bng_iterate, AdagradState, AdamState, SgdmState, StepRule};
use bng_core::regret::{run_adagrad_bng_observed, ConvexRun, ConvexRunSpec, StepView};
use bng_core::transforms::DirectionRule;
use bng_core::Error as CoreError;

use crate::config::{ExperimentConfig, Optimizer, Task, Transform};
use crate::error::{BenchError, Result};
use crate::metrics::{MetricsRow, MetricsTable};

/// Residual tolerance for the per-step regret inequality.
pub const RESIDUAL_TOL: f64 = 1e-9;
const EVAL_CHUNK: usize = 1000;

/// Train/test split used by the MNIST task.
#[derive(Debug, Clone)]
pub struct MnistData {
    pub train: Dataset,
    pub test: Dataset,
}

impl MnistData {
    pub fn load(dir: &Path) -> Result<Self> {
        let (train, test) = load_mnist_dir(dir)?;
        Ok(Self { train, test })
    }
}

pub fn direction_rule(cfg: &ExperimentConfig) -> Result<DirectionRule> {
    let rule = match cfg.transform {
        Transform::Raw => DirectionRule::raw(),
        Transform::Ng => DirectionRule::normalize(),
        Transform::Clip => DirectionRule::clip(cfg.clip, cfg.clip_scope)?,
        Transform::NgAdap => DirectionRule::adap_ratio(cfg.adap_alpha)?,
    };
    Ok(rule.with_zero_eps(cfg.zero_eps)?)
}

pub fn step_rule(cfg: &ExperimentConfig, layout: BlockLayout) -> Result<StepRule> {
    Ok(match cfg.optimizer {
        Optimizer::Sgdm => StepRule::Sgdm(SgdmState::new(cfg.lr, cfg.mu, layout)?),
        Optimizer::Adagrad => StepRule::Adagrad(AdagradState::new(cfg.eta, cfg.delta, layout)?),
        Optimizer::Adam => StepRule::Adam(AdamState::new(cfg.alpha, cfg.beta1, cfg.beta2, cfg.eps, layout)?),
        Optimizer::AdagradBng => StepRule::AdagradBng(AdagradState::new(cfg.eta, cfg.delta, layout)?),
    })
}

/// Runs a config, loading MNIST from `cfg.data_dir` when needed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    match cfg.task {
        Task::MnistMlp => {
            let data = MnistData::load(&cfg.data_dir)?;
            run_mlp(cfg, &data)
        }
        _ => run_convex(cfg).map(|(t, _)| t),
    }
}

fn limited(ds: &Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(l) if l < ds.len() => ds.head(l),
        _ => ds.clone(),
    }
}

fn is_divergence(e: &CoreError) -> bool {
    matches!(e, CoreError::NonFinite { .. } | CoreError::Diverged { .. })
}

fn summarize(sums: &[f64], count: u64) -> (f64, f64, f64) {
    let means: Vec<f64> = sums.iter().map(|s| s / count.max(1) as f64).collect();
    let min = means.iter().copied().fold(f64::INFINITY, f64::min);
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, means.iter().sum::<f64>() / means.len() as f64, max)
}

/// Trains an MLP on already-loaded data. Each epoch reshuffles with
/// `(seed, epoch)`; full train and test sets are evaluated on evaluation epochs.
pub fn run_mlp(cfg: &ExperimentConfig, data: &MnistData) -> Result<MetricsTable> {
    if cfg.task != Task::MnistMlp {
        return Err(BenchError::Invalid(format!("run_mlp called for task {}", cfg.task)));
    }
    let train = limited(&data.train, cfg.train_limit);
    let test = limited(&data.test, cfg.test_limit);
    if train.dim() != cfg.widths[0] {
        return Err(BenchError::Invalid(format!(
            "data has {} features, network expects {}",
            train.dim(),
            cfg.widths[0]
        )));
    }
    let mut model = MlpModel::new(&cfg.widths, cfg.seed)?;
    let rule = direction_rule(cfg)?;
    let mut step = step_rule(cfg, model.layout().clone())?;
    let mut table = MetricsTable::default();
    let start = Instant::now();
    let nblocks = model.layout().num_blocks();
    let mut norm_sums = vec![0.0; nblocks];
    let mut norm_count = 0u64;
    for epoch in 1..=cfg.epochs {
        let plan = BatchPlan::new(train.len(), cfg.batch_size, cfg.seed, epoch - 1)?;
        for batch in batch_iter(&train, &plan)? {
            match bng_iterate(&mut model, &batch, &rule, &mut step) {
                Ok(out) => {
                    for (s, n) in norm_sums.iter_mut().zip(&out.report.norms) {
                        *s += n;
                    }
                    norm_count += 1;
                }
                Err(e) if is_divergence(&e) => {
                    table.diverged = Some(format!("epoch {epoch}: {e}"));
                    return Ok(table);
                }
                Err(e) => return Err(e.into()),
            }
        }
        if epoch % cfg.eval_every != 0 && epoch != cfg.epochs {
            continue;
        }
        let (train_loss, train_acc) = model.evaluate(&train, EVAL_CHUNK)?;
        let (test_loss, test_acc) = model.evaluate(&test, EVAL_CHUNK)?;
        let (gnorm_min, gnorm_mean, gnorm_max) = summarize(&norm_sums, norm_count);
        norm_sums.iter_mut().for_each(|s| *s = 0.0);
        norm_count = 0;
        table.rows.push(MetricsRow {
            epoch,
            train_loss,
            test_loss,
            train_acc,
            test_acc,
            wall_seconds: start.elapsed().as_secs_f64(),
            gnorm_min,
            gnorm_mean,
            gnorm_max,
        });
        if !train_loss.is_finite() || !test_loss.is_finite() {
            table.diverged = Some(format!("epoch {epoch}: non-finite evaluation loss"));
            return Ok(table);
        }
    }
    Ok(table)
}

pub fn convex_problem(cfg: &ExperimentConfig) -> Result<ConvexProblem> {
    let layout = BlockLayout::from_sizes(&cfg.blocks)?;
    Ok(match cfg.task {
        Task::ConvexLogistic => logistic_problem_with_l2(cfg.n, cfg.dim, cfg.seed, layout, cfg.l2)?,
        Task::ConvexLsq => synth_least_squares(cfg.n, cfg.dim, cfg.seed, layout)?,
        Task::MnistMlp => return Err(BenchError::Invalid("mnist-mlp is not a convex task".into())),
    })
}

/// AdaGradBNG on a convex task. One "epoch" is `n` steps; rows report the
/// current iterate in the train columns and the running average iterate in
/// the test columns. The bound report is attached to the table.
pub fn run_convex(cfg: &ExperimentConfig) -> Result<(MetricsTable, ConvexRun)> {
    let problem = convex_problem(cfg)?;
    let spec = ConvexRunSpec {
        eta: cfg.eta,
        delta: cfg.delta,
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let per_epoch = problem.num_examples() as u64;
    let nblocks = problem.layout().num_blocks();
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut norm_sums = vec![0.0; nblocks];
    let mut count = 0u64;
    let acc = |x: &[f64]| problem.accuracy(x).unwrap_or(f64::NAN);
    let run = run_adagrad_bng_observed(&problem, spec, RESIDUAL_TOL, |v: &StepView<'_>| {
        for (s, n) in norm_sums.iter_mut().zip(&v.report.norms) {
            *s += n;
        }
        count += 1;
        if !v.step.is_multiple_of(per_epoch) && v.step != spec.steps {
            return;
        }
        let x = v.x.as_slice();
        let x_bar = v.tracker.average_iterate();
        let (gnorm_min, gnorm_mean, gnorm_max) = summarize(&norm_sums, count);
        norm_sums.iter_mut().for_each(|s| *s = 0.0);
        count = 0;
        rows.push(MetricsRow {
            epoch: v.step.div_ceil(per_epoch),
            train_loss: problem.full_loss(x),
            test_loss: problem.full_loss(&x_bar),
            train_acc: acc(x),
            test_acc: acc(&x_bar),
            wall_seconds: start.elapsed().as_secs_f64(),
            gnorm_min,
            gnorm_mean,
            gnorm_max,
        });
    });
    let run = match run {
        Ok(r) => r,
        Err(e) if is_divergence(&e) => {
            return Err(BenchError::Invalid(format!("convex run diverged: {e}")));
        }
        Err(e) => return Err(e.into()),
    };
    let table = MetricsTable { rows, diverged: None, bound: Some(run.report.clone()) };
    Ok((table, run))
}

/// True when every checked inequality of a convex run holds.
pub fn convex_run_passes(run: &ConvexRun) -> bool {
    let r = &run.report;
    run.violations.is_empty()
        && run.lemma_lhs.iter().zip(&run.lemma_rhs).all(|(l, h)| *l <= h + RESIDUAL_TOL)
        && r.measured_gap <= r.bound_form1()
        && r.bound_form1() <= r.bound_form2()
}

/// One plain-text line describing a finished run.
pub fn summary_line(cfg: &ExperimentConfig, table: &MetricsTable) -> String {
    let mut s = format!("task={} arm={} depth={} seed={}", cfg.task, cfg.arm(), cfg.depth(), cfg.seed);
    if cfg.task.is_convex() {
        s = format!("task={} seed={} T={} blocks={:?}", cfg.task, cfg.seed, cfg.steps, cfg.blocks);
    }
    if let Some(r) = table.last() {
        s.push_str(&format!(
            " epochs={} train_loss={:.6} test_loss={:.6} train_acc={:.4} test_acc={:.4}",
            r.epoch, r.train_loss, r.test_loss, r.train_acc, r.test_acc
        ));
    }
    if let Some(b) = &table.bound {
        s.push_str(&format!(
            " gap={:.6e} bound_form1={:.6e} bound_form2={:.6e}",
            b.measured_gap,
            b.bound_form1(),
            b.bound_form2()
        ));
    }
    if let Some(d) = &table.diverged {
        s.push_str(&format!(" DIVERGED ({d})"));
    }
    s
}
