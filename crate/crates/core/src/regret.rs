//! Per-path verification of the AdaGradBNG regret bound on convex problems.
//!
//! A [`RegretTracker`] follows one trajectory `x_1, x_2, …` and keeps the
//! quantities needed to evaluate every step of the proof chain:
//!
//! * the per-step inequality
//!   `F(x_t) − F(x*) ≤ (‖x_t − x*‖²_{H_t} − ‖x_{t+1} − x*‖²_{H_t}) / 2η
//!    + Σ_i (η/2)‖F_i'‖² ‖g^i‖²_{H_t⁻¹}`,
//!   where `H_t = diag(δ + s_t)` and `s_{t,j} = √Σ_{k≤t} g_{k,j}²`;
//! * the accumulator lemma `Σ_t Σ_{j∈i} g_{t,j}² / (δ + s_{t,j}) ≤ 2 Σ_{j∈i} s_{T,j}`;
//! * the final averaged bound in its two forms.

use std::fmt::Write as _;
use std::ops::Range;

use crate::blocked::{BlockLayout, BlockedVector};
use crate::convex::{BlockGradBound, ConvexProblem};
use crate::error::{Error, Result};
use crate::numerics::CompensatedSum;
use crate::optim::{adagrad_bng_step, AdagradState};
use crate::rng::SplitMix64;
use crate::transforms::{block_normalize, BlockNormReport, DEFAULT_ZERO_EPS};

#[derive(Debug, Clone)]
pub struct RegretTracker {
    eta: f64,
    delta: f64,
    x_star: BlockedVector,
    steps: u64,
    // Same plain accumulation order as the optimizer, so `H_t` matches bitwise.
    sum_sq: Vec<f64>,
    s: Vec<f64>,
    d_inf: f64,
    m_observed: Vec<f64>,
    gap_sum: CompensatedSum,
    x_sum: Vec<CompensatedSum>,
    h1_dist_sq: f64,
    lemma_lhs: Vec<CompensatedSum>,
    grad_term_sum: CompensatedSum,
    last_x: Option<Vec<f64>>,
}

impl RegretTracker {
    pub fn new(eta: f64, delta: f64, x_star: BlockedVector) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) || !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta and delta must be positive, got {eta} and {delta}"
            )));
        }
        x_star.ensure_finite("x*")?;
        let d = x_star.len();
        let b = x_star.num_blocks();
        Ok(Self {
            eta,
            delta,
            steps: 0,
            sum_sq: vec![0.0; d],
            s: vec![0.0; d],
            d_inf: 0.0,
            m_observed: vec![0.0; b],
            gap_sum: CompensatedSum::new(),
            x_sum: vec![CompensatedSum::new(); d],
            h1_dist_sq: 0.0,
            lemma_lhs: vec![CompensatedSum::new(); b],
            grad_term_sum: CompensatedSum::new(),
            last_x: None,
            x_star,
        })
    }

    pub fn layout(&self) -> &BlockLayout {
        self.x_star.layout()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Current `s_t`.
    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// `max_t ‖x_t − x*‖_∞` over the tracked iterates.
    pub fn d_inf_observed(&self) -> f64 {
        self.d_inf
    }

    /// `max_t ‖F_i'(x_t, ξ_t)‖₂` per block.
    pub fn m_observed(&self) -> &[f64] {
        &self.m_observed
    }

    /// `(1/T) Σ_t [F(x_t, ξ_t) − F(x*, ξ_t)]`.
    pub fn measured_gap(&self) -> f64 {
        self.gap_sum.value() / self.steps as f64
    }

    /// `x̄_T = (1/T) Σ_t x_t`.
    pub fn average_iterate(&self) -> Vec<f64> {
        self.x_sum.iter().map(|c| c.value() / self.steps as f64).collect()
    }

    fn check_point(&self, what: &'static str, v: &BlockedVector) -> Result<()> {
        v.ensure_same_layout(&self.x_star, what)?;
        v.ensure_finite(what)
    }

    /// Records step `step` (1-based): the iterate `x_t`, the raw stochastic
    /// gradient, its block-normalized direction and both sampled losses.
    /// The accumulator is updated first, so later queries see `H_t`.
    pub fn track_step(
        &mut self,
        step: u64,
        x_t: &BlockedVector,
        grad_raw: &BlockedVector,
        dir: &BlockedVector,
        loss_xt: f64,
        loss_xstar: f64,
    ) -> Result<()> {
        if step != self.steps + 1 {
            return Err(Error::Tracker(format!(
                "expected step {}, got step {step}",
                self.steps + 1
            )));
        }
        self.check_point("track_step x_t", x_t)?;
        self.check_point("track_step gradient", grad_raw)?;
        self.check_point("track_step direction", dir)?;
        if !loss_xt.is_finite() || !loss_xstar.is_finite() {
            return Err(Error::NonFinite { what: "tracked loss", index: step as usize, value: loss_xt + loss_xstar });
        }
        for ((acc, s), &g) in self.sum_sq.iter_mut().zip(&mut self.s).zip(dir.as_slice()) {
            *acc += g * g;
            *s = acc.sqrt();
        }
        let xs = self.x_star.as_slice();
        if step == 1 {
            self.h1_dist_sq = weighted_dist_sq(x_t.as_slice(), xs, &self.s, self.delta, 0..xs.len());
        }
        for (i, range) in self.layout().clone().ranges().enumerate() {
            let f_norm_sq: f64 = grad_raw.block(i).iter().map(|v| v * v).sum();
            self.m_observed[i] = self.m_observed[i].max(f_norm_sq.sqrt());
            let lemma: f64 = range
                .clone()
                .map(|j| dir.as_slice()[j].powi(2) / (self.delta + self.s[j]))
                .sum();
            self.lemma_lhs[i].add(lemma);
            self.grad_term_sum.add(0.5 * self.eta * f_norm_sq * lemma);
        }
        for (j, (&x, &c)) in x_t.as_slice().iter().zip(xs).enumerate() {
            self.d_inf = self.d_inf.max((x - c).abs());
            self.x_sum[j].add(x);
        }
        self.gap_sum.add(loss_xt - loss_xstar);
        self.last_x = Some(x_t.as_slice().to_vec());
        self.steps = step;
        Ok(())
    }
}

fn weighted_dist_sq(x: &[f64], c: &[f64], s: &[f64], delta: f64, range: Range<usize>) -> f64 {
    range.map(|j| (delta + s[j]) * (x[j] - c[j]).powi(2)).sum()
}

/// Right-hand side minus left-hand side of the per-step inequality for the
/// step most recently passed to [`RegretTracker::track_step`]. A correct
/// implementation never returns a negative value beyond rounding.
pub fn per_step_inequality_check(
    tr: &RegretTracker,
    x_t: &BlockedVector,
    x_t1: &BlockedVector,
    grad_raw: &BlockedVector,
    dir: &BlockedVector,
    loss_xt: f64,
    loss_xstar: f64,
) -> Result<f64> {
    match &tr.last_x {
        Some(last) if last.as_slice() == x_t.as_slice() => {}
        Some(_) => {
            return Err(Error::Tracker(
                "x_t differs from the iterate the tracker last recorded; H_t would not match".into(),
            ))
        }
        None => return Err(Error::Tracker("no step has been tracked yet".into())),
    }
    tr.check_point("x_{t+1}", x_t1)?;
    tr.check_point("gradient", grad_raw)?;
    tr.check_point("direction", dir)?;
    let xs = tr.x_star.as_slice();
    let d = xs.len();
    let before = weighted_dist_sq(x_t.as_slice(), xs, &tr.s, tr.delta, 0..d);
    let after = weighted_dist_sq(x_t1.as_slice(), xs, &tr.s, tr.delta, 0..d);
    let mut grad_term = 0.0;
    for (i, range) in tr.layout().ranges().enumerate() {
        let f_norm_sq: f64 = grad_raw.block(i).iter().map(|v| v * v).sum();
        let inv: f64 = range
            .map(|j| dir.as_slice()[j].powi(2) / (tr.delta + tr.s[j]))
            .sum();
        grad_term += 0.5 * tr.eta * f_norm_sq * inv;
    }
    let rhs = (before - after) / (2.0 * tr.eta) + grad_term;
    Ok(rhs - (loss_xt - loss_xstar))
}

/// Per-block `(Σ_t Σ_j g²/(δ + s_t), 2 Σ_j s_{T,j})`.
pub fn lemma_sum_check(tr: &RegretTracker) -> Result<(Vec<f64>, Vec<f64>)> {
    if tr.steps == 0 {
        return Err(Error::Tracker("lemma check needs at least one tracked step".into()));
    }
    let lhs = tr.lemma_lhs.iter().map(CompensatedSum::value).collect();
    let rhs = tr
        .layout()
        .ranges()
        .map(|r| 2.0 * tr.s[r].iter().sum::<f64>())
        .collect();
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTerms {
    /// `‖x_1 − x*‖²_{H_1} / (2ηT)`.
    pub distance: f64,
    /// `D_∞² √(Bd) / (2η√T)`.
    pub diameter: f64,
    pub gradient: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.distance + self.diameter + self.gradient
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub steps: u64,
    pub measured_gap: f64,
    /// `f(x̄_T) − f(x*)`; filled in by callers that can evaluate `f`.
    pub average_iterate_gap: Option<f64>,
    /// Bound chain evaluated on the observed path, tightest first.
    pub path_bound: f64,
    pub lemma_bound: f64,
    /// Gradient term `Σ_i ηM_i² Σ_j s_{T,j} / T`.
    pub form1: BoundTerms,
    /// Gradient term `Σ_i ηM_i² √d_i / √T`.
    pub form2: BoundTerms,
    pub d_inf: f64,
    pub m: Vec<f64>,
    pub s_total: f64,
}

impl BoundReport {
    pub fn bound_form1(&self) -> f64 {
        self.form1.total()
    }

    pub fn bound_form2(&self) -> f64 {
        self.form2.total()
    }

    pub fn csv_header(num_blocks: usize) -> String {
        let mut h = String::from(
            "seed,T,measured_gap,avg_iterate_gap,bound_form1,bound_form2,term1,term2,term3_form1,term3_form2,D_inf",
        );
        for i in 1..=num_blocks {
            write!(h, ",M_{i}").unwrap();
        }
        h
    }

    pub fn csv_row(&self, seed: u64) -> String {
        let gap = self.average_iterate_gap.map(|g| format!("{g:e}")).unwrap_or_default();
        let mut row = format!(
            "{seed},{},{:e},{gap},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.steps,
            self.measured_gap,
            self.bound_form1(),
            self.bound_form2(),
            self.form1.distance,
            self.form1.diameter,
            self.form1.gradient,
            self.form2.gradient,
            self.d_inf,
        );
        for m in &self.m {
            write!(row, ",{m:e}").unwrap();
        }
        row
    }
}

/// Evaluates the averaged bound for the tracked path with per-block gradient
/// bounds `m` (one per block) and the observed `D_∞`.
pub fn regret_bound(tr: &RegretTracker, m: &[f64]) -> Result<BoundReport> {
    let (_, lemma_rhs) = lemma_sum_check(tr)?;
    let layout = tr.layout();
    if m.len() != layout.num_blocks() {
        return Err(Error::Shape {
            op: "regret_bound",
            detail: format!("{} gradient bounds for {} blocks", m.len(), layout.num_blocks()),
        });
    }
    if let Some((i, v)) = m.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("gradient bound M_{i} = {v} is not a finite nonnegative number")));
    }
    let t = tr.steps as f64;
    let (eta, d_inf) = (tr.eta, tr.d_inf);
    let bd = (layout.num_blocks() * layout.dim()) as f64;
    let s_total: f64 = tr.s.iter().sum();
    let distance = tr.h1_dist_sq / (2.0 * eta * t);
    let diameter = d_inf * d_inf * bd.sqrt() / (2.0 * eta * t.sqrt());
    let path_bound = distance + d_inf * d_inf * s_total / (2.0 * eta * t) + tr.grad_term_sum.value() / t;
    let lemma_grad: f64 = m
        .iter()
        .zip(&lemma_rhs)
        .map(|(mi, r)| 0.5 * eta * mi * mi * r)
        .sum::<f64>()
        / t;
    let lemma_bound = distance + d_inf * d_inf * s_total / (2.0 * eta * t) + lemma_grad;
    let grad2: f64 = m
        .iter()
        .enumerate()
        .map(|(i, mi)| eta * mi * mi * (layout.block_len(i) as f64).sqrt())
        .sum::<f64>()
        / t.sqrt();
    Ok(BoundReport {
        steps: tr.steps,
        measured_gap: tr.measured_gap(),
        average_iterate_gap: None,
        path_bound,
        lemma_bound,
        form1: BoundTerms { distance, diameter, gradient: lemma_grad },
        form2: BoundTerms { distance, diameter, gradient: grad2 },
        d_inf,
        m: m.to_vec(),
        s_total,
    })
}

/// Per-group gradient bounds for a fixed coordinate grouping; the bound of
/// any block is `√(Σ M_g²)` over the groups it intersects.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBounds {
    layout: BlockLayout,
    bounds: Vec<f64>,
}

impl GroupBounds {
    pub fn new(layout: BlockLayout, bounds: Vec<f64>) -> Result<Self> {
        if bounds.len() != layout.num_blocks() {
            return Err(Error::Shape {
                op: "GroupBounds::new",
                detail: format!("{} bounds for {} groups", bounds.len(), layout.num_blocks()),
            });
        }
        if bounds.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidArgument("group bounds must be finite and nonnegative".into()));
        }
        Ok(Self { layout, bounds })
    }
}

impl BlockGradBound for GroupBounds {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn block_bound(&self, range: Range<usize>, _d_inf: f64) -> Result<f64> {
        if range.is_empty() || range.end > self.dim() {
            return Err(Error::InvalidArgument(format!("block {range:?} outside 0..{}", self.dim())));
        }
        let sq: f64 = self
            .layout
            .ranges()
            .zip(&self.bounds)
            .filter(|(g, _)| g.start < range.end && range.start < g.end)
            .map(|(_, b)| b * b)
            .sum();
        Ok(sq.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSetup {
    pub eta: f64,
    pub delta: f64,
    pub steps: u64,
    pub d_inf: f64,
    /// `‖x_1 − x*‖₂²`.
    pub x1_dist_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRow {
    pub block_dims: Vec<usize>,
    pub m: Vec<f64>,
    /// `(1 + δ)‖x_1 − x*‖² / (2ηT)`, using `s_{1,j} ≤ 1`.
    pub term1: f64,
    pub term2: f64,
    /// `Σ_i ηM_i²√d_i / √T`.
    pub term3: f64,
}

impl PartitionRow {
    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn total(&self) -> f64 {
        self.term1 + self.term2 + self.term3
    }
}

/// A-priori bound (second form) for each candidate partition of the same
/// coordinates.
pub fn compare_block_partitions(
    source: &impl BlockGradBound,
    partitions: &[BlockLayout],
    setup: PartitionSetup,
) -> Result<Vec<PartitionRow>> {
    let PartitionSetup { eta, delta, steps, d_inf, x1_dist_sq } = setup;
    if !(eta > 0.0) || !(delta > 0.0) || steps == 0 || !(d_inf >= 0.0) || !(x1_dist_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid partition setup {setup:?}")));
    }
    let t = steps as f64;
    partitions
        .iter()
        .map(|p| {
            if p.dim() != source.dim() {
                return Err(Error::Layout(format!(
                    "partition covers {} coordinates, problem has {}",
                    p.dim(),
                    source.dim()
                )));
            }
            let m = p
                .ranges()
                .map(|r| source.block_bound(r, d_inf))
                .collect::<Result<Vec<_>>>()?;
            let dims: Vec<usize> = (0..p.num_blocks()).map(|i| p.block_len(i)).collect();
            let bd = (p.num_blocks() * p.dim()) as f64;
            let term3 = m
                .iter()
                .zip(&dims)
                .map(|(mi, di)| eta * mi * mi * (*di as f64).sqrt())
                .sum::<f64>()
                / t.sqrt();
            Ok(PartitionRow {
                term1: (1.0 + delta) * x1_dist_sq / (2.0 * eta * t),
                term2: d_inf * d_inf * bd.sqrt() / (2.0 * eta * t.sqrt()),
                term3,
                block_dims: dims,
                m,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexRunSpec {
    pub eta: f64,
    pub delta: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ConvexRun {
    pub report: BoundReport,
    pub min_residual: f64,
    /// Steps whose per-step residual fell below `−tol`.
    pub violations: Vec<(u64, f64)>,
    pub lemma_lhs: Vec<f64>,
    pub lemma_rhs: Vec<f64>,
    pub final_x: Vec<f64>,
    pub tracker: RegretTracker,
}

/// Runs AdaGradBNG from `x_1 = 0` on `problem`, sampling `batch_size`
/// examples i.i.d. per step, and checks the per-step inequality at every step.
pub fn run_adagrad_bng(problem: &ConvexProblem, spec: ConvexRunSpec, tol: f64) -> Result<ConvexRun> {
    run_adagrad_bng_observed(problem, spec, tol, |_: &StepView<'_>| {})
}

/// What an observer sees after each step.
pub struct StepView<'a> {
    pub step: u64,
    /// `x_{t+1}`.
    pub x: &'a BlockedVector,
    pub report: &'a BlockNormReport,
    pub tracker: &'a RegretTracker,
}

/// [`run_adagrad_bng`] with a callback after every step.
pub fn run_adagrad_bng_observed<F>(problem: &ConvexProblem, spec: ConvexRunSpec, tol: f64, mut observe: F) -> Result<ConvexRun>
where
    F: FnMut(&StepView<'_>),
{
    if spec.steps == 0 || spec.batch_size == 0 {
        return Err(Error::InvalidArgument("steps and batch size must be positive".into()));
    }
    let layout = problem.layout().clone();
    let x_star = problem.x_star();
    let mut state = AdagradState::new(spec.eta, spec.delta, layout.clone())?;
    let mut tracker = RegretTracker::new(spec.eta, spec.delta, x_star.clone())?;
    let mut rng = SplitMix64::new(spec.seed);
    let mut x = BlockedVector::zeros(layout);
    let mut min_residual = f64::INFINITY;
    let mut violations = Vec::new();
    for t in 1..=spec.steps {
        let idx = problem.sample(&mut rng, spec.batch_size);
        let loss_xt = problem.loss(x.as_slice(), &idx);
        let loss_xstar = problem.loss(x_star.as_slice(), &idx);
        let grad = problem.grad(x.as_slice(), &idx);
        let (dir, report) = block_normalize(&grad, DEFAULT_ZERO_EPS)?;
        let x_t = x.clone();
        adagrad_bng_step(&mut state, &mut x, &grad, &report)?;
        tracker.track_step(t, &x_t, &grad, &dir, loss_xt, loss_xstar)?;
        let r = per_step_inequality_check(&tracker, &x_t, &x, &grad, &dir, loss_xt, loss_xstar)?;
        min_residual = min_residual.min(r);
        if r < -tol {
            violations.push((t, r));
        }
        observe(&StepView { step: t, x: &x, report: &report, tracker: &tracker });
    }
    let m = problem.grad_bounds(tracker.d_inf_observed());
    let mut report = regret_bound(&tracker, &m)?;
    let x_bar = tracker.average_iterate();
    report.average_iterate_gap = Some(problem.full_loss(&x_bar) - problem.full_loss(x_star.as_slice()));
    let (lemma_lhs, lemma_rhs) = lemma_sum_check(&tracker)?;
    Ok(ConvexRun {
        report,
        min_residual,
        violations,
        lemma_lhs,
        lemma_rhs,
        final_x: x.into_vec(),
        tracker,
    })
}
