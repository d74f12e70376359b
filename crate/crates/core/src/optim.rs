//! Step-size rules and the generic block-normalized iteration.
//!
//! One iteration samples a batch, computes the raw blocked gradient, turns it
//! into a direction with a [`DirectionRule`] and hands the direction to a
//! [`StepRule`], which performs `x ← x − τ ∘ (update source)`.
//!
//! After every step each rule keeps the per-coordinate multipliers `τ` it used
//! ([`StepRule::step_sizes`]). The vector `τ` multiplies is the rule's update
//! source: the velocity for momentum SGD, the bias-corrected first moment for
//! Adam, and the direction itself for both AdaGrad variants.

use crate::blocked::{BlockLayout, BlockedVector, Direction};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::transforms::{BlockNormReport, DirectionRule};

pub const DEFAULT_SGDM_LR: f64 = 0.1;
pub const DEFAULT_SGDM_MU: f64 = 0.9;
pub const DEFAULT_ADAGRAD_ETA: f64 = 0.01;
pub const DEFAULT_ADAGRAD_DELTA: f64 = 1e-8;
pub const DEFAULT_ADAM_ALPHA: f64 = 0.001;
pub const DEFAULT_ADAM_BETA1: f64 = 0.9;
pub const DEFAULT_ADAM_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

fn positive(what: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("{what} must be positive, got {v}")))
    }
}

fn unit_interval(what: &str, v: f64) -> Result<f64> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("{what} must lie in [0, 1), got {v}")))
    }
}

fn check_layouts(params: &BlockedVector, dir: &BlockedVector, layout: &BlockLayout) -> Result<()> {
    params.ensure_same_layout(dir, "optimizer step")?;
    if params.layout() != layout {
        return Err(Error::Layout(format!(
            "optimizer state was built for offsets {:?}, parameters have {:?}",
            layout.offsets(),
            params.layout().offsets()
        )));
    }
    dir.ensure_finite("direction")
}

fn check_finite_params(params: &BlockedVector, step: u64) -> Result<()> {
    match params.as_slice().iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::Diverged { step, index }),
    }
}

/// Heavy-ball momentum: `v ← μv + g`, `x ← x − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdmState {
    pub lr: f64,
    pub mu: f64,
    velocity: BlockedVector,
    steps: u64,
}

impl SgdmState {
    pub fn new(lr: f64, mu: f64, layout: BlockLayout) -> Result<Self> {
        Ok(Self {
            lr: positive("learning rate", lr)?,
            mu: unit_interval("momentum", mu)?,
            velocity: BlockedVector::zeros(layout),
            steps: 0,
        })
    }

    pub fn velocity(&self) -> &BlockedVector {
        &self.velocity
    }
}

pub fn sgdm_step(state: &mut SgdmState, params: &mut BlockedVector, dir: &Direction) -> Result<()> {
    check_layouts(params, dir, state.velocity.layout())?;
    state.steps += 1;
    let (lr, mu) = (state.lr, state.mu);
    for ((x, v), &g) in params
        .as_mut_slice()
        .iter_mut()
        .zip(state.velocity.as_mut_slice())
        .zip(dir.as_slice())
    {
        *v = mu * *v + g;
        *x -= lr * *v;
    }
    check_finite_params(params, state.steps)
}

/// AdaGrad with `τ_j = η / (δ + √Σ g_j²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub eta: f64,
    pub delta: f64,
    accum_sq: BlockedVector,
    tau: Vec<f64>,
    steps: u64,
}

impl AdagradState {
    pub fn new(eta: f64, delta: f64, layout: BlockLayout) -> Result<Self> {
        let d = layout.dim();
        Ok(Self {
            eta: positive("eta", eta)?,
            delta: positive("delta", delta)?,
            accum_sq: BlockedVector::zeros(layout),
            tau: vec![0.0; d],
            steps: 0,
        })
    }

    /// Running `Σ_t g_{t,j}²` per coordinate.
    pub fn accum_sq(&self) -> &BlockedVector {
        &self.accum_sq
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

pub fn adagrad_step(state: &mut AdagradState, params: &mut BlockedVector, dir: &Direction) -> Result<()> {
    check_layouts(params, dir, state.accum_sq.layout())?;
    state.steps += 1;
    let (eta, delta) = (state.eta, state.delta);
    for (((x, acc), tau), &g) in params
        .as_mut_slice()
        .iter_mut()
        .zip(state.accum_sq.as_mut_slice())
        .zip(&mut state.tau)
        .zip(dir.as_slice())
    {
        *acc += g * g;
        *tau = eta / (delta + acc.sqrt());
        *x -= *tau * g;
    }
    check_finite_params(params, state.steps)
}

/// AdaGrad whose accumulator sees block-normalized directions while each
/// block's step is rescaled by that block's raw gradient norm:
/// `τ_j = η‖F_i'‖₂ / (δ + s_j)` with `s_j = √Σ_t g_{t,j}²`, `g` normalized.
///
/// Blocks flagged as zero in `report` neither accumulate nor move.
pub fn adagrad_bng_step(
    state: &mut AdagradState,
    params: &mut BlockedVector,
    grad: &BlockedVector,
    report: &BlockNormReport,
) -> Result<()> {
    check_layouts(params, grad, state.accum_sq.layout())?;
    if report.num_blocks() != grad.num_blocks() {
        return Err(Error::Shape {
            op: "adagrad_bng_step",
            detail: format!("{} block norms for {} blocks", report.num_blocks(), grad.num_blocks()),
        });
    }
    state.steps += 1;
    let (eta, delta) = (state.eta, state.delta);
    let layout = grad.layout().clone();
    for (i, range) in layout.ranges().enumerate() {
        if report.is_zero(i) {
            state.tau[range].fill(0.0);
            continue;
        }
        let raw_norm = report.norms[i];
        let x = &mut params.as_mut_slice()[range.clone()];
        let acc = &mut state.accum_sq.as_mut_slice()[range.clone()];
        let tau = &mut state.tau[range.clone()];
        for (((x, acc), tau), &f) in x.iter_mut().zip(acc).zip(tau).zip(&grad.as_slice()[range]) {
            let g = f / raw_norm;
            *acc += g * g;
            *tau = eta * raw_norm / (delta + acc.sqrt());
            *x -= *tau * g;
        }
    }
    check_finite_params(params, state.steps)
}

/// Bias-corrected Adam with `ε` added to `√v̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: BlockedVector,
    v: BlockedVector,
    tau: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(alpha: f64, beta1: f64, beta2: f64, eps: f64, layout: BlockLayout) -> Result<Self> {
        let d = layout.dim();
        Ok(Self {
            alpha: positive("alpha", alpha)?,
            beta1: unit_interval("beta1", beta1)?,
            beta2: unit_interval("beta2", beta2)?,
            eps: positive("eps", eps)?,
            m: BlockedVector::zeros(layout.clone()),
            v: BlockedVector::zeros(layout),
            tau: vec![0.0; d],
            t: 0,
        })
    }

    pub fn with_defaults(layout: BlockLayout) -> Result<Self> {
        Self::new(
            DEFAULT_ADAM_ALPHA,
            DEFAULT_ADAM_BETA1,
            DEFAULT_ADAM_BETA2,
            DEFAULT_ADAM_EPS,
            layout,
        )
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn second_moment(&self) -> &BlockedVector {
        &self.v
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut BlockedVector, dir: &Direction) -> Result<()> {
    check_layouts(params, dir, state.m.layout())?;
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let (alpha, eps) = (state.alpha, state.eps);
    for ((((x, m), v), tau), &g) in params
        .as_mut_slice()
        .iter_mut()
        .zip(state.m.as_mut_slice())
        .zip(state.v.as_mut_slice())
        .zip(&mut state.tau)
        .zip(dir.as_slice())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *tau = alpha / (v_hat.sqrt() + eps);
        *x -= *tau * m_hat;
    }
    check_finite_params(params, state.t)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepRule {
    Sgdm(SgdmState),
    Adagrad(AdagradState),
    Adam(AdamState),
    /// Block-normalized AdaGrad; consumes the raw gradient and its block norms.
    AdagradBng(AdagradState),
}

impl StepRule {
    pub fn layout(&self) -> &BlockLayout {
        match self {
            StepRule::Sgdm(s) => s.velocity.layout(),
            StepRule::Adagrad(s) | StepRule::AdagradBng(s) => s.accum_sq.layout(),
            StepRule::Adam(s) => s.m.layout(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StepRule::Sgdm(_) => "sgdm",
            StepRule::Adagrad(_) => "adagrad",
            StepRule::Adam(_) => "adam",
            StepRule::AdagradBng(_) => "adagrad-bng",
        }
    }

    /// Applies one step. `raw` and `report` are only read by block-normalized AdaGrad.
    pub fn apply(
        &mut self,
        params: &mut BlockedVector,
        dir: &Direction,
        raw: &BlockedVector,
        report: &BlockNormReport,
    ) -> Result<()> {
        match self {
            StepRule::Sgdm(s) => sgdm_step(s, params, dir),
            StepRule::Adagrad(s) => adagrad_step(s, params, dir),
            StepRule::Adam(s) => adam_step(s, params, dir),
            StepRule::AdagradBng(s) => adagrad_bng_step(s, params, raw, report),
        }
    }

    /// Per-coordinate multipliers used by the most recent step.
    pub fn step_sizes(&self) -> StepSizes {
        let layout = self.layout().clone();
        let tau = match self {
            StepRule::Sgdm(s) => vec![s.lr; layout.dim()],
            StepRule::Adagrad(s) | StepRule::AdagradBng(s) => s.tau.clone(),
            StepRule::Adam(s) => s.tau.clone(),
        };
        StepSizes {
            tau: BlockedVector::new(tau, layout).expect("step sizes are finite"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    pub tau: BlockedVector,
}

impl StepSizes {
    pub fn all_nonnegative(&self) -> bool {
        self.tau.as_slice().iter().all(|t| *t >= 0.0 && t.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateOutcome {
    /// Batch loss before the update.
    pub loss: f64,
    pub report: BlockNormReport,
}

/// One iteration on an MLP: backward pass, direction transform, step rule.
pub fn bng_iterate(
    model: &mut MlpModel,
    batch: &Batch,
    rule: &DirectionRule,
    step: &mut StepRule,
) -> Result<IterateOutcome> {
    if step.layout() != model.layout() {
        return Err(Error::Layout("step rule and model have different block layouts".into()));
    }
    let (loss, grad) = model.loss_and_grad(batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "batch loss",
            index: 0,
            value: loss,
        });
    }
    let (dir, report) = rule.apply(&grad, model.params())?;
    step.apply(model.params_mut(), &dir, &grad, &report)?;
    Ok(IterateOutcome { loss, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;
    use crate::transforms::{block_normalize, ClipScope, DEFAULT_ZERO_EPS};
    use proptest::prelude::*;

    fn single(d: usize) -> BlockLayout {
        BlockLayout::single(d).unwrap()
    }

    fn vec_in(layout: &BlockLayout, v: Vec<f64>) -> BlockedVector {
        BlockedVector::new(v, layout.clone()).unwrap()
    }

    #[test]
    fn sgdm_reduces_to_sgd_without_momentum() {
        let l = single(2);
        let mut s = SgdmState::new(0.5, 0.0, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![1.0, 2.0]);
        sgdm_step(&mut s, &mut x, &vec_in(&l, vec![2.0, -2.0])).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 3.0]);
    }

    #[test]
    fn sgdm_heavy_ball_trace() {
        let l = single(1);
        let mut s = SgdmState::new(1.0, 0.9, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![0.0]);
        let one = vec_in(&l, vec![1.0]);
        let mut prev = 0.0;
        for want in [1.0, 1.9, 2.71] {
            sgdm_step(&mut s, &mut x, &one).unwrap();
            let moved = prev - x.as_slice()[0];
            assert!((moved - want).abs() < 1e-12, "{moved} vs {want}");
            prev = x.as_slice()[0];
        }
        let mut s = SgdmState::new(1.0, 0.9, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![3.0]);
        sgdm_step(&mut s, &mut x, &vec_in(&l, vec![0.0])).unwrap();
        assert_eq!(x.as_slice(), &[3.0]);
    }

    #[test]
    fn hyperparameter_validation() {
        let l = single(1);
        assert!(SgdmState::new(0.0, 0.5, l.clone()).is_err());
        assert!(SgdmState::new(0.1, 1.0, l.clone()).is_err());
        assert!(AdagradState::new(0.01, 0.0, l.clone()).is_err());
        assert!(AdamState::new(0.001, 0.9, 1.0, 1e-8, l.clone()).is_err());
        assert!(AdamState::new(0.001, -0.1, 0.9, 1e-8, l).is_err());
    }

    #[test]
    fn adagrad_first_step_moves_eta_times_sign() {
        let l = BlockLayout::from_sizes(&[1, 1, 1]).unwrap();
        let mut s = AdagradState::new(DEFAULT_ADAGRAD_ETA, 1e-12, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![0.0; 3]);
        adagrad_step(&mut s, &mut x, &vec_in(&l, vec![1.0, -1.0, 1.0])).unwrap();
        for (xi, sign) in x.as_slice().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((xi - 0.01 * sign).abs() < 1e-13);
        }
        assert_eq!(DEFAULT_ADAGRAD_ETA, 0.01);
    }

    #[test]
    fn adagrad_idle_coordinate_never_moves() {
        let l = single(2);
        let mut s = AdagradState::new(0.1, 1e-8, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![1.0, 1.0]);
        let mut last_acc = s.accum_sq().clone();
        for t in 0..50 {
            adagrad_step(&mut s, &mut x, &vec_in(&l, vec![(t as f64).sin(), 0.0])).unwrap();
            assert!(s.accum_sq().as_slice().iter().zip(last_acc.as_slice()).all(|(a, b)| a >= b));
            last_acc = s.accum_sq().clone();
        }
        assert_eq!(x.as_slice()[1], 1.0);
    }

    #[test]
    fn adam_first_step_and_limit() {
        let l = single(1);
        let mut s = AdamState::with_defaults(l.clone()).unwrap();
        let mut x = vec_in(&l, vec![0.0]);
        adam_step(&mut s, &mut x, &vec_in(&l, vec![1.0])).unwrap();
        assert!((x.as_slice()[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.t(), 1);

        let mut s = AdamState::with_defaults(l.clone()).unwrap();
        let mut x = vec_in(&l, vec![0.0]);
        let c = vec_in(&l, vec![-3.5]);
        let mut prev = 0.0;
        let mut moved = 0.0;
        for _ in 0..5000 {
            adam_step(&mut s, &mut x, &c).unwrap();
            moved = x.as_slice()[0] - prev;
            prev = x.as_slice()[0];
        }
        assert!((moved - 0.001).abs() < 1e-9, "{moved}");

        let mut s = AdamState::with_defaults(l.clone()).unwrap();
        let mut x = vec_in(&l, vec![2.0]);
        adam_step(&mut s, &mut x, &vec_in(&l, vec![0.0])).unwrap();
        assert_eq!(x.as_slice(), &[2.0]);
    }

    #[test]
    fn adagrad_bng_first_step() {
        let l = single(2);
        let mut s = AdagradState::new(1.0, 1e-300, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![0.0, 0.0]);
        let g = vec_in(&l, vec![3.0, 4.0]);
        let (_, report) = block_normalize(&g, DEFAULT_ZERO_EPS).unwrap();
        adagrad_bng_step(&mut s, &mut x, &g, &report).unwrap();
        assert!((x.as_slice()[0] + 5.0).abs() < 1e-12);
        assert!((x.as_slice()[1] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn adagrad_bng_normalizes_each_block_before_scaling() {
        let l = BlockLayout::from_sizes(&[2, 2]).unwrap();
        let mut s = AdagradState::new(1.0, 1e-8, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![0.0; 4]);
        let g = vec_in(&l, vec![3.0, 4.0, 0.006, 0.008]);
        let (_, report) = block_normalize(&g, DEFAULT_ZERO_EPS).unwrap();
        assert_eq!(report.norms[0], 5.0);
        assert!((report.norms[1] - 0.01).abs() < 1e-15);
        adagrad_bng_step(&mut s, &mut x, &g, &report).unwrap();
        // Accumulated squares are those of unit-norm blocks.
        let acc = s.accum_sq();
        assert!((acc.block(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((acc.block(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adagrad_bng_skips_zero_blocks() {
        let l = BlockLayout::from_sizes(&[1, 1]).unwrap();
        let mut s = AdagradState::new(1.0, 1e-8, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![1.0, 1.0]);
        let g = vec_in(&l, vec![0.0, 2.0]);
        let (_, report) = block_normalize(&g, DEFAULT_ZERO_EPS).unwrap();
        adagrad_bng_step(&mut s, &mut x, &g, &report).unwrap();
        assert_eq!(x.as_slice()[0], 1.0);
        assert_eq!(s.accum_sq().as_slice()[0], 0.0);
        assert!(x.as_slice()[1] < 1.0);
    }

    #[test]
    fn divergence_is_reported() {
        let l = single(1);
        let mut s = SgdmState::new(1e308, 0.0, l.clone()).unwrap();
        let mut x = vec_in(&l, vec![0.0]);
        let err = sgdm_step(&mut s, &mut x, &vec_in(&l, vec![1e10])).unwrap_err();
        assert_eq!(err, Error::Diverged { step: 1, index: 0 });
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut s = AdamState::with_defaults(single(2)).unwrap();
        let l = BlockLayout::from_sizes(&[1, 1]).unwrap();
        let mut x = vec_in(&l, vec![0.0; 2]);
        assert!(matches!(adam_step(&mut s, &mut x, &vec_in(&l, vec![1.0, 1.0])), Err(Error::Layout(_))));
    }

    fn one_example_batch() -> Batch {
        Batch::new(DenseMatrix::new(1, 1, vec![1.0]).unwrap(), vec![0]).unwrap()
    }

    #[test]
    fn iterate_with_raw_sgd_matches_manual_step() {
        let mut model = MlpModel::new(&[1, 3, 2], 4).unwrap();
        let batch = one_example_batch();
        let (loss0, grad) = model.loss_and_grad(&batch).unwrap();
        let expected: Vec<f64> = model
            .params()
            .as_slice()
            .iter()
            .zip(grad.as_slice())
            .map(|(x, g)| x - 0.3 * g)
            .collect();
        let mut step = StepRule::Sgdm(SgdmState::new(0.3, 0.0, model.layout().clone()).unwrap());
        let out = bng_iterate(&mut model, &batch, &DirectionRule::raw(), &mut step).unwrap();
        assert_eq!(out.loss, loss0);
        assert_eq!(model.params().as_slice(), expected.as_slice());
        assert!(step.step_sizes().all_nonnegative());
    }

    #[test]
    fn iterate_with_normalized_adam_is_adam_on_normalized_gradient() {
        let mut a = MlpModel::new(&[2, 3, 2], 1).unwrap();
        let b_params = a.params().clone();
        let batch = Batch::new(DenseMatrix::new(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap(), vec![0, 1]).unwrap();
        let mut step = StepRule::Adam(AdamState::with_defaults(a.layout().clone()).unwrap());
        bng_iterate(&mut a, &batch, &DirectionRule::normalize(), &mut step).unwrap();

        let b = MlpModel::with_params(&[2, 3, 2], b_params.clone()).unwrap();
        let (_, grad) = b.loss_and_grad(&batch).unwrap();
        let (dir, _) = block_normalize(&grad, DEFAULT_ZERO_EPS).unwrap();
        let mut manual = AdamState::with_defaults(b.layout().clone()).unwrap();
        let mut x = b_params;
        adam_step(&mut manual, &mut x, &dir).unwrap();
        assert_eq!(a.params(), &x);
    }

    /// f(x) = ½ Σ a_j x_j², gradient a ∘ x, with two blocks.
    fn quad_grad(a: &[f64], x: &BlockedVector) -> BlockedVector {
        let g = x.as_slice().iter().zip(a).map(|(x, a)| a * x).collect();
        BlockedVector::new(g, x.layout().clone()).unwrap()
    }

    fn quad_loss(a: &[f64], x: &BlockedVector) -> f64 {
        0.5 * x.as_slice().iter().zip(a).map(|(x, a)| a * x * x).sum::<f64>()
    }

    #[test]
    fn every_rule_descends_on_a_separable_quadratic() {
        let a = [1.0, 2.0, 0.5, 3.0, 1.5];
        let layout = BlockLayout::from_sizes(&[2, 3]).unwrap();
        let rules = [
            DirectionRule::raw(),
            DirectionRule::normalize(),
            DirectionRule::clip(0.1, ClipScope::PerBlock).unwrap(),
            DirectionRule::adap_ratio(0.02).unwrap(),
        ];
        let make_steps = || {
            vec![
                StepRule::Sgdm(SgdmState::new(1e-3, 0.9, layout.clone()).unwrap()),
                StepRule::Adagrad(AdagradState::new(1e-3, 1e-8, layout.clone()).unwrap()),
                StepRule::Adam(AdamState::new(1e-4, 0.9, 0.999, 1e-8, layout.clone()).unwrap()),
                StepRule::AdagradBng(AdagradState::new(1e-3, 1e-8, layout.clone()).unwrap()),
            ]
        };
        for rule in &rules {
            for mut step in make_steps() {
                let mut x = vec_in(&layout, vec![3.0, -2.0, 4.0, 1.0, -5.0]);
                let mut f = quad_loss(&a, &x);
                for t in 0..100 {
                    let g = quad_grad(&a, &x);
                    let (dir, report) = rule.apply(&g, &x).unwrap();
                    step.apply(&mut x, &dir, &g, &report).unwrap();
                    assert!(step.step_sizes().all_nonnegative());
                    let next = quad_loss(&a, &x);
                    assert!(next < f, "{:?} + {} stalled at step {t}", rule.variant, step.name());
                    f = next;
                }
            }
        }
    }

    proptest! {
        #[test]
        fn adagrad_bng_matches_raw_gradient_identity(
            blocks in proptest::collection::vec(proptest::collection::vec(-5f64..5.0, 1..5), 1..4),
            steps in 1usize..6,
            eta in 0.01f64..2.0,
        ) {
            let g0 = BlockedVector::from_blocks(&blocks).unwrap();
            let layout = g0.layout().clone();
            let mut s = AdagradState::new(eta, 1e-8, layout.clone()).unwrap();
            let mut x = BlockedVector::zeros(layout.clone());
            let mut acc = vec![0.0; g0.len()];
            for k in 0..steps {
                let g = g0.scaled(1.0 + k as f64);
                let (dir, report) = block_normalize(&g, DEFAULT_ZERO_EPS).unwrap();
                let before = x.clone();
                adagrad_bng_step(&mut s, &mut x, &g, &report).unwrap();
                for i in 0..layout.num_blocks() {
                    if report.is_zero(i) { continue; }
                    for j in layout.range(i) {
                        acc[j] += dir.as_slice()[j] * dir.as_slice()[j];
                        let want = eta * g.as_slice()[j] / (1e-8 + acc[j].sqrt());
                        let got = before.as_slice()[j] - x.as_slice()[j];
                        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
                    }
                }
            }
        }
    }
}
