//! Direction transforms: map a raw blocked stochastic gradient to the update
//! direction handed to a step-size rule.
//!
//! Every transform works block by block. A block whose gradient norm is at or
//! below `zero_eps` yields a zero direction and is flagged in the
//! [`BlockNormReport`] instead of raising an error.

use crate::blocked::{BlockedVector, Direction};
use crate::error::{Error, Result};
use crate::numerics::norm;

pub const DEFAULT_ZERO_EPS: f64 = 1e-12;
/// Best clipping threshold of the residual-network search grid `{0.05, 0.1, 0.5, 1, 5}`.
pub const DEFAULT_CLIP_THRESHOLD: f64 = 0.1;
/// Best parameter-norm ratio of the search grid `{0.01, 0.02, 0.05}`.
pub const DEFAULT_ADAP_ALPHA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipScope {
    #[default]
    PerBlock,
    /// One threshold on the norm of the whole gradient.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirectionVariant {
    Raw,
    BlockNormalize,
    Clip { threshold: f64, scope: ClipScope },
    /// Normalized block scaled by `alpha · ‖x^i‖₂`.
    AdapRatio { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionRule {
    pub variant: DirectionVariant,
    pub zero_eps: f64,
}

/// Raw per-block gradient norms seen by a transform.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockNormReport {
    pub norms: Vec<f64>,
    pub zero_blocks: Vec<bool>,
}

impl BlockNormReport {
    pub fn of(grad: &BlockedVector, zero_eps: f64) -> Self {
        let norms = grad.block_norms();
        let zero_blocks = norms.iter().map(|&n| n <= zero_eps).collect();
        Self { norms, zero_blocks }
    }

    pub fn num_blocks(&self) -> usize {
        self.norms.len()
    }

    pub fn is_zero(&self, block: usize) -> bool {
        self.zero_blocks[block]
    }

    /// `(min, mean, max)` of the raw norms.
    pub fn summary(&self) -> (f64, f64, f64) {
        let min = self.norms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = self.norms.iter().sum::<f64>() / self.norms.len() as f64;
        (min, mean, max)
    }
}

impl DirectionRule {
    pub fn new(variant: DirectionVariant) -> Result<Self> {
        let rule = Self {
            variant,
            zero_eps: DEFAULT_ZERO_EPS,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn raw() -> Self {
        Self {
            variant: DirectionVariant::Raw,
            zero_eps: DEFAULT_ZERO_EPS,
        }
    }

    pub fn normalize() -> Self {
        Self {
            variant: DirectionVariant::BlockNormalize,
            zero_eps: DEFAULT_ZERO_EPS,
        }
    }

    pub fn clip(threshold: f64, scope: ClipScope) -> Result<Self> {
        Self::new(DirectionVariant::Clip { threshold, scope })
    }

    pub fn adap_ratio(alpha: f64) -> Result<Self> {
        Self::new(DirectionVariant::AdapRatio { alpha })
    }

    pub fn with_zero_eps(mut self, zero_eps: f64) -> Result<Self> {
        self.zero_eps = zero_eps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zero_eps >= 0.0) || !self.zero_eps.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "zero_eps must be finite and nonnegative, got {}",
                self.zero_eps
            )));
        }
        match self.variant {
            DirectionVariant::Clip { threshold, .. } => check_positive("clip threshold", threshold),
            DirectionVariant::AdapRatio { alpha } => check_positive("adaptive ratio alpha", alpha),
            DirectionVariant::Raw | DirectionVariant::BlockNormalize => Ok(()),
        }
    }

    /// Applies the rule. `params` is only read by the adaptive-ratio variant.
    pub fn apply(
        &self,
        grad: &BlockedVector,
        params: &BlockedVector,
    ) -> Result<(Direction, BlockNormReport)> {
        grad.ensure_finite("gradient")?;
        let report = BlockNormReport::of(grad, self.zero_eps);
        let dir = match self.variant {
            DirectionVariant::Raw => grad.clone(),
            DirectionVariant::BlockNormalize => normalized_with(grad, &report),
            DirectionVariant::Clip {
                threshold,
                scope: ClipScope::PerBlock,
            } => clip_blocks(grad, threshold)?,
            DirectionVariant::Clip {
                threshold,
                scope: ClipScope::Global,
            } => clip_global(grad, threshold)?,
            DirectionVariant::AdapRatio { alpha } => ng_adap(grad, params, alpha, self.zero_eps)?,
        };
        Ok((dir, report))
    }
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be positive, got {v}")))
    }
}

pub fn raw(grad: &BlockedVector) -> Result<Direction> {
    grad.ensure_finite("gradient")?;
    Ok(grad.clone())
}

fn normalized_with(grad: &BlockedVector, report: &BlockNormReport) -> Direction {
    let mut dir = BlockedVector::zeros_like(grad);
    for i in 0..grad.num_blocks() {
        if report.zero_blocks[i] {
            continue;
        }
        let n = report.norms[i];
        for (d, &g) in dir.block_mut(i).iter_mut().zip(grad.block(i)) {
            *d = g / n;
        }
    }
    dir
}

/// Divides every block by its own Euclidean norm.
pub fn block_normalize(grad: &BlockedVector, zero_eps: f64) -> Result<(Direction, BlockNormReport)> {
    grad.ensure_finite("gradient")?;
    let report = BlockNormReport::of(grad, zero_eps);
    Ok((normalized_with(grad, &report), report))
}

/// Rescales each block whose norm exceeds `threshold` down to norm `threshold`.
pub fn clip_blocks(grad: &BlockedVector, threshold: f64) -> Result<Direction> {
    check_positive("clip threshold", threshold)?;
    grad.ensure_finite("gradient")?;
    let mut dir = grad.clone();
    for i in 0..grad.num_blocks() {
        let n = norm(grad.block(i));
        if n > threshold {
            let s = threshold / n;
            for d in dir.block_mut(i) {
                *d *= s;
            }
        }
    }
    Ok(dir)
}

/// Clipping on the norm of the whole gradient.
pub fn clip_global(grad: &BlockedVector, threshold: f64) -> Result<Direction> {
    check_positive("clip threshold", threshold)?;
    grad.ensure_finite("gradient")?;
    let n = norm(grad.as_slice());
    Ok(if n > threshold {
        grad.scaled(threshold / n)
    } else {
        grad.clone()
    })
}

/// Block `i` becomes `g^i / ‖g^i‖₂ · ‖x^i‖₂ · alpha`.
pub fn ng_adap(
    grad: &BlockedVector,
    params: &BlockedVector,
    alpha: f64,
    zero_eps: f64,
) -> Result<Direction> {
    check_positive("adaptive ratio alpha", alpha)?;
    grad.ensure_same_layout(params, "ng_adap")?;
    let (mut dir, _) = block_normalize(grad, zero_eps)?;
    for i in 0..grad.num_blocks() {
        let scale = norm(params.block(i)) * alpha;
        for d in dir.block_mut(i) {
            *d *= scale;
        }
    }
    Ok(dir)
}
