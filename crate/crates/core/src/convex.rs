//! Convex problems with a known minimizer and certified per-block gradient bounds.
//!
//! `F(x, ξ)` is the loss of one example (or the mean over a mini-batch) and
//! `f(x)` its mean over the whole dataset. Both problem kinds solve for the
//! minimizer `x*` exactly: Newton's method for logistic regression and the
//! normal equations for least squares.

use std::ops::Range;

use crate::blocked::{BlockLayout, BlockedVector};
use crate::data::synth_classification;
use crate::error::{Error, Result};
use crate::numerics::{cholesky_solve, dot, norm, DenseMatrix};
use crate::rng::SplitMix64;

pub const DEFAULT_LOGISTIC_L2: f64 = 1e-3;
/// Target gradient norm at the reference optimum.
pub const OPTIMUM_GRAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `log(1 + exp(−y·aᵀx)) + (l2/2)‖x‖²` with `y ∈ {−1, +1}`.
    Logistic { l2: f64 },
    /// `½(aᵀx − b)²`.
    LeastSquares,
}

/// Anything that can bound `‖F_B'(x, ξ)‖₂` for a coordinate range `B`, for
/// every `ξ` and every `x` with `‖x − x*‖_∞ ≤ d_inf`.
pub trait BlockGradBound {
    fn dim(&self) -> usize;
    fn block_bound(&self, range: Range<usize>, d_inf: f64) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct ConvexProblem {
    features: DenseMatrix,
    targets: Vec<f64>,
    kind: LossKind,
    layout: BlockLayout,
    x_star: BlockedVector,
}

fn softplus(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

impl ConvexProblem {
    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn num_examples(&self) -> usize {
        self.targets.len()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn x_star(&self) -> &BlockedVector {
        &self.x_star
    }

    fn example_loss(&self, x: &[f64], i: usize) -> f64 {
        let a = self.features.row(i);
        let z = dot(a, x);
        match self.kind {
            LossKind::Logistic { .. } => softplus(-self.targets[i] * z),
            LossKind::LeastSquares => 0.5 * (z - self.targets[i]).powi(2),
        }
    }

    /// `∂ℓ/∂z` for the linear score `z = aᵀx`.
    fn score_derivative(&self, x: &[f64], i: usize) -> f64 {
        let z = dot(self.features.row(i), x);
        match self.kind {
            LossKind::Logistic { .. } => {
                let y = self.targets[i];
                -y / (1.0 + (y * z).exp())
            }
            LossKind::LeastSquares => z - self.targets[i],
        }
    }

    fn l2(&self) -> f64 {
        match self.kind {
            LossKind::Logistic { l2 } => l2,
            LossKind::LeastSquares => 0.0,
        }
    }

    /// Mean loss over the listed examples, `F(x, ξ)` for the batch `ξ = idx`.
    pub fn loss(&self, x: &[f64], idx: &[usize]) -> f64 {
        let data: f64 = idx.iter().map(|&i| self.example_loss(x, i)).sum::<f64>() / idx.len() as f64;
        data + 0.5 * self.l2() * dot(x, x)
    }

    pub fn grad(&self, x: &[f64], idx: &[usize]) -> BlockedVector {
        let d = self.dim();
        let mut g = vec![0.0; d];
        for &i in idx {
            let s = self.score_derivative(x, i);
            for (gj, aj) in g.iter_mut().zip(self.features.row(i)) {
                *gj += s * aj;
            }
        }
        let inv = 1.0 / idx.len() as f64;
        let l2 = self.l2();
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj = *gj * inv + l2 * xj;
        }
        BlockedVector::new(g, self.layout.clone()).expect("finite gradient of a finite point")
    }

    fn all(&self) -> Vec<usize> {
        (0..self.num_examples()).collect()
    }

    pub fn full_loss(&self, x: &[f64]) -> f64 {
        self.loss(x, &self.all())
    }

    pub fn full_grad(&self, x: &[f64]) -> BlockedVector {
        self.grad(x, &self.all())
    }

    /// Fraction of examples classified correctly (logistic only).
    pub fn accuracy(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            LossKind::Logistic { .. } => {
                let n = self.num_examples();
                let hits = (0..n)
                    .filter(|&i| dot(self.features.row(i), x) * self.targets[i] > 0.0)
                    .count();
                Some(hits as f64 / n as f64)
            }
            LossKind::LeastSquares => None,
        }
    }

    /// `batch` example indices drawn uniformly with replacement.
    pub fn sample(&self, rng: &mut SplitMix64, batch: usize) -> Vec<usize> {
        (0..batch)
            .map(|_| rng.below(self.num_examples() as u64) as usize)
            .collect()
    }

    /// Certified `M_i` for each block of the problem's own layout.
    pub fn grad_bounds(&self, d_inf: f64) -> Vec<f64> {
        self.layout
            .ranges()
            .map(|r| self.block_bound(r, d_inf).expect("layout ranges are in bounds"))
            .collect()
    }

    /// Upper bound on `‖x‖₂` over the box `‖x − x*‖_∞ ≤ d_inf`, restricted to `range`.
    fn radius(&self, range: Range<usize>, d_inf: f64) -> f64 {
        let len = range.len() as f64;
        norm(&self.x_star.as_slice()[range]) + len.sqrt() * d_inf
    }
}

impl BlockGradBound for ConvexProblem {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn block_bound(&self, range: Range<usize>, d_inf: f64) -> Result<f64> {
        if range.end > self.dim() || range.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "block {range:?} outside 0..{}",
                self.dim()
            )));
        }
        if !(d_inf >= 0.0) {
            return Err(Error::InvalidArgument(format!("d_inf must be nonnegative, got {d_inf}")));
        }
        let n = self.num_examples();
        Ok(match self.kind {
            // |∂ℓ/∂z| ≤ 1, so the data term contributes at most ‖a^i‖₂.
            LossKind::Logistic { l2 } => {
                let feat = (0..n)
                    .map(|k| norm(&self.features.row(k)[range.clone()]))
                    .fold(0.0, f64::max);
                feat + l2 * self.radius(range, d_inf)
            }
            // |aᵀx − b| ≤ ‖a‖₂‖x‖₂ + |b|.
            LossKind::LeastSquares => {
                let r = self.radius(0..self.dim(), d_inf);
                (0..n)
                    .map(|k| {
                        let a = self.features.row(k);
                        (norm(a) * r + self.targets[k].abs()) * norm(&a[range.clone()])
                    })
                    .fold(0.0, f64::max)
            }
        })
    }
}

/// Binary logistic regression on a synthetic two-class sample with `‖a‖₂ ≤ 1`.
///
/// A sample that contains only one class is regenerated with the next seed.
pub fn logistic_problem(n: usize, dim: usize, seed: u64, layout: BlockLayout) -> Result<ConvexProblem> {
    logistic_problem_with_l2(n, dim, seed, layout, DEFAULT_LOGISTIC_L2)
}

pub fn logistic_problem_with_l2(
    n: usize,
    dim: usize,
    seed: u64,
    layout: BlockLayout,
    l2: f64,
) -> Result<ConvexProblem> {
    if layout.dim() != dim {
        return Err(Error::Layout(format!(
            "block offsets cover {} coordinates, problem has {dim}",
            layout.dim()
        )));
    }
    if !(l2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "logistic problems need a positive l2 weight for a finite optimum, got {l2}"
        )));
    }
    let mut s = seed;
    let ds = loop {
        let ds = synth_classification(n, dim, 2, s)?;
        let first = ds.labels()[0];
        if ds.labels().iter().any(|&y| y != first) {
            break ds;
        }
        s = s.wrapping_add(1);
    };
    let targets = ds
        .labels()
        .iter()
        .map(|&y| if y == 1 { 1.0 } else { -1.0 })
        .collect();
    let mut problem = ConvexProblem {
        features: ds.inputs().clone(),
        targets,
        kind: LossKind::Logistic { l2 },
        x_star: BlockedVector::zeros(layout.clone()),
        layout,
    };
    let x = newton_solve(&problem)?;
    problem.x_star = BlockedVector::new(x, problem.layout.clone())?;
    Ok(problem)
}

fn newton_solve(p: &ConvexProblem) -> Result<Vec<f64>> {
    let d = p.dim();
    let n = p.num_examples();
    let LossKind::Logistic { l2 } = p.kind else {
        unreachable!("newton_solve is only used for logistic problems")
    };
    let mut x = vec![0.0; d];
    let mut best = f64::INFINITY;
    for _ in 0..100 {
        let g = p.full_grad(&x);
        let gnorm = norm(g.as_slice());
        best = best.min(gnorm);
        if gnorm <= OPTIMUM_GRAD_TOL * 1e-2 {
            return Ok(x);
        }
        let mut h = vec![0.0; d * d];
        for i in 0..n {
            let a = p.features.row(i);
            let sigma = 1.0 / (1.0 + (-dot(a, &x)).exp());
            let w = sigma * (1.0 - sigma) / n as f64;
            for r in 0..d {
                for c in 0..d {
                    h[r * d + c] += w * a[r] * a[c];
                }
            }
        }
        for r in 0..d {
            h[r * d + r] += l2;
        }
        let step = cholesky_solve(&DenseMatrix::new(d, d, h)?, g.as_slice(), 1e-300)?;
        let f0 = p.full_loss(&x);
        let mut t = 1.0;
        let mut next: Vec<f64>;
        loop {
            next = x.iter().zip(&step).map(|(xi, si)| xi - t * si).collect();
            if p.full_loss(&next) <= f0 || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        if next == x {
            break;
        }
        x = next;
    }
    let gnorm = norm(p.full_grad(&x).as_slice());
    if gnorm <= OPTIMUM_GRAD_TOL {
        Ok(x)
    } else {
        Err(Error::NoConvergence(format!(
            "Newton stopped at gradient norm {gnorm:e} (best {best:e})"
        )))
    }
}

/// `f(x) = ½·mean (aᵢᵀx − bᵢ)²`, minimized through the normal equations.
pub fn least_squares_problem(a: &DenseMatrix, b: &[f64], layout: BlockLayout) -> Result<ConvexProblem> {
    let (n, d) = (a.rows(), a.cols());
    if b.len() != n {
        return Err(Error::Shape {
            op: "least_squares_problem",
            detail: format!("{n} rows but {} targets", b.len()),
        });
    }
    if layout.dim() != d {
        return Err(Error::Layout(format!(
            "block offsets cover {} coordinates, problem has {d}",
            layout.dim()
        )));
    }
    let at = a.transpose();
    let gram = at.matmul(a)?;
    let rhs: Vec<f64> = (0..d).map(|j| dot(at.row(j), b)).collect();
    let x = cholesky_solve(&gram, &rhs, 1e-12).map_err(|e| match e {
        Error::NotPositiveDefinite { column, .. } => Error::InvalidArgument(format!(
            "design matrix is rank deficient (column {column} is dependent on earlier ones)"
        )),
        other => other,
    })?;
    Ok(ConvexProblem {
        features: a.clone(),
        targets: b.to_vec(),
        kind: LossKind::LeastSquares,
        x_star: BlockedVector::new(x, layout.clone())?,
        layout,
    })
}

/// Least squares on `n` Gaussian rows rescaled into the unit ball, with targets
/// `b = aᵀw + 0.1·noise` for a Gaussian `w`.
pub fn synth_least_squares(n: usize, dim: usize, seed: u64, layout: BlockLayout) -> Result<ConvexProblem> {
    if n < dim || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least as many rows as columns, got n={n}, dim={dim}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let w: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let mut data = Vec::with_capacity(n * dim);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let r = norm(&row);
        if r > 1.0 {
            row.iter_mut().for_each(|v| *v /= r);
        }
        b.push(dot(&row, &w) + 0.1 * rng.normal());
        data.extend(row);
    }
    least_squares_problem(&DenseMatrix::new(n, dim, data)?, &b, layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blocks(d: usize) -> BlockLayout {
        BlockLayout::new(vec![0, d / 2, d]).unwrap()
    }

    #[test]
    fn logistic_optimum_is_stationary() {
        let p = logistic_problem(100, 5, 3, two_blocks(5)).unwrap();
        assert!(norm(p.full_grad(p.x_star().as_slice()).as_slice()) <= 1e-10);
        assert!((p.full_loss(&[0.0; 5]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logistic_example_gradients_are_bounded_by_feature_norms() {
        let p = logistic_problem(50, 4, 1, two_blocks(4)).unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let i = rng.below(50) as usize;
            let g = p.grad(&x, &[i]);
            let reg = DEFAULT_LOGISTIC_L2 * norm(&x);
            assert!(norm(g.as_slice()) <= norm(p.features().row(i)) + reg + 1e-15);
            assert!(norm(p.features().row(i)) <= 1.0);
        }
    }

    #[test]
    fn certified_bounds_hold_inside_the_box() {
        let p = logistic_problem(200, 10, 7, two_blocks(10)).unwrap();
        let d_inf = 2.0;
        let m = p.grad_bounds(d_inf);
        let mut rng = SplitMix64::new(1);
        for _ in 0..100 {
            let x: Vec<f64> = p
                .x_star()
                .as_slice()
                .iter()
                .map(|c| c + rng.uniform(-d_inf, d_inf))
                .collect();
            for _ in 0..1000 {
                let g = p.grad(&x, &[rng.below(200) as usize]);
                for (i, mi) in m.iter().enumerate() {
                    assert!(norm(g.block(i)) <= *mi);
                }
            }
        }
    }

    #[test]
    fn convexity_spot_check() {
        let p = logistic_problem(60, 6, 2, two_blocks(6)).unwrap();
        let mut rng = SplitMix64::new(9);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let lam = rng.next_f64();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            assert!(p.full_loss(&mid) <= lam * p.full_loss(&x) + (1.0 - lam) * p.full_loss(&y) + 1e-12);
        }
    }

    #[test]
    fn layout_must_match_dimension() {
        assert!(logistic_problem(10, 4, 0, BlockLayout::single(3).unwrap()).is_err());
        assert!(logistic_problem_with_l2(10, 4, 0, BlockLayout::single(4).unwrap(), 0.0).is_err());
    }

    #[test]
    fn least_squares_identity() {
        let p = least_squares_problem(
            &DenseMatrix::identity(2),
            &[1.0, 2.0],
            BlockLayout::from_sizes(&[1, 1]).unwrap(),
        )
        .unwrap();
        assert!((p.x_star().as_slice()[0] - 1.0).abs() < 1e-15);
        assert!((p.x_star().as_slice()[1] - 2.0).abs() < 1e-15);
    }

    fn random_design(n: usize, d: usize, seed: u64) -> (DenseMatrix, Vec<f64>) {
        let mut rng = SplitMix64::new(seed);
        let a = DenseMatrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
        let b = (0..n).map(|_| rng.normal()).collect();
        (a, b)
    }

    #[test]
    fn least_squares_residual_is_orthogonal_to_columns() {
        let (a, b) = random_design(20, 3, 4);
        let p = least_squares_problem(&a, &b, BlockLayout::single(3).unwrap()).unwrap();
        let x = p.x_star().as_slice();
        let r: Vec<f64> = (0..20).map(|i| dot(a.row(i), x) - b[i]).collect();
        let at = a.transpose();
        for j in 0..3 {
            assert!(dot(at.row(j), &r).abs() < 1e-10);
        }
        assert!(norm(p.full_grad(x).as_slice()) < 1e-10);
    }

    #[test]
    fn least_squares_optimum_beats_random_perturbations() {
        let (a, b) = random_design(20, 3, 8);
        let p = least_squares_problem(&a, &b, BlockLayout::single(3).unwrap()).unwrap();
        let x = p.x_star().as_slice().to_vec();
        let f_star = p.full_loss(&x);
        let mut rng = SplitMix64::new(2);
        for _ in 0..100 {
            let y: Vec<f64> = x.iter().map(|v| v + rng.uniform(-1e-3, 1e-3)).collect();
            assert!(f_star <= p.full_loss(&y));
        }
    }

    #[test]
    fn least_squares_rejects_rank_deficiency() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let err = least_squares_problem(&a, &[1.0, 2.0, 3.0], BlockLayout::single(2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }

    #[test]
    fn synthetic_least_squares_is_well_posed() {
        let p = synth_least_squares(200, 10, 4, two_blocks(10)).unwrap();
        assert!(norm(p.full_grad(p.x_star().as_slice()).as_slice()) < 1e-10);
        assert!(synth_least_squares(3, 10, 4, two_blocks(10)).is_err());
    }

    #[test]
    fn least_squares_bounds_hold() {
        let (a, b) = random_design(30, 4, 3);
        let p = least_squares_problem(&a, &b, BlockLayout::from_sizes(&[1, 3]).unwrap()).unwrap();
        let m = p.grad_bounds(1.0);
        let mut rng = SplitMix64::new(3);
        for _ in 0..500 {
            let x: Vec<f64> = p.x_star().as_slice().iter().map(|c| c + rng.uniform(-1.0, 1.0)).collect();
            let g = p.grad(&x, &[rng.below(30) as usize]);
            assert!(norm(g.block(0)) <= m[0] && norm(g.block(1)) <= m[1]);
        }
    }
}
