//! Dense `f64` vectors and matrices.
//!
//! Storage is row-major and every reduction runs left to right, so results are
//! bitwise reproducible for identical inputs.

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        ensure_finite("vector", &data)?;
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn l2_norm(&self) -> f64 {
        norm(&self.data)
    }
}

impl AsRef<[f64]> for DenseVector {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "DenseMatrix::new",
                detail: format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            });
        }
        ensure_finite("matrix", &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "DenseMatrix::from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        transpose_into(&self.data, self.rows, self.cols, &mut out.data);
        out
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        matmul(self, rhs)
    }
}

/// Euclidean norm. Rejects non-finite input.
pub fn l2_norm(v: &[f64]) -> Result<f64> {
    ensure_finite("l2_norm input", v)?;
    Ok(norm(v))
}

/// Unchecked Euclidean norm for hot paths whose inputs are already validated.
#[inline]
pub fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

#[inline]
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x)
}

#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b)
}

pub fn hadamard(u: &DenseVector, v: &DenseVector) -> Result<DenseVector> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "hadamard",
            detail: format!("lengths {} and {}", u.len(), v.len()),
        });
    }
    Ok(DenseVector {
        data: u.data.iter().zip(&v.data).map(|(a, b)| a * b).collect(),
    })
}

/// `Σ w_j v_j²`, the squared Mahalanobis norm for a diagonal weight matrix.
pub fn diag_weighted_norm_sq(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::Shape {
            op: "diag_weighted_norm_sq",
            detail: format!("lengths {} and {}", v.len(), w.len()),
        });
    }
    if let Some(j) = w.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "weight {j} must be positive, got {}",
            w[j]
        )));
    }
    Ok(v.iter().zip(w).fold(0.0, |acc, (x, wj)| acc + wj * x * x))
}

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    gemm_acc(&a.data, &b.data, &mut out.data, a.rows, a.cols, b.cols);
    Ok(out)
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
///
/// The loop order is i-k-j: every `c[i][j]` receives its `k` terms in
/// increasing `k`, the same order as the textbook triple loop.
pub fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if k == 0 || n == 0 {
        return;
    }
    // Four rows of `c` share each row of `b`. Adding an exact zero product is a
    // no-op here (no partial sum can become -0.0), so zero skipping leaves
    // every result unchanged.
    let mut a_quads = a.chunks_exact(4 * k);
    let mut c_quads = c.chunks_exact_mut(4 * n);
    for (a4, c4) in (&mut a_quads).zip(&mut c_quads) {
        let (a0, rest) = a4.split_at(k);
        let (a1, rest) = rest.split_at(k);
        let (a2, a3) = rest.split_at(k);
        let (c0, rest) = c4.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for (p, b_row) in b.chunks_exact(n).enumerate() {
            let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
            if x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0 {
                continue;
            }
            for j in 0..n {
                let bj = b_row[j];
                c0[j] += x0 * bj;
                c1[j] += x1 * bj;
                c2[j] += x2 * bj;
                c3[j] += x3 * bj;
            }
        }
    }
    let a_rest = a_quads.remainder();
    let c_rest = c_quads.into_remainder();
    for (a_row, c_row) in a_rest.chunks_exact(k).zip(c_rest.chunks_exact_mut(n)) {
        for (&aik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if aik == 0.0 {
                continue;
            }
            for (cij, &bkj) in c_row.iter_mut().zip(b_row) {
                *cij += aik * bkj;
            }
        }
    }
}

pub fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky factorization.
///
/// A pivot below `pivot_tol · max_diag` is reported as loss of definiteness.
pub fn cholesky_solve(a: &DenseMatrix, b: &[f64], pivot_tol: f64) -> Result<Vec<f64>> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(Error::Shape {
            op: "cholesky_solve",
            detail: format!("{}x{} system with rhs of length {}", a.rows, a.cols, b.len()),
        });
    }
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > pivot_tol * scale) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                column: j,
                pivot: diag,
            });
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> Vec<f64> {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out[i * b.cols() + j] = acc;
            }
        }
        out
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2_norm(&[1.0; 4]).unwrap(), 2.0);
    }

    #[test]
    fn l2_norm_rejects_nan() {
        assert!(matches!(
            l2_norm(&[1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(DenseVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn hadamard_examples() {
        let u = DenseVector::new(vec![1.0, 2.0]).unwrap();
        let v = DenseVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(hadamard(&u, &v).unwrap().as_slice(), &[3.0, 8.0]);
        let ones = DenseVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(hadamard(&u, &ones).unwrap(), u);
        let zeros = DenseVector::zeros(2);
        assert_eq!(hadamard(&u, &zeros).unwrap(), zeros);
        assert!(hadamard(&u, &DenseVector::zeros(3)).is_err());
    }

    #[test]
    fn weighted_norm_examples() {
        assert_eq!(diag_weighted_norm_sq(&[1.0, 2.0], &[1.0, 1.0]).unwrap(), 5.0);
        assert_eq!(diag_weighted_norm_sq(&[1.0, 1.0], &[2.0, 3.0]).unwrap(), 5.0);
        assert_eq!(diag_weighted_norm_sq(&[0.0, 0.0], &[7.0, 0.5]).unwrap(), 0.0);
        assert!(diag_weighted_norm_sq(&[1.0], &[0.0]).is_err());
        assert!(diag_weighted_norm_sq(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn matmul_examples() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(DenseMatrix::identity(2).matmul(&a).unwrap(), a);
        let ones = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(a.matmul(&ones).unwrap().as_slice(), &[3.0, 7.0]);
        let z = DenseMatrix::zeros(2, 3);
        assert_eq!(a.matmul(&z).unwrap(), DenseMatrix::zeros(2, 3));
        assert!(matches!(a.matmul(&DenseMatrix::zeros(3, 1)), Err(Error::Shape { .. })));
    }

    #[test]
    fn matrix_rejects_bad_shapes() {
        assert!(DenseMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(DenseMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn cholesky_solves_spd_and_rejects_singular() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let x = cholesky_solve(&a, &[2.0, 1.0], 1e-14).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-15);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-15);
        let s = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky_solve(&s, &[1.0, 1.0], 1e-12),
            Err(Error::NotPositiveDefinite { column: 1, .. })
        ));
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = CompensatedSum::new();
        let mut naive = 0.0;
        for x in [1.0, 1e100, 1.0, -1e100] {
            c.add(x);
            naive += x;
        }
        assert_eq!(c.value(), 2.0);
        assert_eq!(naive, 0.0);
    }

    proptest! {
        #[test]
        fn norm_is_absolutely_homogeneous(
            v in proptest::collection::vec(-1e3f64..1e3, 1..20),
            c in -1e3f64..1e3,
        ) {
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let lhs = l2_norm(&scaled).unwrap();
            let rhs = c.abs() * l2_norm(&v).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn hadamard_commutes_and_associates(
            u in proptest::collection::vec(-10f64..10.0, 8),
            v in proptest::collection::vec(-10f64..10.0, 8),
            w in proptest::collection::vec(-10f64..10.0, 8),
        ) {
            let (u, v, w) = (
                DenseVector::new(u).unwrap(),
                DenseVector::new(v).unwrap(),
                DenseVector::new(w).unwrap(),
            );
            prop_assert_eq!(hadamard(&u, &v).unwrap(), hadamard(&v, &u).unwrap());
            // (u∘v)∘w and u∘(v∘w) multiply the same three factors in different order.
            let left = hadamard(&hadamard(&u, &v).unwrap(), &w).unwrap();
            let right = hadamard(&u, &hadamard(&v, &w).unwrap()).unwrap();
            for (a, b) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn unit_weights_give_squared_norm(v in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            let ones = vec![1.0; v.len()];
            let lhs = diag_weighted_norm_sq(&v, &ones).unwrap();
            let n = l2_norm(&v).unwrap();
            prop_assert!((lhs - n * n).abs() <= 1e-12 * lhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn matmul_matches_triple_loop_on_odd_shapes(
            m in 1usize..9, k in 1usize..7, n in 1usize..6, seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let mut fill = |len: usize| -> Vec<f64> {
                (0..len).map(|_| if rng.below(4) == 0 { 0.0 } else { rng.uniform(-3.0, 3.0) }).collect()
            };
            let a = DenseMatrix::new(m, k, fill(m * k)).unwrap();
            let b = DenseMatrix::new(k, n, fill(k * n)).unwrap();
            let fast = a.matmul(&b).unwrap();
            let slow = naive_matmul(&a, &b);
            prop_assert_eq!(fast.as_slice(), slow.as_slice());
        }

        #[test]
        fn matmul_matches_triple_loop_exactly(
            a in proptest::collection::vec(-5f64..5.0, 25),
            b in proptest::collection::vec(-5f64..5.0, 25),
        ) {
            let a = DenseMatrix::new(5, 5, a).unwrap();
            let b = DenseMatrix::new(5, 5, b).unwrap();
            let fast = a.matmul(&b).unwrap();
            let slow = naive_matmul(&a, &b);
            prop_assert_eq!(fast.as_slice(), slow.as_slice());
        }
    }
}
