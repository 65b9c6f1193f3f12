//! Reference GEMM, a tiled stand-in kernel and the accuracy check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExecError;
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ExecError> {
        if data.len() != rows * cols {
            return Err(ExecError::ShapeMismatch);
        }
        Ok(Self { rows, cols, data })
    }

    /// Entries drawn uniformly from [-1, 1).
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(rows, cols, |_, _| T::from_f64_lossy(rng.gen_range(-1.0..1.0)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }
}

fn check_shapes<T>(a: &Matrix<T>, b: &Matrix<T>, c: &Matrix<T>) -> Result<(), ExecError> {
    if a.cols != b.rows || a.rows != c.rows || b.cols != c.cols {
        return Err(ExecError::ShapeMismatch);
    }
    Ok(())
}

/// `C <- alpha * A * B + beta * C` with the plain triple loop.
pub fn gemm_naive<T: Scalar>(
    alpha: T,
    a: &Matrix<T>,
    b: &Matrix<T>,
    beta: T,
    c: &mut Matrix<T>,
) -> Result<(), ExecError> {
    check_shapes(a, b, c)?;
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut sum = T::zero();
            for k in 0..a.cols {
                sum += a.get(i, k) * b.get(k, j);
            }
            let v = alpha * sum + beta * c.get(i, j);
            c.set(i, j, v);
        }
    }
    Ok(())
}

/// Block sizes of the tiled kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl TileShape {
    pub fn new(m: usize, n: usize, k: usize) -> Self {
        Self { m: m.max(1), n: n.max(1), k: k.max(1) }
    }
}

/// Blocked GEMM mirroring a shared-memory tiled GPU kernel.
///
/// With `boundary_bug` set, partial tiles along K are skipped, the classic
/// missing-bounds-check defect: results are only right when K is a multiple
/// of the K tile.
pub fn gemm_tiled<T: Scalar>(
    tiles: TileShape,
    alpha: T,
    a: &Matrix<T>,
    b: &Matrix<T>,
    beta: T,
    c: &mut Matrix<T>,
    boundary_bug: bool,
) -> Result<(), ExecError> {
    check_shapes(a, b, c)?;
    let (m, n, kdim) = (a.rows, b.cols, a.cols);
    let mut acc = vec![T::zero(); m * n];
    let k_end = if boundary_bug { kdim - kdim % tiles.k } else { kdim };
    for i0 in (0..m).step_by(tiles.m) {
        for j0 in (0..n).step_by(tiles.n) {
            for k0 in (0..k_end).step_by(tiles.k) {
                for i in i0..(i0 + tiles.m).min(m) {
                    for j in j0..(j0 + tiles.n).min(n) {
                        let mut partial = T::zero();
                        for k in k0..(k0 + tiles.k).min(k_end) {
                            partial += a.get(i, k) * b.get(k, j);
                        }
                        acc[i * n + j] += partial;
                    }
                }
            }
        }
    }
    for i in 0..m {
        for j in 0..n {
            let v = alpha * acc[i * n + j] + beta * c.get(i, j);
            c.set(i, j, v);
        }
    }
    Ok(())
}

/// Frobenius norm of `result - reference`.
pub fn verify_error_norm<T: Scalar>(result: &Matrix<T>, reference: &Matrix<T>) -> Result<T, ExecError> {
    if result.rows != reference.rows || result.cols != reference.cols {
        return Err(ExecError::ShapeMismatch);
    }
    let sq = result
        .data
        .iter()
        .zip(&reference.data)
        .fold(T::zero(), |acc, (&r, &e)| {
            let d = r - e;
            acc + d * d
        });
    Ok(sq.sqrt())
}

/// Error norm scaled by the reference norm (plain norm when the reference is zero).
pub fn relative_error<T: Scalar>(result: &Matrix<T>, reference: &Matrix<T>) -> Result<T, ExecError> {
    let err = verify_error_norm(result, reference)?;
    let scale = reference.frobenius_norm();
    Ok(if scale > T::zero() { err / scale } else { err })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccuracyVerdict {
    Valid,
    Failed,
}

pub fn accuracy_verdict<T: Scalar>(relative_error: T, tolerance: T) -> AccuracyVerdict {
    if relative_error <= tolerance {
        AccuracyVerdict::Valid
    } else {
        AccuracyVerdict::Failed
    }
}

/// Checks a tiled kernel against the naive reference on an `m x n x k` problem.
/// Returns the relative error.
pub fn check_kernel<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    tiles: TileShape,
    boundary_bug: bool,
    seed: u64,
) -> Result<T, ExecError> {
    let a = Matrix::<T>::random(m, k, seed);
    let b = Matrix::<T>::random(k, n, seed.wrapping_add(1));
    let c0 = Matrix::<T>::random(m, n, seed.wrapping_add(2));
    let alpha = T::from_f64_lossy(1.5);
    let beta = T::from_f64_lossy(0.5);
    let mut reference = c0.clone();
    gemm_naive(alpha, &a, &b, beta, &mut reference)?;
    let mut out = c0;
    gemm_tiled(tiles, alpha, &a, &b, beta, &mut out, boundary_bug)?;
    relative_error(&out, &reference)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn identical_matrices_have_zero_norm() {
        let m = Matrix::<f64>::random(4, 3, 9);
        assert_eq!(verify_error_norm(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn one_hot_difference() {
        let a = Matrix::<f64>::zeros(3, 3);
        let mut b = a.clone();
        b.set(1, 2, -0.25);
        assert_eq!(verify_error_norm(&a, &b).unwrap(), 0.25);
    }

    #[test]
    fn shape_mismatch() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(3, 2);
        assert_eq!(verify_error_norm(&a, &b), Err(ExecError::ShapeMismatch));
    }

    #[test]
    fn naive_matches_hand_computed_product() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let mut c = Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        gemm_naive(1.0_f64, &a, &b, 2.0, &mut c).unwrap();
        assert_eq!(c.as_slice(), &[21.0, 24.0, 45.0, 52.0]);
    }

    #[test]
    fn boundary_bug_fails_on_small_problem() {
        let rel: f64 = check_kernel(7, 5, 3, TileShape::new(4, 4, 2), true, 11).unwrap();
        assert!(rel > 1e-12);
        assert_eq!(accuracy_verdict(rel, 1e-12), AccuracyVerdict::Failed);
    }

    #[test]
    fn correct_tiling_is_within_tolerance() {
        for tiles in [TileShape::new(64, 64, 16), TileShape::new(2, 3, 2), TileShape::new(1, 1, 1)] {
            let rel: f64 = check_kernel(7, 5, 3, tiles, false, 11).unwrap();
            assert_eq!(accuracy_verdict(rel, 1e-12), AccuracyVerdict::Valid, "{tiles:?} {rel}");
        }
    }

    #[test]
    fn works_in_single_precision() {
        let rel: f32 = check_kernel(7, 5, 3, TileShape::new(2, 2, 2), false, 3).unwrap();
        assert!(rel < 1e-5);
    }

    fn small_matrix() -> impl Strategy<Value = Matrix<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 6).prop_map(|v| Matrix::from_vec(2, 3, v).unwrap())
    }

    proptest! {
        #[test]
        fn norm_is_symmetric(a in small_matrix(), b in small_matrix()) {
            prop_assert_eq!(verify_error_norm(&a, &b).unwrap(), verify_error_norm(&b, &a).unwrap());
        }

        #[test]
        fn norm_triangle_inequality(a in small_matrix(), b in small_matrix(), c in small_matrix()) {
            let ab = verify_error_norm(&a, &b).unwrap();
            let bc = verify_error_norm(&b, &c).unwrap();
            let ac = verify_error_norm(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12 * (ab + bc).max(1.0));
        }
    }
}
