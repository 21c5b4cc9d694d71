//! Dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Above this size the smallest singular value comes from inverse power
/// iteration instead of a full SVD.
pub const SVD_MAX_DIM: usize = 200;

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest and smallest singular values.
pub fn extreme_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() <= SVD_MAX_DIM {
        let sv = m.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        (max, min)
    } else {
        (power_sigma_max(m), inverse_power_sigma_min(m))
    }
}

/// `‖A‖_op`, the spectral norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    extreme_singular_values(m).0
}

/// `‖A⁻¹‖_op = 1 / σ_min(A)`; infinite for singular `A`.
pub fn inverse_op_norm(m: &DMatrix<f64>) -> f64 {
    let (_, min) = extreme_singular_values(m);
    if min > 0.0 {
        1.0 / min
    } else {
        f64::INFINITY
    }
}

const POWER_ITERS: usize = 500;

fn start_vector(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract())
}

fn power_sigma_max(m: &DMatrix<f64>) -> f64 {
    let ata = m.transpose() * m;
    let mut v = start_vector(m.ncols());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let next = &ata * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let done = (norm - lambda).abs() <= 1e-13 * norm;
        lambda = norm;
        v = next / norm;
        if done {
            break;
        }
    }
    lambda.sqrt()
}

fn inverse_power_sigma_min(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    let lut = m.transpose().lu();
    let mut v = start_vector(m.ncols());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        // (AᵀA)⁻¹ v = A⁻¹ A⁻ᵀ v
        let Some(y) = lut.solve(&v) else { return 0.0 };
        let Some(next) = lu.solve(&y) else { return 0.0 };
        let norm = next.norm();
        let done = (norm - lambda).abs() <= 1e-13 * norm;
        lambda = norm;
        v = next / norm;
        if done {
            break;
        }
    }
    if lambda > 0.0 {
        1.0 / lambda.sqrt()
    } else {
        0.0
    }
}

/// Dense LU factorization with partial pivoting and a reciprocal condition
/// estimate `σ_min / σ_max`.
#[derive(Debug, Clone)]
pub struct LuFactor {
    matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rcond: f64,
}

impl LuFactor {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let (max, min) = extreme_singular_values(&matrix);
        let rcond = if max > 0.0 { min / max } else { 0.0 };
        let lu = matrix.clone().lu();
        LuFactor { matrix, lu, rcond }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let rhs = DVector::from_column_slice(b);
        self.lu.solve(&rhs).map(|x| x.iter().copied().collect())
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Option<Vec<f64>> {
        self.matrix
            .transpose()
            .lu()
            .solve(&DVector::from_column_slice(b))
            .map(|x| x.iter().copied().collect())
    }

    /// `A⁻¹`, column by column.
    pub fn inverse(&self) -> Option<DMatrix<f64>> {
        self.lu.try_inverse()
    }
}
