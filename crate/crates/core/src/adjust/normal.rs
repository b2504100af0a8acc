//! Weighted normal equations `AᵀWA x = AᵀWb`, solved by Cholesky
//! factorization with a relative pivot threshold.

use nalgebra::{DMatrix, DVector};

use super::AdjustError;

/// Pivots at or below this fraction of the largest normal-matrix diagonal
/// are treated as rank defects.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factors `n`, returning the 0-based columns whose pivots fall below the
    /// threshold when the matrix is not numerically positive definite.
    pub fn factor(n: &DMatrix<f64>) -> Result<Self, Vec<usize>> {
        let dim = n.nrows();
        assert_eq!(dim, n.ncols(), "normal matrix must be square");
        let max_diag = (0..dim).map(|i| n[(i, i)].abs()).fold(0.0, f64::max);
        let tol = PIVOT_THRESHOLD * max_diag.max(f64::MIN_POSITIVE);
        let mut l = DMatrix::<f64>::zeros(dim, dim);
        let mut defects = Vec::new();
        for j in 0..dim {
            let mut d = n[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d.is_nan() || d <= tol {
                // keep going so every dependent column is reported
                defects.push(j);
                continue;
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..dim {
                let mut s = n[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        if defects.is_empty() {
            Ok(Self { l })
        } else {
            Err(defects)
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let dim = self.l.nrows();
        let mut y = rhs.clone();
        for i in 0..dim {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..dim).rev() {
            let mut s = y[i];
            for k in (i + 1)..dim {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Inverse of the factored matrix, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let dim = self.l.nrows();
        let mut inv = DMatrix::<f64>::zeros(dim, dim);
        let mut e = DVector::<f64>::zeros(dim);
        for j in 0..dim {
            e.fill(0.0);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        (&inv + inv.transpose()) * 0.5
    }

    pub fn factor_l(&self) -> &DMatrix<f64> {
        &self.l
    }
}

/// Solution of one weighted least-squares problem.
#[derive(Debug, Clone)]
pub struct WeightedSolution {
    pub x: DVector<f64>,
    /// `v = A x - b`.
    pub residuals: DVector<f64>,
    pub normal: DMatrix<f64>,
    pub factor: Cholesky,
}

impl WeightedSolution {
    /// `vᵀ W v` for the given diagonal weights.
    pub fn weighted_sum_squares(&self, weights: &DVector<f64>) -> f64 {
        self.residuals.iter().zip(weights.iter()).map(|(v, w)| w * v * v).sum()
    }

    /// `(AᵀWA)⁻¹`.
    pub fn normal_inverse(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }
}

/// Solves `min (Ax - b)ᵀ W (Ax - b)` with diagonal `W`.
///
/// Rank defects are reported as [`AdjustError::SingularNormalMatrix`] with the
/// 0-based columns involved; callers map them to stations.
pub fn solve_weighted(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<WeightedSolution, AdjustError> {
    let (n, m) = a.shape();
    if b.len() != n || weights.len() != n {
        return Err(AdjustError::DimensionMismatch(format!(
            "A is {n}x{m}, b has {}, W has {}",
            b.len(),
            weights.len()
        )));
    }
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
        return Err(AdjustError::NonpositiveWeight { index: i, weight: *w });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(AdjustError::NonFinite);
    }
    let mut wa = a.clone();
    for (i, w) in weights.iter().enumerate() {
        wa.row_mut(i).scale_mut(*w);
    }
    let normal = a.transpose() * &wa;
    let normal = (&normal + normal.transpose()) * 0.5;
    let rhs = wa.transpose() * b;
    let factor = Cholesky::factor(&normal).map_err(|columns| AdjustError::SingularNormalMatrix {
        columns,
        stations: Vec::new(),
    })?;
    let x = factor.solve(&rhs);
    let residuals = a * &x - b;
    Ok(WeightedSolution {
        x,
        residuals,
        normal,
        factor,
    })
}
