//! Straight-line and basis-function least-squares fits.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjust::{solve_weighted, AdjustError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("logarithm of nonpositive value at sample {index}")]
    DomainError { index: usize },
    #[error("basis matrix is rank deficient in columns {0:?}")]
    RankDeficient(Vec<usize>),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

type Result<T> = std::result::Result<T, RegressError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    pub x: f64,
    pub y: f64,
}

impl PointSample {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept_a: f64,
    pub gradient_b: f64,
    /// `sqrt(S_r / (N - 2))`; `None` below three samples.
    pub std_error_estimate: Option<f64>,
    pub n: usize,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept_a + self.gradient_b * x
    }
}

/// `y = a + b x` through the sample means.
pub fn fit_simple_line(samples: &[PointSample]) -> Result<LineFit> {
    if samples.len() < 2 {
        return Err(RegressError::DegenerateInput("need at least 2 samples".into()));
    }
    if samples.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(RegressError::InvalidInput("non-finite sample".into()));
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|p| p.x).sum::<f64>() / n;
    let my = samples.iter().map(|p| p.y).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|p| (p.x - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|p| (p.x - mx) * (p.y - my)).sum();
    if sxx == 0.0 {
        return Err(RegressError::DegenerateInput("all x equal".into()));
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let std_error_estimate = (samples.len() >= 3).then(|| {
        let sr: f64 = samples.iter().map(|p| (p.y - a - b * p.x).powi(2)).sum();
        (sr / (n - 2.0)).sqrt()
    });
    Ok(LineFit {
        intercept_a: a,
        gradient_b: b,
        std_error_estimate,
        n: samples.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `y = α e^{βx}`, fitted as `ln y = ln α + βx`.
    Exponential,
    /// `y = α x^β`, fitted as `log y = log α + β log x`.
    Power,
}

/// Returns `(α, β)` of the chosen model.
pub fn linearize_fit(kind: ModelKind, samples: &[PointSample]) -> Result<(f64, f64)> {
    let mut lin = Vec::with_capacity(samples.len());
    for (i, p) in samples.iter().enumerate() {
        let ok = match kind {
            ModelKind::Exponential => p.y > 0.0,
            ModelKind::Power => p.x > 0.0 && p.y > 0.0,
        };
        if !ok {
            return Err(RegressError::DomainError { index: i });
        }
        lin.push(match kind {
            ModelKind::Exponential => PointSample::new(p.x, p.y.ln()),
            ModelKind::Power => PointSample::new(p.x.log10(), p.y.log10()),
        });
    }
    let fit = fit_simple_line(&lin)?;
    let alpha = match kind {
        ModelKind::Exponential => fit.intercept_a.exp(),
        ModelKind::Power => 10f64.powf(fit.intercept_a),
    };
    Ok((alpha, fit.gradient_b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisFit {
    pub coefficients: Vec<f64>,
    pub residual_sum_squares: f64,
}

/// Minimizes `Σ w_i (y_i - Σ_j b_j x_ij)²` over the columns of `basis`.
///
/// `residual_sum_squares` is the weighted sum at the minimum.
pub fn fit_basis(basis: &DMatrix<f64>, y: &DVector<f64>, weights: &DVector<f64>) -> Result<BasisFit> {
    let (n, m) = basis.shape();
    if m == 0 || n < m {
        return Err(RegressError::DegenerateInput(format!(
            "{n} samples for {m} basis functions"
        )));
    }
    let sol = solve_weighted(basis, y, weights).map_err(|e| match e {
        AdjustError::SingularNormalMatrix { columns, .. } => RegressError::RankDeficient(columns),
        other => RegressError::InvalidInput(other.to_string()),
    })?;
    Ok(BasisFit {
        residual_sum_squares: sol.weighted_sum_squares(weights),
        coefficients: sol.x.iter().copied().collect(),
    })
}

/// Polynomial basis `1, x, ..., x^degree` evaluated at each sample.
pub fn polynomial_basis(xs: &[f64], degree: usize) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), degree + 1, |i, j| xs[i].powi(j as i32))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub samples: Vec<PointSample>,
    pub weights: Vec<f64>,
}

/// Reads `x,y[,weight]` rows; a header row is optional; missing weights are 1.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<WeightedSamples> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = WeightedSamples {
        samples: Vec::new(),
        weights: Vec::new(),
    };
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| RegressError::Csv {
            line: k + 1,
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        let fields: Vec<&str> = rec.iter().collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            // a non-numeric first row is a header
            Err(_) if out.samples.is_empty() && k == 0 => continue,
            Err(e) => {
                return Err(RegressError::Csv {
                    line,
                    message: e.to_string(),
                })
            }
        };
        let (x, y, w) = match values[..] {
            [x, y] => (x, y, 1.0),
            [x, y, w] => (x, y, w),
            _ => {
                return Err(RegressError::Csv {
                    line,
                    message: format!("expected 2 or 3 fields, found {}", values.len()),
                })
            }
        };
        if !(w.is_finite() && w > 0.0) {
            return Err(RegressError::Csv {
                line,
                message: format!("weight must be positive, got {w}"),
            });
        }
        out.samples.push(PointSample::new(x, y));
        out.weights.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<PointSample> {
        v.iter().map(|&(x, y)| PointSample::new(x, y)).collect()
    }

    #[test]
    fn exact_three_points() {
        let f = fit_simple_line(&pts(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)])).unwrap();
        assert!((f.intercept_a - 1.0).abs() < 1e-12);
        assert!((f.gradient_b - 2.0).abs() < 1e-12);
        assert!(f.std_error_estimate.unwrap() < 1e-12);
    }

    #[test]
    fn two_point_line() {
        let f = fit_simple_line(&pts(&[(0.0, 0.0), (1.0, 1.0)])).unwrap();
        assert!(f.intercept_a.abs() < 1e-15 && (f.gradient_b - 1.0).abs() < 1e-15);
        assert_eq!(f.std_error_estimate, None);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            fit_simple_line(&pts(&[(1.0, 0.0), (1.0, 1.0), (1.0, 5.0)])),
            Err(RegressError::DegenerateInput(_))
        ));
        assert!(fit_simple_line(&pts(&[(1.0, 0.0)])).is_err());
    }

    #[test]
    fn std_error_of_known_scatter() {
        // residuals +1, -2, +1 about y = x
        let f = fit_simple_line(&pts(&[(0.0, 1.0), (1.0, -1.0), (2.0, 3.0)])).unwrap();
        let sr: f64 = [(0.0, 1.0), (1.0, -1.0), (2.0, 3.0)]
            .iter()
            .map(|&(x, y)| (y - f.predict(x)).powi(2))
            .sum();
        assert!((f.std_error_estimate.unwrap() - sr.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exponential_and_power() {
        let e: Vec<_> = (0..5)
            .map(|i| PointSample::new(i as f64, 2.0 * (0.5 * i as f64).exp()))
            .collect();
        let (a, b) = linearize_fit(ModelKind::Exponential, &e).unwrap();
        assert!((a - 2.0).abs() < 1e-9 && (b - 0.5).abs() < 1e-9);
        let p = pts(&[(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)]);
        let (a, b) = linearize_fit(ModelKind::Power, &p).unwrap();
        assert!((a - 1.0).abs() < 1e-9 && (b - 2.0).abs() < 1e-9);
        assert_eq!(
            linearize_fit(ModelKind::Exponential, &pts(&[(0.0, 1.0), (1.0, 0.0)])),
            Err(RegressError::DomainError { index: 1 })
        );
        assert!(linearize_fit(ModelKind::Power, &pts(&[(0.0, 1.0), (1.0, 2.0)])).is_err());
    }

    #[test]
    fn quadratic_basis() {
        let xs = [-1.0, 0.0, 1.0, 2.0, 3.0];
        let y = DVector::from_iterator(5, xs.iter().map(|x| 1.0 + 2.0 * x + 3.0 * x * x));
        let f = fit_basis(&polynomial_basis(&xs, 2), &y, &DVector::from_element(5, 1.0)).unwrap();
        for (c, t) in f.coefficients.iter().zip([1.0, 2.0, 3.0]) {
            assert!((c - t).abs() < 1e-9);
        }
        assert!(f.residual_sum_squares < 1e-18);
    }

    #[test]
    fn constant_basis_is_weighted_mean() {
        let y = DVector::from_vec(vec![1.0, 2.0, 6.0]);
        let w = DVector::from_vec(vec![1.0, 1.0, 2.0]);
        let f = fit_basis(&DMatrix::from_element(3, 1, 1.0), &y, &w).unwrap();
        assert!((f.coefficients[0] - 15.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_basis() {
        let basis = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let r = fit_basis(&basis, &DVector::from_element(3, 1.0), &DVector::from_element(3, 1.0));
        assert_eq!(r, Err(RegressError::RankDeficient(vec![1])));
    }

    #[test]
    fn csv_samples() {
        let text = "x,y,weight\n0,1\n1,3,2\n# note\n2,5,1\n";
        let s = read_samples_csv(text.as_bytes()).unwrap();
        assert_eq!(s.samples.len(), 3);
        assert_eq!(s.weights, [1.0, 2.0, 1.0]);
        assert!(matches!(
            read_samples_csv("0,1\n1,a\n".as_bytes()),
            Err(RegressError::Csv { line: 2, .. })
        ));
        assert!(read_samples_csv("0,1,0\n".as_bytes()).is_err());
    }
}
