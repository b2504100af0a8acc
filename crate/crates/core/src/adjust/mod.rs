//! Assembly and iterative solution of the weighted observation equations.
//!
//! Each iteration linearizes every observation about the current
//! coordinates, solves the normal equations for corrections and applies
//! them. The final pass reports residuals, the a-posteriori variance of unit
//! weight `vᵀWv / (n - m)` and the parameter covariance
//! `σ₀² (AᵀWA)⁻¹`.

mod normal;
mod provisional;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::control::StationClassification;
use crate::equations::{self, CoordMap, EquationError, EquationRow, StationIndex};
use crate::fieldbook::{DataSet, ObservationKind};

pub use normal::{solve_weighted, Cholesky, WeightedSolution, PIVOT_THRESHOLD};
pub use provisional::provisional_coordinates;

#[derive(Debug, Error)]
pub enum AdjustError {
    #[error("sigma {sigma} at observation {index} is not positive")]
    NonpositiveSigma { index: usize, sigma: f64 },
    #[error("weight {weight} at observation {index} is not positive")]
    NonpositiveWeight { index: usize, weight: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("non-finite value in the equation system")]
    NonFinite,
    #[error("normal matrix is singular (datum or configuration defect) at columns {columns:?}, stations {stations:?}")]
    SingularNormalMatrix {
        /// 0-based columns with vanishing pivots.
        columns: Vec<usize>,
        stations: Vec<String>,
    },
    #[error("{observations} observations cannot determine {unknowns} unknowns")]
    Underdetermined { observations: usize, unknowns: usize },
    #[error("no provisional coordinates for station {0}")]
    MissingProvisional(String),
    #[error("network has no free stations")]
    NoFreeStations,
    #[error("stations without an observation path to a fixed station: {0:?}")]
    UnreachableStation(Vec<String>),
    #[error("adjustment did not converge in {} iterations", .0.iterations)]
    NotConverged(Box<AdjustmentResult>),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Equation(#[from] EquationError),
}

type Result<T> = std::result::Result<T, AdjustError>;

/// Diagonal weight matrix of uncorrelated observations.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(DVector<f64>);

impl WeightMatrix {
    pub fn diagonal(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.0)
    }

    /// `Q = W⁻¹`.
    pub fn cofactor(&self) -> CofactorMatrix {
        CofactorMatrix {
            q_matrix: DMatrix::from_diagonal(&self.0.map(|w| 1.0 / w)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CofactorMatrix {
    pub q_matrix: DMatrix<f64>,
}

/// `w_i = σ₀² / σ_i²`.
pub fn weights_from_sigmas(sigmas: &[f64], sigma0_sq: f64) -> Result<WeightMatrix> {
    if !(sigma0_sq.is_finite() && sigma0_sq > 0.0) {
        return Err(AdjustError::InvalidOptions(format!("sigma0² = {sigma0_sq}")));
    }
    let mut w = DVector::zeros(sigmas.len());
    for (i, &s) in sigmas.iter().enumerate() {
        if !(s.is_finite() && s > 0.0) {
            return Err(AdjustError::NonpositiveSigma { index: i, sigma: s });
        }
        w[i] = sigma0_sq / (s * s);
    }
    Ok(WeightMatrix(w))
}

/// `C_y = A C_x Aᵀ`.
pub fn propagate_covariance(a: &DMatrix<f64>, c_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !c_x.is_square() || a.ncols() != c_x.nrows() {
        return Err(AdjustError::DimensionMismatch(format!(
            "A is {}x{}, C_x is {}x{}",
            a.nrows(),
            a.ncols(),
            c_x.nrows(),
            c_x.ncols()
        )));
    }
    let scale = c_x.amax().max(f64::MIN_POSITIVE);
    if (c_x - c_x.transpose()).amax() > 1e-9 * scale {
        return Err(AdjustError::NotSymmetric);
    }
    let c_y = a * c_x * a.transpose();
    Ok((&c_y + c_y.transpose()) * 0.5)
}

/// The linearized system at one set of provisional coordinates.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    pub a_matrix: DMatrix<f64>,
    pub b_vector: DVector<f64>,
    pub weights: WeightMatrix,
    pub index: StationIndex,
    pub tags: Vec<String>,
    pub rows: Vec<EquationRow>,
}

impl DesignSystem {
    pub fn observations(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.a_matrix.ncols()
    }

    pub fn w_matrix(&self) -> DMatrix<f64> {
        self.weights.to_dense()
    }

    /// Solves the normal equations, naming the stations behind any rank defect.
    pub fn solve_normal(&self) -> Result<WeightedSolution> {
        let (n, m) = self.a_matrix.shape();
        if n < m {
            return Err(AdjustError::Underdetermined {
                observations: n,
                unknowns: m,
            });
        }
        solve_weighted(&self.a_matrix, &self.b_vector, self.weights.diagonal()).map_err(|e| match e {
            AdjustError::SingularNormalMatrix { columns, .. } => {
                let mut stations: Vec<String> = Vec::new();
                for &c in &columns {
                    if let Some((s, _)) = self.index.station_of_column(c + 1) {
                        if !stations.iter().any(|x| x == s) {
                            stations.push(s.to_owned());
                        }
                    }
                }
                AdjustError::SingularNormalMatrix { columns, stations }
            }
            other => other,
        })
    }

    /// Text dump of the coefficient matrix with blanks for structural zeros.
    pub fn dump_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "OBS");
        for s in self.index.order() {
            let _ = write!(out, "{:>14}{:>14}", format!("dE_{s}"), format!("dN_{s}"));
        }
        let _ = writeln!(out, "{:>16}{:>16}", "b", "w");
        for row in &self.rows {
            let _ = write!(out, "{:<12}", row.tag);
            for col in 1..=self.index.unknowns() {
                match row.entries.get(&col) {
                    Some(v) => {
                        let _ = write!(out, "{:>14.6e}", v);
                    }
                    None => {
                        let _ = write!(out, "{:>14}", "");
                    }
                }
            }
            let _ = writeln!(out, "{:>16.6e}{:>16.6e}", row.rhs, row.weight);
        }
        out
    }

    /// `(row, col)` positions (0-based) of structural coefficients, i.e. the
    /// cells a station participating in the observation owns.
    pub fn structural_pattern(&self) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.entries.keys().map(move |&c| (i, c - 1)))
            .collect()
    }
}

/// Free stations in order of first reference in the dataset.
pub fn free_station_order(dataset: &DataSet, classification: &StationClassification) -> Vec<String> {
    dataset
        .stations()
        .iter()
        .filter(|s| classification.free.contains(*s))
        .cloned()
        .collect()
}

/// One row per observation, in dataset order.
pub fn form_equations(
    dataset: &DataSet,
    classification: &StationClassification,
    provisionals: &CoordMap,
    sigma0_sq: f64,
) -> Result<DesignSystem> {
    for s in dataset.stations() {
        if !provisionals.contains_key(s) {
            return Err(AdjustError::MissingProvisional(s.clone()));
        }
    }
    let index = StationIndex::new(free_station_order(dataset, classification));
    if index.is_empty() {
        return Err(AdjustError::NoFreeStations);
    }
    let sigmas: Vec<f64> = dataset.observations().iter().map(|o| o.sigma).collect();
    let weights = weights_from_sigmas(&sigmas, sigma0_sq)?;

    let n = dataset.len();
    let m = index.unknowns();
    let mut a = DMatrix::zeros(n, m);
    let mut b = DVector::zeros(n);
    let mut rows = Vec::with_capacity(n);
    for (i, obs) in dataset.observations().iter().enumerate() {
        let row = equations::observation_row(obs, provisionals, &index, sigma0_sq)?;
        for (&col, &v) in &row.entries {
            a[(i, col - 1)] = v;
        }
        b[i] = row.rhs;
        rows.push(row);
    }
    Ok(DesignSystem {
        a_matrix: a,
        b_vector: b,
        weights,
        index,
        tags: rows.iter().map(|r| r.tag.clone()).collect(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustOptions {
    /// Convergence threshold on the largest correction, metres.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// A-priori variance of unit weight.
    pub sigma0_sq: f64,
}

impl Default for AdjustOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 10,
            sigma0_sq: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub max_abs_correction: f64,
    /// `vᵀWv` of the linearized solve in this iteration.
    pub weighted_sum_squares: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationResidual {
    pub tag: String,
    pub kind: ObservationKind,
    /// Metres or radians.
    pub residual: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct AdjustmentResult {
    pub index: StationIndex,
    /// Total corrections from the starting provisionals, column order.
    pub corrections: DVector<f64>,
    /// Adjusted free stations and the fixed stations, by id.
    pub coordinates: CoordMap,
    pub fixed: BTreeSet<String>,
    pub residuals: DVector<f64>,
    pub residual_table: Vec<ObservationResidual>,
    /// `None` when the redundancy is zero.
    pub unit_variance: Option<f64>,
    /// `(AᵀWA)⁻¹` at the final linearization.
    pub cofactor: DMatrix<f64>,
    /// `σ₀² (AᵀWA)⁻¹`, suppressed with the unit variance.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub redundancy: usize,
    pub log: Vec<IterationRecord>,
}

impl AdjustmentResult {
    /// Standard deviations of easting and northing of a free station.
    pub fn std_devs(&self, station: &str) -> Option<(f64, f64)> {
        let cov = self.covariance.as_ref()?;
        let i = self.index.index(station)?;
        Some((cov[(2 * i - 2, 2 * i - 2)].sqrt(), cov[(2 * i - 1, 2 * i - 1)].sqrt()))
    }

    pub fn unit_sigma(&self) -> Option<f64> {
        self.unit_variance.map(f64::sqrt)
    }
}

fn apply_corrections(coords: &mut CoordMap, index: &StationIndex, x: &DVector<f64>) {
    for (k, s) in index.order().iter().enumerate() {
        let c = coords.get_mut(s).expect("free station has provisional coordinates");
        c.easting += x[2 * k];
        c.northing += x[2 * k + 1];
    }
}

/// Iterates linearize-solve-update from `provisionals` until the largest
/// correction drops below the tolerance.
///
/// `provisionals` must hold coordinates for every dataset station; fixed
/// stations keep theirs unchanged.
pub fn iterate_adjustment(
    dataset: &DataSet,
    classification: &StationClassification,
    provisionals: &CoordMap,
    options: &AdjustOptions,
) -> Result<AdjustmentResult> {
    if options.tolerance.is_nan() || options.tolerance <= 0.0 || options.max_iterations == 0 {
        return Err(AdjustError::InvalidOptions(format!(
            "tolerance {} and max_iterations {} must be positive",
            options.tolerance, options.max_iterations
        )));
    }
    let mut coords: CoordMap = dataset
        .stations()
        .iter()
        .map(|s| {
            provisionals
                .get(s)
                .map(|c| (s.clone(), *c))
                .ok_or_else(|| AdjustError::MissingProvisional(s.clone()))
        })
        .collect::<Result<_>>()?;
    let start = coords.clone();

    let mut log = Vec::new();
    let mut converged = false;
    for iteration in 1..=options.max_iterations {
        let system = form_equations(dataset, classification, &coords, options.sigma0_sq)?;
        let solution = system.solve_normal()?;
        if solution.x.iter().any(|v| !v.is_finite()) {
            return Err(AdjustError::NonFinite);
        }
        apply_corrections(&mut coords, &system.index, &solution.x);
        let max_abs_correction = solution.x.amax();
        log.push(IterationRecord {
            iteration,
            max_abs_correction,
            weighted_sum_squares: solution.weighted_sum_squares(system.weights.diagonal()),
        });
        if max_abs_correction < options.tolerance {
            converged = true;
            break;
        }
    }

    let system = form_equations(dataset, classification, &coords, options.sigma0_sq)?;
    let solution = system.solve_normal()?;
    let (n, m) = (system.observations(), system.unknowns());
    let redundancy = n - m;
    let vtwv = solution.weighted_sum_squares(system.weights.diagonal());
    let unit_variance = (redundancy > 0).then(|| vtwv / redundancy as f64);
    let cofactor = solution.normal_inverse();
    let covariance = unit_variance.map(|s0| &cofactor * s0);

    let mut corrections = DVector::zeros(m);
    for (k, s) in system.index.order().iter().enumerate() {
        corrections[2 * k] = coords[s].easting - start[s].easting;
        corrections[2 * k + 1] = coords[s].northing - start[s].northing;
    }
    let residual_table = system
        .rows
        .iter()
        .zip(solution.residuals.iter())
        .map(|(row, &v)| ObservationResidual {
            tag: row.tag.clone(),
            kind: row.kind,
            residual: v,
            weight: row.weight,
        })
        .collect();

    let result = AdjustmentResult {
        fixed: dataset
            .stations()
            .iter()
            .filter(|s| system.index.index(s).is_none())
            .cloned()
            .collect(),
        index: system.index,
        corrections,
        coordinates: coords,
        residuals: solution.residuals,
        residual_table,
        unit_variance,
        cofactor,
        covariance,
        iterations: log.len(),
        converged,
        redundancy,
        log,
    };
    if converged {
        Ok(result)
    } else {
        Err(AdjustError::NotConverged(Box::new(result)))
    }
}
