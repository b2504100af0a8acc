//! Oracles shared by the integration tests. None of them call into the
//! solver under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Weighted least squares through the SVD of `√W A`.
pub fn svd_wls(a: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let sw = w.map(f64::sqrt);
    let aw = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * sw[i]);
    let bw = b.component_mul(&sw);
    aw.svd(true, true).solve(&bw, 1e-14).expect("svd solve")
}

pub fn weighted_ssq(a: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let v = a * x - b;
    v.iter().zip(w.iter()).map(|(v, w)| w * v * v).sum()
}

pub fn bearing(from: (f64, f64), to: (f64, f64)) -> f64 {
    (to.0 - from.0).atan2(to.1 - from.1).rem_euclid(std::f64::consts::TAU)
}

pub fn length(from: (f64, f64), to: (f64, f64)) -> f64 {
    (to.0 - from.0).hypot(to.1 - from.1)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}
