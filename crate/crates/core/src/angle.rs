//! Angle helpers: degree-minute-second conversion, normalization and
//! circular averaging. Everything inside the crate works in radians.

use std::f64::consts::{PI, TAU};

/// Arc-seconds per radian.
pub const ARCSEC_PER_RAD: f64 = 180.0 * 3600.0 / PI;

/// Normalizes an angle to `[0, 2π)`.
pub fn normalize_positive(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if a >= TAU {
        a -= TAU;
    }
    a
}

/// Normalizes an angle to `(-π, π]`.
pub fn normalize_signed(angle: f64) -> f64 {
    let a = normalize_positive(angle);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Converts a degree-minute-second triple to radians.
///
/// The sign of the degree field applies to the whole value; minutes and
/// seconds are expected to be non-negative.
pub fn dms_to_rad(deg: f64, min: f64, sec: f64) -> f64 {
    let sign = if deg.is_sign_negative() { -1.0 } else { 1.0 };
    let decimal = deg.abs() + min / 60.0 + sec / 3600.0;
    (sign * decimal).to_radians()
}

/// Splits a non-negative angle in radians into whole degrees, whole minutes
/// and decimal seconds.
pub fn rad_to_dms(angle: f64) -> (u32, u32, f64) {
    let total_sec = angle.to_degrees() * 3600.0;
    let deg = (total_sec / 3600.0).floor();
    let rem = total_sec - deg * 3600.0;
    let min = (rem / 60.0).floor();
    let sec = rem - min * 60.0;
    (deg as u32, min as u32, sec)
}

/// Circular mean of a set of directions, weighted.
///
/// Returns `None` when the resultant vector vanishes (directions cancel) or
/// the input is empty.
pub fn circular_mean_weighted<I>(items: I) -> Option<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (mut s, mut c, mut w) = (0.0, 0.0, 0.0);
    for (angle, weight) in items {
        s += weight * angle.sin();
        c += weight * angle.cos();
        w += weight;
    }
    if w <= 0.0 || s.hypot(c) <= 1e-12 * w {
        return None;
    }
    Some(normalize_positive(s.atan2(c)))
}

/// Unweighted circular mean.
pub fn circular_mean(angles: &[f64]) -> Option<f64> {
    circular_mean_weighted(angles.iter().map(|&a| (a, 1.0)))
}
