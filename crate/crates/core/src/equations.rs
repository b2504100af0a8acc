//! Plane geometry between stations and linearized observation-equation rows.
//!
//! Unknowns are corrections `dE`, `dN` to the provisional coordinates of
//! free stations. Columns are 1-based: the station with index `i` owns
//! column `2i - 1` for `dE` and `2i` for `dN`. Fixed stations carry no
//! columns, so their terms are simply dropped from a row.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle;
use crate::fieldbook::{CompiledObservation, ObservationKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquationError {
    #[error("stations {0} and {1} are coincident")]
    CoincidentStations(String, String),
    #[error("no coordinates for station {0}")]
    MissingCoordinates(String),
    #[error("station {0} is fixed or not indexed and has no columns")]
    FixedOrUnknownStation(String),
    #[error("observation {tag} is not a {expected}")]
    WrongKind { tag: String, expected: ObservationKind },
}

type Result<T> = std::result::Result<T, EquationError>;

/// Plane coordinates in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coordinates {
    pub easting: f64,
    pub northing: f64,
}

impl Coordinates {
    pub const fn new(easting: f64, northing: f64) -> Self {
        Self { easting, northing }
    }

    /// Point at `length` along `bearing` from `self`.
    pub fn polar(&self, bearing: f64, length: f64) -> Self {
        Self::new(
            self.easting + length * bearing.sin(),
            self.northing + length * bearing.cos(),
        )
    }
}

pub type CoordMap = BTreeMap<String, Coordinates>;

/// Full-circle bearing from north, clockwise, in `[0, 2π)`.
pub fn bearing(from: Coordinates, to: Coordinates) -> Option<f64> {
    let de = to.easting - from.easting;
    let dn = to.northing - from.northing;
    if de == 0.0 && dn == 0.0 {
        return None;
    }
    Some(angle::normalize_positive(de.atan2(dn)))
}

pub fn distance(from: Coordinates, to: Coordinates) -> f64 {
    (to.easting - from.easting).hypot(to.northing - from.northing)
}

/// Bearing, length and the differential coefficients of one leg.
///
/// `p = cosθ/l`, `q = sinθ/l` enter direction rows; `r = sinθ`, `s = cosθ`
/// enter distance rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarElements {
    pub bearing: f64,
    pub length: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

pub fn polar_elements(from: Coordinates, to: Coordinates) -> Option<PolarElements> {
    let theta = bearing(from, to)?;
    let length = distance(from, to);
    let (sin, cos) = theta.sin_cos();
    Some(PolarElements {
        bearing: theta,
        length,
        p: cos / length,
        q: sin / length,
        r: sin,
        s: cos,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    DE,
    DN,
}

/// Ordered list of free stations and their 1-based indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StationIndex {
    order: Vec<String>,
    index_of: HashMap<String, usize>,
}

impl StationIndex {
    /// Indexes `free` in the given order; repeated ids keep their first index.
    pub fn new<I, S>(free: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut idx = Self::default();
        for s in free {
            let s = s.into();
            if !idx.index_of.contains_key(&s) {
                idx.order.push(s.clone());
                idx.index_of.insert(s, idx.order.len());
            }
        }
        idx
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn index(&self, station: &str) -> Option<usize> {
        self.index_of.get(station).copied()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn unknowns(&self) -> usize {
        2 * self.order.len()
    }

    /// Station and component owning a 1-based column.
    pub fn station_of_column(&self, column: usize) -> Option<(&str, Component)> {
        if column == 0 {
            return None;
        }
        let station = self.order.get((column - 1) / 2)?;
        let comp = if column % 2 == 1 { Component::DE } else { Component::DN };
        Some((station, comp))
    }
}

/// 1-based column of a station's correction component.
pub fn column_of(index: &StationIndex, station: &str, component: Component) -> Result<usize> {
    let i = index
        .index(station)
        .ok_or_else(|| EquationError::FixedOrUnknownStation(station.to_owned()))?;
    let col = 2 * i;
    Ok(match component {
        Component::DE => col - 1,
        Component::DN => col,
    })
}

/// One linearized observation equation `v = Σ a_j x_j - b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationRow {
    /// 1-based column → coefficient.
    pub entries: BTreeMap<usize, f64>,
    /// Observed minus computed.
    pub rhs: f64,
    pub weight: f64,
    pub kind: ObservationKind,
    pub tag: String,
}

impl EquationRow {
    fn add(&mut self, index: &StationIndex, station: &str, de: f64, dn: f64) {
        if let Some(i) = index.index(station) {
            *self.entries.entry(2 * i - 1).or_insert(0.0) += de;
            *self.entries.entry(2 * i).or_insert(0.0) += dn;
        }
    }
}

fn coords_of(coords: &CoordMap, id: &str) -> Result<Coordinates> {
    coords
        .get(id)
        .copied()
        .ok_or_else(|| EquationError::MissingCoordinates(id.to_owned()))
}

fn leg(coords: &CoordMap, from: &str, to: &str) -> Result<PolarElements> {
    let a = coords_of(coords, from)?;
    let b = coords_of(coords, to)?;
    polar_elements(a, b).ok_or_else(|| EquationError::CoincidentStations(from.to_owned(), to.to_owned()))
}

/// Distance row: `v = r(dE_B - dE_A) + s(dN_B - dN_A) - dl`.
pub fn distance_row(
    obs: &CompiledObservation,
    coords: &CoordMap,
    index: &StationIndex,
    sigma0_sq: f64,
) -> Result<EquationRow> {
    if obs.kind != ObservationKind::Distance {
        return Err(EquationError::WrongKind {
            tag: obs.tag(),
            expected: ObservationKind::Distance,
        });
    }
    let (a, b) = (obs.at.as_str(), obs.from_target.as_str());
    let pe = leg(coords, a, b)?;
    let mut row = EquationRow {
        entries: BTreeMap::new(),
        rhs: obs.value - pe.length,
        weight: sigma0_sq / (obs.sigma * obs.sigma),
        kind: obs.kind,
        tag: obs.tag(),
    };
    row.add(index, a, -pe.r, -pe.s);
    row.add(index, b, pe.r, pe.s);
    Ok(row)
}

/// Angle row for the angle at A from backsight B to foresight C.
pub fn angle_row(
    obs: &CompiledObservation,
    coords: &CoordMap,
    index: &StationIndex,
    sigma0_sq: f64,
) -> Result<EquationRow> {
    let foresight = match (obs.kind, obs.to_target.as_deref()) {
        (ObservationKind::Angle, Some(c)) => c,
        _ => {
            return Err(EquationError::WrongKind {
                tag: obs.tag(),
                expected: ObservationKind::Angle,
            })
        }
    };
    let (a, b, c) = (obs.at.as_str(), obs.from_target.as_str(), foresight);
    let ab = leg(coords, a, b)?;
    let ac = leg(coords, a, c)?;
    let computed = (ac.bearing - ab.bearing).rem_euclid(TAU);
    let mut row = EquationRow {
        entries: BTreeMap::new(),
        rhs: angle::normalize_signed(obs.value - computed),
        weight: sigma0_sq / (obs.sigma * obs.sigma),
        kind: obs.kind,
        tag: obs.tag(),
    };
    row.add(index, a, ab.p - ac.p, ac.q - ab.q);
    row.add(index, b, -ab.p, ab.q);
    row.add(index, c, ac.p, -ac.q);
    Ok(row)
}

/// Dispatches on the observation kind.
pub fn observation_row(
    obs: &CompiledObservation,
    coords: &CoordMap,
    index: &StationIndex,
    sigma0_sq: f64,
) -> Result<EquationRow> {
    match obs.kind {
        ObservationKind::Distance => distance_row(obs, coords, index, sigma0_sq),
        ObservationKind::Angle => angle_row(obs, coords, index, sigma0_sq),
    }
}

/// The observable an observation measures, evaluated at `coords`.
pub fn computed_value(obs: &CompiledObservation, coords: &CoordMap) -> Result<f64> {
    match (obs.kind, obs.to_target.as_deref()) {
        (ObservationKind::Distance, _) => Ok(leg(coords, &obs.at, &obs.from_target)?.length),
        (ObservationKind::Angle, Some(c)) => {
            let ab = leg(coords, &obs.at, &obs.from_target)?;
            let ac = leg(coords, &obs.at, c)?;
            Ok((ac.bearing - ab.bearing).rem_euclid(TAU))
        }
        (ObservationKind::Angle, None) => Err(EquationError::WrongKind {
            tag: obs.tag(),
            expected: ObservationKind::Angle,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

    const O: Coordinates = Coordinates::new(0.0, 0.0);

    #[test]
    fn bearings_by_quadrant() {
        assert_eq!(bearing(O, Coordinates::new(0.0, 100.0)), Some(0.0));
        assert_eq!(bearing(O, Coordinates::new(100.0, 0.0)), Some(FRAC_PI_2));
        let b = bearing(O, Coordinates::new(-100.0, -100.0)).unwrap();
        assert!((b - 5.0 * PI / 4.0).abs() < 1e-15);
        assert_eq!(bearing(O, O), None);
    }

    #[test]
    fn distances() {
        assert_eq!(distance(O, Coordinates::new(3.0, 4.0)), 5.0);
        assert_eq!(distance(O, O), 0.0);
        let d = distance(O, Coordinates::new(1e8, 1e8));
        assert!((d - SQRT_2 * 1e8).abs() <= 1e8 * 4.0 * f64::EPSILON);
        // no overflow for huge inputs
        assert!(distance(O, Coordinates::new(1e300, 1e300)).is_finite());
    }

    #[test]
    fn polar_cardinal() {
        let n = polar_elements(O, Coordinates::new(0.0, 100.0)).unwrap();
        assert_eq!((n.p, n.q, n.r, n.s), (0.01, 0.0, 0.0, 1.0));
        let e = polar_elements(O, Coordinates::new(200.0, 0.0)).unwrap();
        assert!(e.p.abs() < 1e-18 && (e.q - 0.005).abs() < 1e-18);
        assert!((e.r - 1.0).abs() < 1e-15 && e.s.abs() < 1e-15);
    }

    #[test]
    fn polar_diagonal_against_finite_differences() {
        let to = Coordinates::new(100.0, 100.0);
        let pe = polar_elements(O, to).unwrap();
        assert!((pe.length - SQRT_2 * 100.0).abs() < 1e-12);
        assert!((pe.p - 0.005).abs() < 1e-15 && (pe.q - 0.005).abs() < 1e-15);
        assert!((pe.r - SQRT_2 / 2.0).abs() < 1e-15 && (pe.s - SQRT_2 / 2.0).abs() < 1e-15);
        let h = 1e-4;
        let theta = |e: f64, n: f64| bearing(O, Coordinates::new(e, n)).unwrap();
        let len = |e: f64, n: f64| distance(O, Coordinates::new(e, n));
        let dth_de = (theta(100.0 + h, 100.0) - theta(100.0 - h, 100.0)) / (2.0 * h);
        let dth_dn = (theta(100.0, 100.0 + h) - theta(100.0, 100.0 - h)) / (2.0 * h);
        let dl_de = (len(100.0 + h, 100.0) - len(100.0 - h, 100.0)) / (2.0 * h);
        assert!((dth_de - pe.p).abs() < 1e-6 * pe.p);
        assert!((dth_dn + pe.q).abs() < 1e-6 * pe.q);
        assert!((dl_de - pe.r).abs() < 1e-6 * pe.r);
    }

    #[test]
    fn columns_follow_index() {
        let idx = StationIndex::new(["A", "B", "C", "D"]);
        assert_eq!(column_of(&idx, "C", Component::DE), Ok(5));
        assert_eq!(column_of(&idx, "C", Component::DN), Ok(6));
        assert_eq!(column_of(&idx, "A", Component::DE), Ok(1));
        assert_eq!(column_of(&idx, "A", Component::DN), Ok(2));
        assert_eq!(
            column_of(&idx, "P", Component::DE),
            Err(EquationError::FixedOrUnknownStation("P".into()))
        );
        assert_eq!(idx.station_of_column(6), Some(("C", Component::DN)));
        assert_eq!(idx.station_of_column(0), None);
        assert_eq!(idx.station_of_column(9), None);
    }

    fn coords(pairs: &[(&str, f64, f64)]) -> CoordMap {
        pairs
            .iter()
            .map(|&(id, e, n)| (id.to_owned(), Coordinates::new(e, n)))
            .collect()
    }

    #[test]
    fn distance_row_signs() {
        let c = coords(&[("A", 0.0, 0.0), ("B", 30.0, 40.0), ("R", -10.0, 5.0)]);
        let idx = StationIndex::new(["A", "B"]);
        let obs = CompiledObservation::distance("A", "B", 50.0, 0.5);
        let row = distance_row(&obs, &c, &idx, 1.0).unwrap();
        assert_eq!(row.entries.len(), 4);
        assert!((row.entries[&1] + 0.6).abs() < 1e-15);
        assert!((row.entries[&2] + 0.8).abs() < 1e-15);
        assert!((row.entries[&3] - 0.6).abs() < 1e-15);
        assert!((row.entries[&4] - 0.8).abs() < 1e-15);
        assert!(row.rhs.abs() < 1e-12);
        assert!((row.weight - 4.0).abs() < 1e-15);

        // R fixed: only A's columns
        let obs = CompiledObservation::distance("A", "R", 12.0, 0.01);
        let row = distance_row(&obs, &c, &idx, 1.0).unwrap();
        assert_eq!(row.entries.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert!(row.entries[&1] > 0.0 && row.entries[&2] < 0.0);
    }

    #[test]
    fn angle_row_pattern_and_translation_invariance() {
        let c = coords(&[("A", 0.0, 0.0), ("B", 10.0, 100.0), ("C", 120.0, -20.0)]);
        let idx = StationIndex::new(["A", "B", "C"]);
        let computed = computed_value(&CompiledObservation::angle("B", "A", "C", 0.0, 1.0), &c).unwrap();
        let obs = CompiledObservation::angle("B", "A", "C", computed, 1e-5);
        let row = angle_row(&obs, &c, &idx, 1.0).unwrap();
        assert_eq!(row.entries.len(), 6);
        assert!(row.rhs.abs() < 1e-15);
        let se = row.entries[&1] + row.entries[&3] + row.entries[&5];
        let sn = row.entries[&2] + row.entries[&4] + row.entries[&6];
        assert!(se.abs() < 1e-15 && sn.abs() < 1e-15);
    }

    #[test]
    fn angle_rhs_wraps() {
        let c = coords(&[("A", 0.0, 0.0), ("B", 0.0, 100.0), ("C", -1.0, 100.0)]);
        let idx = StationIndex::new(["A"]);
        // computed angle is just under 2π; observed just over 0
        let obs = CompiledObservation::angle("B", "A", "C", 1e-6, 1e-5);
        let row = angle_row(&obs, &c, &idx, 1.0).unwrap();
        assert!(row.rhs.abs() < 0.02, "{}", row.rhs);
    }

    #[test]
    fn missing_and_coincident() {
        let c = coords(&[("A", 0.0, 0.0), ("B", 0.0, 0.0)]);
        let idx = StationIndex::new(["A"]);
        let obs = CompiledObservation::distance("A", "B", 1.0, 0.01);
        assert!(matches!(
            distance_row(&obs, &c, &idx, 1.0),
            Err(EquationError::CoincidentStations(..))
        ));
        let obs = CompiledObservation::distance("A", "Z", 1.0, 0.01);
        assert_eq!(
            distance_row(&obs, &c, &idx, 1.0),
            Err(EquationError::MissingCoordinates("Z".into()))
        );
    }
}
