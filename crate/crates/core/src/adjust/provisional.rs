//! Provisional coordinates propagated outward from the fixed stations.
//!
//! Each pass places every station that can be reached from the stations
//! known at the start of the pass:
//!
//! - polar: a known station with a known bearing to the new one (from
//!   coordinates, or carried through observed angles) and a distance;
//! - two-distance intersection from two known stations, with the mirror
//!   ambiguity settled by the angles observed around the new station.
//!
//! Polar placement wins when both apply.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::AdjustError;
use crate::angle;
use crate::equations::{self, CoordMap, Coordinates};
use crate::fieldbook::{CompiledObservation, DataSet, ObservationKind};

struct Propagation<'a> {
    dataset: &'a DataSet,
    known: CoordMap,
    /// Bearings carried through angles, keyed `(from, to)`.
    carried: HashMap<(String, String), f64>,
}

impl<'a> Propagation<'a> {
    fn bearing(&self, from: &str, to: &str) -> Option<f64> {
        if let (Some(a), Some(b)) = (self.known.get(from), self.known.get(to)) {
            return equations::bearing(*a, *b);
        }
        if let Some(&t) = self.carried.get(&(from.to_owned(), to.to_owned())) {
            return Some(t);
        }
        self.carried
            .get(&(to.to_owned(), from.to_owned()))
            .map(|&t| angle::normalize_positive(t + PI))
    }

    fn angles(&self) -> impl Iterator<Item = (&'a CompiledObservation, &'a str)> {
        self.dataset
            .observations()
            .iter()
            .filter(|o| o.kind == ObservationKind::Angle)
            .filter_map(|o| o.to_target.as_deref().map(|c| (o, c)))
    }

    /// Carries bearings through observed angles until nothing changes.
    fn carry_bearings(&mut self) {
        loop {
            let mut added = Vec::new();
            for (obs, fore) in self.angles() {
                let at = obs.at.as_str();
                let back = obs.from_target.as_str();
                match (self.bearing(at, back), self.bearing(at, fore)) {
                    (Some(tb), None) => added.push((at, fore, tb + obs.value)),
                    (None, Some(tf)) => added.push((at, back, tf - obs.value)),
                    _ => {}
                }
            }
            if added.is_empty() {
                return;
            }
            for (from, to, t) in added {
                self.carried
                    .entry((from.to_owned(), to.to_owned()))
                    .or_insert_with(|| angle::normalize_positive(t));
            }
        }
    }

    fn distances(&self) -> impl Iterator<Item = &'a CompiledObservation> {
        self.dataset
            .observations()
            .iter()
            .filter(|o| o.kind == ObservationKind::Distance)
    }

    fn polar_candidate(&self, station: &str) -> Option<Coordinates> {
        for d in self.distances() {
            let other = if d.at == station {
                &d.from_target
            } else if d.from_target == station {
                &d.at
            } else {
                continue;
            };
            if let (Some(base), Some(t)) = (self.known.get(other.as_str()), self.bearing(other, station)) {
                return Some(base.polar(t, d.value));
            }
        }
        None
    }

    fn intersection_candidate(&self, station: &str) -> Option<Coordinates> {
        let legs: Vec<(&str, f64)> = self
            .distances()
            .filter_map(|d| {
                let other = if d.at == station {
                    d.from_target.as_str()
                } else if d.from_target == station {
                    d.at.as_str()
                } else {
                    return None;
                };
                self.known.contains_key(other).then_some((other, d.value))
            })
            .collect();
        for (i, &(k1, d1)) in legs.iter().enumerate() {
            for &(k2, d2) in &legs[i + 1..] {
                if k1 == k2 {
                    continue;
                }
                let Some(pair) = circle_intersections(self.known[k1], d1, self.known[k2], d2) else {
                    continue;
                };
                if let Some(best) = self.pick_by_angles(station, pair) {
                    return Some(best);
                }
            }
        }
        None
    }

    /// Chooses between mirror solutions using angles whose three stations
    /// would all be known.
    fn pick_by_angles(&self, station: &str, pair: [Coordinates; 2]) -> Option<Coordinates> {
        let mut scores = [0.0f64; 2];
        let mut informative = false;
        for (obs, fore) in self.angles() {
            let ids = [obs.at.as_str(), obs.from_target.as_str(), fore];
            if !ids.contains(&station) || !ids.iter().all(|s| *s == station || self.known.contains_key(*s)) {
                continue;
            }
            informative = true;
            for (k, cand) in pair.iter().enumerate() {
                let mut trial = CoordMap::new();
                for s in ids {
                    let c = if s == station { *cand } else { self.known[s] };
                    trial.insert(s.to_owned(), c);
                }
                match equations::computed_value(obs, &trial) {
                    Ok(v) => scores[k] += angle::normalize_signed(obs.value - v).abs(),
                    Err(_) => scores[k] = f64::INFINITY,
                }
            }
        }
        if !informative || scores[0] == scores[1] {
            return None;
        }
        Some(if scores[0] < scores[1] { pair[0] } else { pair[1] })
    }
}

/// Both intersections of two circles; tangent or slightly separated circles
/// collapse to the single closest point.
fn circle_intersections(c1: Coordinates, r1: f64, c2: Coordinates, r2: f64) -> Option<[Coordinates; 2]> {
    let d = equations::distance(c1, c2);
    if d == 0.0 {
        return None;
    }
    let a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let h2 = r1 * r1 - a * a;
    // reject geometry that misses by more than a part in a thousand
    if h2 < -(1e-3 * r1.max(r2)).powi(2) {
        return None;
    }
    let h = h2.max(0.0).sqrt();
    let ue = (c2.easting - c1.easting) / d;
    let un = (c2.northing - c1.northing) / d;
    let mid = Coordinates::new(c1.easting + a * ue, c1.northing + a * un);
    Some([
        Coordinates::new(mid.easting + h * un, mid.northing - h * ue),
        Coordinates::new(mid.easting - h * un, mid.northing + h * ue),
    ])
}

/// Provisional coordinates for every dataset station.
///
/// Stations present in `fixed` are passed through unchanged.
pub fn provisional_coordinates(dataset: &DataSet, fixed: &CoordMap) -> Result<CoordMap, AdjustError> {
    let known: CoordMap = dataset
        .stations()
        .iter()
        .filter_map(|s| fixed.get(s).map(|c| (s.clone(), *c)))
        .collect();
    let mut prop = Propagation {
        dataset,
        known,
        carried: HashMap::new(),
    };
    loop {
        prop.carry_bearings();
        let pending: Vec<&String> = dataset
            .stations()
            .iter()
            .filter(|s| !prop.known.contains_key(s.as_str()))
            .collect();
        if pending.is_empty() {
            break;
        }
        let mut placed: Vec<(String, Coordinates)> = pending
            .iter()
            .filter_map(|s| prop.polar_candidate(s).map(|c| ((*s).clone(), c)))
            .collect();
        if placed.is_empty() {
            placed = pending
                .iter()
                .filter_map(|s| prop.intersection_candidate(s).map(|c| ((*s).clone(), c)))
                .collect();
        }
        if placed.is_empty() {
            let mut missing: Vec<String> = pending.into_iter().cloned().collect();
            missing.sort();
            return Err(AdjustError::UnreachableStation(missing));
        }
        prop.known.extend(placed);
    }
    Ok(prop.known)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(e: f64, n: f64) -> Coordinates {
        Coordinates::new(e, n)
    }

    #[test]
    fn single_polar_leg() {
        let ds = DataSet::new(vec![
            CompiledObservation::angle("Q", "P", "X", 90f64.to_radians(), 1e-5),
            CompiledObservation::distance("P", "X", 100.0, 0.003),
        ])
        .unwrap();
        let fixed: CoordMap = [("P".to_owned(), c(500.0, 500.0)), ("Q".to_owned(), c(500.0, 900.0))].into();
        let out = provisional_coordinates(&ds, &fixed).unwrap();
        let x = out["X"];
        assert!((x.easting - 600.0).abs() < 1e-9 && (x.northing - 500.0).abs() < 1e-9);
    }

    #[test]
    fn all_fixed_pass_through() {
        let ds = DataSet::new(vec![CompiledObservation::distance("P", "Q", 10.0, 0.003)]).unwrap();
        let fixed: CoordMap = [
            ("P".to_owned(), c(0.0, 0.0)),
            ("Q".to_owned(), c(0.0, 10.0)),
            ("Z".to_owned(), c(5.0, 5.0)),
        ]
        .into();
        let out = provisional_coordinates(&ds, &fixed).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out["P"], fixed["P"]);
        assert_eq!(out["Q"], fixed["Q"]);
    }

    #[test]
    fn unreachable_reported() {
        let ds = DataSet::new(vec![
            CompiledObservation::distance("P", "A", 10.0, 0.003),
            CompiledObservation::distance("B", "C", 10.0, 0.003),
        ])
        .unwrap();
        let fixed: CoordMap = [("P".to_owned(), c(0.0, 0.0))].into();
        match provisional_coordinates(&ds, &fixed) {
            Err(AdjustError::UnreachableStation(s)) => assert_eq!(s, ["A", "B", "C"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn intersection_resolved_by_angle() {
        let p = c(0.0, 0.0);
        let q = c(0.0, 200.0);
        let truth = c(150.0, 80.0);
        let fixed: CoordMap = [("P".to_owned(), p), ("Q".to_owned(), q)].into();
        let mut all = fixed.clone();
        all.insert("A".into(), truth);
        let ang = CompiledObservation::angle("Q", "A", "P", 0.0, 1e-5);
        let value = equations::computed_value(&ang, &all).unwrap();
        let ds = DataSet::new(vec![
            CompiledObservation::angle("Q", "A", "P", value, 1e-5),
            CompiledObservation::distance("A", "Q", equations::distance(truth, q), 0.003),
            CompiledObservation::distance("A", "P", equations::distance(truth, p), 0.003),
        ])
        .unwrap();
        let out = provisional_coordinates(&ds, &fixed).unwrap();
        assert!(equations::distance(out["A"], truth) < 1e-9);
    }

    #[test]
    fn circles() {
        let [a, b] = circle_intersections(c(0.0, 0.0), 5.0, c(6.0, 0.0), 5.0).unwrap();
        assert!((a.easting - 3.0).abs() < 1e-12 && (a.northing.abs() - 4.0).abs() < 1e-12);
        assert!((a.northing + b.northing).abs() < 1e-12);
        assert!(circle_intersections(c(0.0, 0.0), 1.0, c(10.0, 0.0), 1.0).is_none());
    }
}
