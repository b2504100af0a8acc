//! Synthetic networks generated from known truth coordinates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::angle;
use crate::control::{ControlDatabase, ControlPoint, StationClassification};
use crate::equations::{self, CoordMap, Coordinates};
use crate::fieldbook::{
    self, CompiledObservation, DataSet, FieldBook, ObservationKind, Round, SigmaPolicy, StationSetup,
};

/// One planned instrument setup: targets in pointing order, each flagged
/// with whether a distance is measured.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupPlan {
    pub station: String,
    pub targets: Vec<(String, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticNetwork {
    pub datum: String,
    pub truth: CoordMap,
    pub fixed: Vec<String>,
    pub heights: BTreeMap<String, f64>,
    pub setups: Vec<SetupPlan>,
}

fn plan(station: &str, targets: &[(&str, bool)]) -> SetupPlan {
    SetupPlan {
        station: station.to_owned(),
        targets: targets.iter().map(|&(t, d)| (t.to_owned(), d)).collect(),
    }
}

fn coords(list: &[(&str, f64, f64)]) -> CoordMap {
    list.iter()
        .map(|&(id, e, n)| (id.to_owned(), Coordinates::new(e, n)))
        .collect()
}

impl SyntheticNetwork {
    /// Traverse with controls P, Q, R, S and unknowns A, B, C, D: eight
    /// angles and eight distances.
    pub fn traverse() -> Self {
        Self {
            datum: "LOCAL".into(),
            truth: coords(&[
                ("P", 1000.0, 1000.0),
                ("Q", 1000.0, 1200.0),
                ("A", 1150.0, 1080.0),
                ("B", 1300.0, 1000.0),
                ("C", 1450.0, 1100.0),
                ("D", 1480.0, 950.0),
                ("R", 1600.0, 900.0),
                ("S", 1550.0, 800.0),
            ]),
            fixed: ["P", "Q", "R", "S"].map(String::from).into(),
            heights: BTreeMap::new(),
            setups: vec![
                plan("A", &[("Q", true), ("P", true), ("B", true)]),
                plan("B", &[("A", false), ("C", true), ("D", true)]),
                plan("C", &[("B", false), ("D", true)]),
                plan("D", &[("C", false), ("R", true), ("S", true), ("B", false)]),
            ],
        }
    }

    /// Position carried from X, closing at Y, through A, B, C and D.
    pub fn braced() -> Self {
        Self {
            datum: "LOCAL".into(),
            truth: coords(&[
                ("X", 1000.0, 1000.0),
                ("A", 1160.0, 1190.0),
                ("B", 1310.0, 1020.0),
                ("C", 1475.0, 1215.0),
                ("Y", 1620.0, 990.0),
                ("D", 1790.0, 1160.0),
            ]),
            fixed: ["X", "Y"].map(String::from).into(),
            heights: BTreeMap::new(),
            setups: vec![
                plan("X", &[("A", true), ("B", true), ("Y", true)]),
                plan("A", &[("X", false), ("B", true), ("C", true)]),
                plan("B", &[("A", false), ("X", false), ("Y", true), ("C", true)]),
                plan("C", &[("B", false), ("A", false), ("Y", true), ("D", true)]),
                plan("Y", &[("B", false), ("X", false), ("C", false), ("D", true)]),
                plan("D", &[("Y", false), ("C", false)]),
            ],
        }
    }

    /// Closed square A-B-C-D, 100 m sides, A fixed with B as orientation.
    pub fn square() -> Self {
        Self {
            datum: "LOCAL".into(),
            truth: coords(&[
                ("A", 0.0, 0.0),
                ("B", 100.0, 0.0),
                ("C", 100.0, 100.0),
                ("D", 0.0, 100.0),
            ]),
            fixed: ["A", "B"].map(String::from).into(),
            heights: BTreeMap::new(),
            setups: vec![
                plan("A", &[("D", false), ("B", true)]),
                plan("B", &[("A", false), ("C", true)]),
                plan("C", &[("B", false), ("D", true)]),
                plan("D", &[("C", false), ("A", true)]),
            ],
        }
    }

    pub fn fixed_coords(&self) -> CoordMap {
        self.fixed.iter().map(|id| (id.clone(), self.truth[id])).collect()
    }

    pub fn classification(&self) -> StationClassification {
        StationClassification {
            fixed: self.fixed.iter().cloned().collect(),
            free: self.truth.keys().filter(|k| !self.fixed.contains(k)).cloned().collect(),
        }
    }

    pub fn controls(&self) -> ControlDatabase {
        ControlDatabase::new(self.fixed.iter().map(|id| ControlPoint {
            id: id.clone(),
            datum: self.datum.clone(),
            easting: self.truth[id].easting,
            northing: self.truth[id].northing,
            height: self.heights.get(id).copied(),
        }))
        .expect("fixture controls are consistent")
    }

    pub fn controls_csv(&self) -> String {
        let mut out = String::from("id,datum,easting,northing,height\n");
        for id in &self.fixed {
            let c = self.truth[id];
            let h = self.heights.get(id).map(|h| h.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{id},{},{},{},{h}", self.datum, c.easting, c.northing);
        }
        out
    }

    /// Error-free field book, one round per target, horizontal sights.
    ///
    /// Each setup's circle is oriented so the first target reads zero.
    pub fn fieldbook(&self) -> FieldBook {
        let setups = self
            .setups
            .iter()
            .map(|s| {
                let at = self.truth[&s.station];
                let zero = equations::bearing(at, self.truth[&s.targets[0].0]).expect("distinct stations");
                StationSetup {
                    station_id: s.station.clone(),
                    rounds: s
                        .targets
                        .iter()
                        .map(|(t, with_distance)| {
                            let to = self.truth[t];
                            let b = equations::bearing(at, to).expect("distinct stations");
                            Round {
                                target_id: t.clone(),
                                direction: angle::normalize_positive(b - zero),
                                slope_distance: with_distance.then(|| equations::distance(at, to)),
                                zenith: None,
                            }
                        })
                        .collect(),
                }
            })
            .collect();
        FieldBook {
            setups,
            sigma: Default::default(),
        }
    }

    /// Exact compiled observations.
    pub fn dataset(&self, policy: &SigmaPolicy) -> DataSet {
        fieldbook::compile(&self.fieldbook(), policy).expect("fixture field book compiles")
    }

    /// Compiled observations with Gaussian noise at each observation's sigma.
    pub fn noisy_dataset(&self, policy: &SigmaPolicy, seed: u64) -> DataSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perturb(&self.dataset(policy), &mut rng)
    }
}

/// Adds independent `N(0, σᵢ²)` noise to every observation.
pub fn perturb<R: rand::Rng + ?Sized>(dataset: &DataSet, rng: &mut R) -> DataSet {
    let obs: Vec<CompiledObservation> = dataset
        .observations()
        .iter()
        .map(|o| {
            let mut o = o.clone();
            let e = Normal::new(0.0, o.sigma).expect("positive sigma").sample(rng);
            o.value = match o.kind {
                ObservationKind::Angle => angle::normalize_positive(o.value + e),
                ObservationKind::Distance => o.value + e,
            };
            o
        })
        .collect();
    DataSet::new(obs).expect("perturbed dataset keeps its structure")
}

/// Shifts every station in `coords` by an independent offset of `magnitude`
/// metres in a seeded random direction.
pub fn perturb_coordinates(coords: &CoordMap, skip: &[String], magnitude: f64, seed: u64) -> CoordMap {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords
        .iter()
        .map(|(id, c)| {
            if skip.contains(id) {
                return (id.clone(), *c);
            }
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (id.clone(), c.polar(t, magnitude))
        })
        .collect()
}
