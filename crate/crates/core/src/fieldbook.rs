//! Field-book ingestion and compilation into mean reduced observations.
//!
//! The text format is line oriented; `#` starts a comment.
//!
//! ```text
//! SIGMA DIST 0.003 2      # constant part (m) and ppm part of distance sigma
//! SIGMA ANGLE 5           # angle sigma in arc-seconds
//! STN A
//! OBS Q 0 00 00 152.3170 90 00 00
//! OBS P 87 14 30 98.412
//! OBS B 181 30 00
//! ```
//!
//! An `OBS` record carries a target, a D-M-S direction and either nothing
//! else, a horizontal distance, or a slope distance followed by a D-M-S
//! zenith angle.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::{self, ARCSEC_PER_RAD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldBookError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Unit { line: usize, message: String },
    #[error("setup at station {station} has no usable rounds")]
    EmptySetup { station: String },
    #[error("reduced distance from {at} to {target} is not positive ({value} m)")]
    NonpositiveDistance { at: String, target: String, value: f64 },
    #[error("rounds from {at} to {target} cancel out; no mean direction exists")]
    InconsistentRounds { at: String, target: String },
    #[error("field book contains no observations")]
    Empty,
    #[error("duplicate observation {0} in dataset")]
    DuplicateObservation(String),
    #[error("invalid dataset: {0}")]
    InvalidDataSet(String),
    #[error("dataset json: {0}")]
    Json(String),
}

type Result<T> = std::result::Result<T, FieldBookError>;

/// One pointing of the instrument at a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub target_id: String,
    /// Horizontal circle reading, radians in `[0, 2π)`.
    pub direction: f64,
    pub slope_distance: Option<f64>,
    /// Zenith angle, radians in `(0, π)`.
    pub zenith: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationSetup {
    pub station_id: String,
    pub rounds: Vec<Round>,
}

/// Sigma values read from `SIGMA` header records.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SigmaOverrides {
    pub distance_const_m: Option<f64>,
    pub distance_ppm: Option<f64>,
    pub angle_arcsec: Option<f64>,
}

impl SigmaOverrides {
    fn is_empty(&self) -> bool {
        self.distance_const_m.is_none() && self.distance_ppm.is_none() && self.angle_arcsec.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldBook {
    pub setups: Vec<StationSetup>,
    pub sigma: SigmaOverrides,
}

/// A-priori precision model for compiled observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPolicy {
    pub distance_const_m: f64,
    pub distance_ppm: f64,
    pub angle_arcsec: f64,
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        Self {
            distance_const_m: 0.003,
            distance_ppm: 2.0,
            angle_arcsec: 5.0,
        }
    }
}

impl SigmaPolicy {
    /// Applies the overrides present in `o` on top of `self`.
    pub fn with_overrides(mut self, o: &SigmaOverrides) -> Self {
        if let Some(v) = o.distance_const_m {
            self.distance_const_m = v;
        }
        if let Some(v) = o.distance_ppm {
            self.distance_ppm = v;
        }
        if let Some(v) = o.angle_arcsec {
            self.angle_arcsec = v;
        }
        self
    }

    /// Single-round sigma of a horizontal distance of length `l` metres.
    pub fn distance_sigma(&self, l: f64) -> f64 {
        self.distance_const_m + self.distance_ppm * 1e-6 * l
    }

    /// Single-round sigma of an angle, radians.
    pub fn angle_sigma(&self) -> f64 {
        self.angle_arcsec / ARCSEC_PER_RAD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    Distance,
    Angle,
}

impl fmt::Display for ObservationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            ObservationKind::Distance => "distance",
            ObservationKind::Angle => "angle",
        })
    }
}

/// A mean reduced observation.
///
/// For an angle, `at` is the instrument station, `from_target` the backsight
/// and `to_target` the foresight; the value is the clockwise angle from
/// backsight to foresight. For a distance, `from_target` is the far station.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledObservation {
    pub kind: ObservationKind,
    pub at: String,
    pub from_target: String,
    pub to_target: Option<String>,
    /// Metres for distances, radians for angles.
    pub value: f64,
    pub sigma: f64,
}

impl CompiledObservation {
    pub fn distance(at: &str, to: &str, value: f64, sigma: f64) -> Self {
        Self {
            kind: ObservationKind::Distance,
            at: at.to_owned(),
            from_target: to.to_owned(),
            to_target: None,
            value,
            sigma,
        }
    }

    pub fn angle(backsight: &str, at: &str, foresight: &str, value: f64, sigma: f64) -> Self {
        Self {
            kind: ObservationKind::Angle,
            at: at.to_owned(),
            from_target: backsight.to_owned(),
            to_target: Some(foresight.to_owned()),
            value,
            sigma,
        }
    }

    /// Short identifier: `A-B` for a distance, `B-A-C` for the angle at A.
    pub fn tag(&self) -> String {
        match (&self.kind, &self.to_target) {
            (ObservationKind::Angle, Some(to)) => format!("{}-{}-{}", self.from_target, self.at, to),
            _ => format!("{}-{}", self.at, self.from_target),
        }
    }

    fn key(&self) -> (ObservationKind, &str, &str, Option<&str>) {
        (self.kind, &self.at, &self.from_target, self.to_target.as_deref())
    }

    /// Stations this observation references, in `at`, `from`, `to` order.
    pub fn stations(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.at.as_str())
            .chain(std::iter::once(self.from_target.as_str()))
            .chain(self.to_target.as_deref())
    }
}

/// The compiled observation list that feeds the solver.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataSet {
    observations: Vec<CompiledObservation>,
    /// Station ids in order of first reference.
    stations: Vec<String>,
}

impl DataSet {
    /// Builds a dataset, checking the observation invariants.
    pub fn new(observations: Vec<CompiledObservation>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut stations = Vec::new();
        let mut station_set = BTreeSet::new();
        for obs in &observations {
            validate_observation(obs)?;
            if !seen.insert(obs.key()) {
                return Err(FieldBookError::DuplicateObservation(obs.tag()));
            }
            for s in obs.stations() {
                if station_set.insert(s.to_owned()) {
                    stations.push(s.to_owned());
                }
            }
        }
        Ok(Self { observations, stations })
    }

    pub fn observations(&self) -> &[CompiledObservation] {
        &self.observations
    }

    pub fn stations(&self) -> &[String] {
        &self.stations
    }

    pub fn contains_station(&self, id: &str) -> bool {
        self.stations.iter().any(|s| s == id)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn count(&self, kind: ObservationKind) -> usize {
        self.observations.iter().filter(|o| o.kind == kind).count()
    }

    /// Any distance observed between `a` and `b`, from either end.
    pub fn distance_between(&self, a: &str, b: &str) -> Option<&CompiledObservation> {
        self.observations.iter().find(|o| {
            o.kind == ObservationKind::Distance
                && ((o.at == a && o.from_target == b) || (o.at == b && o.from_target == a))
        })
    }

    /// Serializes to the JSON wire form: angles in decimal degrees.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<ObservationRecord> = self.observations.iter().map(ObservationRecord::from).collect();
        serde_json::to_value(rows).expect("observation records serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let rows: Vec<ObservationRecord> =
            serde_json::from_value(value.clone()).map_err(|e| FieldBookError::Json(e.to_string()))?;
        Self::new(rows.into_iter().map(CompiledObservation::from).collect())
    }

    /// Re-expresses the dataset as a one-round-per-target field book whose
    /// compilation reproduces the same observation values.
    ///
    /// Fails when the angles at a station do not form a single chain of
    /// consecutive targets, which compilation always produces.
    pub fn to_fieldbook(&self) -> Result<FieldBook> {
        let mut setups = Vec::new();
        let mut occupied: Vec<&str> = Vec::new();
        for obs in &self.observations {
            if !occupied.contains(&obs.at.as_str()) {
                occupied.push(&obs.at);
            }
        }
        for at in occupied {
            let angles: Vec<&CompiledObservation> = self
                .observations
                .iter()
                .filter(|o| o.at == at && o.kind == ObservationKind::Angle)
                .collect();
            let distances: Vec<&CompiledObservation> = self
                .observations
                .iter()
                .filter(|o| o.at == at && o.kind == ObservationKind::Distance)
                .collect();

            let mut chain: Vec<(String, f64)> = Vec::new();
            if let Some(first) = angles.first() {
                chain.push((first.from_target.clone(), 0.0));
                let mut remaining: Vec<&CompiledObservation> = angles.clone();
                while !remaining.is_empty() {
                    let (last, dir) = chain.last().cloned().expect("chain seeded");
                    let pos = remaining
                        .iter()
                        .position(|o| o.from_target == last)
                        .ok_or_else(|| FieldBookError::InvalidDataSet(format!("angles at {at} do not form a chain")))?;
                    let o = remaining.remove(pos);
                    let to = o.to_target.clone().expect("angle has foresight");
                    if chain.iter().any(|(t, _)| *t == to) {
                        return Err(FieldBookError::InvalidDataSet(format!(
                            "angles at {at} close on themselves"
                        )));
                    }
                    chain.push((to, angle::normalize_positive(dir + o.value)));
                }
            }
            for d in &distances {
                if !chain.iter().any(|(t, _)| *t == d.from_target) {
                    if chain.is_empty() && distances.len() == 1 {
                        chain.push((d.from_target.clone(), 0.0));
                    } else {
                        return Err(FieldBookError::InvalidDataSet(format!(
                            "distance {} has no direction in the angle chain at {at}",
                            d.tag()
                        )));
                    }
                }
            }
            let rounds = chain
                .into_iter()
                .map(|(target, direction)| {
                    let slope = distances.iter().find(|d| d.from_target == target).map(|d| d.value);
                    Round {
                        target_id: target,
                        direction,
                        slope_distance: slope,
                        zenith: None,
                    }
                })
                .collect();
            setups.push(StationSetup {
                station_id: at.to_owned(),
                rounds,
            });
        }
        Ok(FieldBook {
            setups,
            sigma: SigmaOverrides::default(),
        })
    }
}

fn validate_observation(obs: &CompiledObservation) -> Result<()> {
    let bad = |m: &str| Err(FieldBookError::InvalidDataSet(format!("{}: {m}", obs.tag())));
    if obs.at.is_empty() || obs.from_target.is_empty() {
        return bad("empty station id");
    }
    if !(obs.sigma.is_finite() && obs.sigma > 0.0) {
        return bad("sigma must be positive");
    }
    match obs.kind {
        ObservationKind::Distance => {
            if obs.to_target.is_some() {
                return bad("distance cannot have a foresight");
            }
            if !(obs.value.is_finite() && obs.value > 0.0) {
                return bad("distance must be positive");
            }
        }
        ObservationKind::Angle => {
            if obs.to_target.is_none() {
                return bad("angle needs a foresight");
            }
            if !(obs.value.is_finite() && (0.0..std::f64::consts::TAU).contains(&obs.value)) {
                return bad("angle outside [0, 2π)");
            }
        }
    }
    Ok(())
}

/// JSON row of a compiled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub kind: ObservationKind,
    pub at: String,
    pub from: String,
    pub to: Option<String>,
    pub value: f64,
    pub sigma: f64,
}

impl From<&CompiledObservation> for ObservationRecord {
    fn from(o: &CompiledObservation) -> Self {
        let (value, sigma) = match o.kind {
            ObservationKind::Angle => (o.value.to_degrees(), o.sigma.to_degrees()),
            ObservationKind::Distance => (o.value, o.sigma),
        };
        Self {
            kind: o.kind,
            at: o.at.clone(),
            from: o.from_target.clone(),
            to: o.to_target.clone(),
            value,
            sigma,
        }
    }
}

impl From<ObservationRecord> for CompiledObservation {
    fn from(r: ObservationRecord) -> Self {
        let (value, sigma) = match r.kind {
            ObservationKind::Angle => (angle::normalize_positive(r.value.to_radians()), r.sigma.to_radians()),
            ObservationKind::Distance => (r.value, r.sigma),
        };
        Self {
            kind: r.kind,
            at: r.at,
            from_target: r.from,
            to_target: r.to,
            value,
            sigma,
        }
    }
}

// ---------------------------------------------------------------------------
// parsing

fn parse_err(line: usize, message: impl Into<String>) -> FieldBookError {
    FieldBookError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_number(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("{what}: '{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what}: '{tok}' is not finite")));
    }
    Ok(v)
}

fn parse_dms(toks: &[&str], line: usize, what: &str) -> Result<f64> {
    let d = parse_number(toks[0], line, what)?;
    let m = parse_number(toks[1], line, what)?;
    let s = parse_number(toks[2], line, what)?;
    if !(0.0..60.0).contains(&m) || !(0.0..60.0).contains(&s) {
        return Err(parse_err(
            line,
            format!("{what}: minutes and seconds must lie in [0, 60)"),
        ));
    }
    Ok(angle::dms_to_rad(d, m, s))
}

/// Parses field-book text.
pub fn parse_fieldbook(text: &str) -> Result<FieldBook> {
    let mut book = FieldBook::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match toks[0].to_ascii_uppercase().as_str() {
            "STN" => {
                if toks.len() != 2 {
                    return Err(parse_err(line, "STN takes exactly one station id"));
                }
                book.setups.push(StationSetup {
                    station_id: toks[1].to_owned(),
                    rounds: Vec::new(),
                });
            }
            "OBS" => {
                let setup = book
                    .setups
                    .last_mut()
                    .ok_or_else(|| parse_err(line, "OBS before any STN record"))?;
                if toks.len() < 2 {
                    return Err(parse_err(line, "OBS needs a target id"));
                }
                let target = toks[1].to_owned();
                if target == setup.station_id {
                    return Err(parse_err(line, "station cannot observe itself"));
                }
                let nums = &toks[2..];
                let (slope, zenith) = match nums.len() {
                    3 => (None, None),
                    4 => (Some(parse_number(nums[3], line, "distance")?), None),
                    7 => {
                        let s = parse_number(nums[3], line, "slope distance")?;
                        let z = parse_dms(&nums[4..7], line, "zenith")?;
                        if !(z > 0.0 && z < PI) {
                            return Err(FieldBookError::Unit {
                                line,
                                message: format!("zenith {:.6}° outside (0°, 180°)", z.to_degrees()),
                            });
                        }
                        (Some(s), Some(z))
                    }
                    _ => {
                        return Err(parse_err(
                            line,
                            "OBS expects <target> <D M S> [<distance> | <slope> <D M S zenith>]",
                        ))
                    }
                };
                if let Some(s) = slope {
                    if s <= 0.0 {
                        return Err(parse_err(line, "distance must be positive"));
                    }
                }
                let direction = angle::normalize_positive(parse_dms(&nums[..3], line, "direction")?);
                setup.rounds.push(Round {
                    target_id: target,
                    direction,
                    slope_distance: slope,
                    zenith,
                });
            }
            "SIGMA" => {
                if !book.setups.is_empty() {
                    return Err(parse_err(line, "SIGMA records must precede the first STN"));
                }
                match (toks.get(1).map(|t| t.to_ascii_uppercase()).as_deref(), toks.len()) {
                    (Some("DIST"), 4) => {
                        let c = parse_number(toks[2], line, "distance sigma")?;
                        let ppm = parse_number(toks[3], line, "distance ppm")?;
                        if c <= 0.0 || ppm < 0.0 {
                            return Err(parse_err(line, "distance sigma must be positive"));
                        }
                        book.sigma.distance_const_m = Some(c);
                        book.sigma.distance_ppm = Some(ppm);
                    }
                    (Some("ANGLE"), 3) => {
                        let a = parse_number(toks[2], line, "angle sigma")?;
                        if a <= 0.0 {
                            return Err(parse_err(line, "angle sigma must be positive"));
                        }
                        book.sigma.angle_arcsec = Some(a);
                    }
                    _ => return Err(parse_err(line, "expected SIGMA DIST <m> <ppm> or SIGMA ANGLE <arcsec>")),
                }
            }
            other => return Err(parse_err(line, format!("unknown record '{other}'"))),
        }
    }
    Ok(book)
}

/// Writes `angle` (radians, non-negative) as `D M S` with `decimals` digits
/// on the seconds, carrying rounding into minutes and degrees.
pub fn format_dms(angle: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let units = (angle.to_degrees() * 3600.0 * scale).round() as u64;
    let per_min = (60.0 * scale) as u64;
    let per_deg = 60 * per_min;
    let d = units / per_deg;
    let m = (units % per_deg) / per_min;
    let s = (units % per_min) as f64 / scale;
    let width = if decimals > 0 { decimals + 3 } else { 2 };
    format!("{d} {m:02} {s:0width$.decimals$}")
}

impl FieldBook {
    /// Serializes back to the line format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.sigma.is_empty() {
            if let (Some(c), Some(p)) = (self.sigma.distance_const_m, self.sigma.distance_ppm) {
                let _ = writeln!(out, "SIGMA DIST {c} {p}");
            }
            if let Some(a) = self.sigma.angle_arcsec {
                let _ = writeln!(out, "SIGMA ANGLE {a}");
            }
        }
        for setup in &self.setups {
            let _ = writeln!(out, "STN {}", setup.station_id);
            for r in &setup.rounds {
                let _ = write!(out, "OBS {} {}", r.target_id, format_dms(r.direction, 9));
                match (r.slope_distance, r.zenith) {
                    (Some(s), Some(z)) => {
                        let _ = write!(out, " {s} {}", format_dms(z, 9));
                    }
                    (Some(s), None) => {
                        let _ = write!(out, " {s}");
                    }
                    _ => {}
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn round_count(&self) -> usize {
        self.setups.iter().map(|s| s.rounds.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// compilation

struct TargetGroup<'a> {
    target: &'a str,
    directions: Vec<f64>,
    distances: Vec<f64>,
}

/// Observation being assembled, with the number of rounds behind it.
struct Pending {
    obs: CompiledObservation,
    rounds: u32,
}

/// Compiles a field book into mean reduced observations.
///
/// Angles come first (setups in file order), then distances. Observations
/// repeated across setups of the same station are meaned by round count.
pub fn compile(book: &FieldBook, policy: &SigmaPolicy) -> Result<DataSet> {
    if book.round_count() == 0 {
        return Err(FieldBookError::Empty);
    }
    let mut angles: Vec<Pending> = Vec::new();
    let mut distances: Vec<Pending> = Vec::new();

    for setup in &book.setups {
        let mut groups: Vec<TargetGroup> = Vec::new();
        for r in &setup.rounds {
            let idx = match groups.iter().position(|g| g.target == r.target_id) {
                Some(i) => i,
                None => {
                    groups.push(TargetGroup {
                        target: &r.target_id,
                        directions: Vec::new(),
                        distances: Vec::new(),
                    });
                    groups.len() - 1
                }
            };
            let g = &mut groups[idx];
            g.directions.push(r.direction);
            if let Some(s) = r.slope_distance {
                let horizontal = match r.zenith {
                    Some(z) => s * z.sin(),
                    None => s,
                };
                g.distances.push(horizontal);
            }
        }
        if groups.is_empty() {
            return Err(FieldBookError::EmptySetup {
                station: setup.station_id.clone(),
            });
        }

        let mut means = Vec::with_capacity(groups.len());
        for g in &groups {
            let dir = angle::circular_mean(&g.directions).ok_or_else(|| FieldBookError::InconsistentRounds {
                at: setup.station_id.clone(),
                target: g.target.to_owned(),
            })?;
            means.push((dir, g.directions.len() as u32));
            if !g.distances.is_empty() {
                let k = g.distances.len();
                let l = g.distances.iter().sum::<f64>() / k as f64;
                if l.is_nan() || l <= 0.0 {
                    return Err(FieldBookError::NonpositiveDistance {
                        at: setup.station_id.clone(),
                        target: g.target.to_owned(),
                        value: l,
                    });
                }
                merge(
                    &mut distances,
                    CompiledObservation::distance(&setup.station_id, g.target, l, 1.0),
                    k as u32,
                );
            }
        }
        for (pair, dirs) in groups.windows(2).zip(means.windows(2)) {
            let value = angle::normalize_positive(dirs[1].0 - dirs[0].0);
            merge(
                &mut angles,
                CompiledObservation::angle(pair[0].target, &setup.station_id, pair[1].target, value, 1.0),
                dirs[0].1.min(dirs[1].1),
            );
        }
    }

    let observations = angles
        .into_iter()
        .chain(distances)
        .map(|p| {
            let k = (p.rounds as f64).sqrt();
            let mut obs = p.obs;
            obs.sigma = match obs.kind {
                ObservationKind::Angle => policy.angle_sigma() / k,
                ObservationKind::Distance => policy.distance_sigma(obs.value) / k,
            };
            obs
        })
        .collect();
    DataSet::new(observations)
}

fn merge(list: &mut Vec<Pending>, obs: CompiledObservation, rounds: u32) {
    match list.iter_mut().find(|p| p.obs.key() == obs.key()) {
        Some(existing) => {
            let (w0, w1) = (existing.rounds as f64, rounds as f64);
            existing.obs.value = match obs.kind {
                ObservationKind::Distance => (w0 * existing.obs.value + w1 * obs.value) / (w0 + w1),
                // a vanishing resultant cannot happen for near-equal angles; fall back to the first
                ObservationKind::Angle => angle::circular_mean_weighted([(existing.obs.value, w0), (obs.value, w1)])
                    .unwrap_or(existing.obs.value),
            };
            existing.rounds += rounds;
        }
        None => list.push(Pending { obs, rounds }),
    }
}

/// Zenith for a horizontal sight, used by fixture writers.
pub const HORIZONTAL_ZENITH: f64 = FRAC_PI_2;
