//! Control register, fixed/free classification and datum listing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjust::{solve_weighted, AdjustError, AdjustmentResult};
use crate::equations::{CoordMap, Coordinates};
use crate::fieldbook::DataSet;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("control file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("conflicting rows for {id} in datum {datum}")]
    ConflictingDuplicate { id: String, datum: String },
    #[error("datum {0} is not in the control database")]
    UnknownDatum(String),
    #[error("no dataset station is a control point in datum {0}")]
    NoFixedStations(String),
    #[error("datums {from} and {to} share {common} points; at least 2 are needed")]
    InsufficientOverlap { from: String, to: String, common: usize },
    #[error("common points between {from} and {to} are coincident")]
    DegenerateGeometry { from: String, to: String },
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
}

type Result<T> = std::result::Result<T, ControlError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub id: String,
    pub datum: String,
    pub easting: f64,
    pub northing: f64,
    pub height: Option<f64>,
}

impl ControlPoint {
    pub fn coordinates(&self) -> Coordinates {
        Coordinates::new(self.easting, self.northing)
    }
}

/// Known points keyed by `(datum, id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlDatabase {
    points: BTreeMap<(String, String), ControlPoint>,
}

#[derive(Debug, Deserialize)]
struct ControlRow {
    id: String,
    datum: String,
    easting: f64,
    northing: f64,
    height: Option<f64>,
}

impl ControlDatabase {
    pub fn new<I: IntoIterator<Item = ControlPoint>>(points: I) -> Result<Self> {
        let mut db = Self::default();
        for p in points {
            db.insert(p)?;
        }
        Ok(db)
    }

    /// Adds a point; an identical repeat is ignored, a conflicting one fails.
    pub fn insert(&mut self, p: ControlPoint) -> Result<()> {
        if !(p.easting.is_finite() && p.northing.is_finite() && p.height.is_none_or(f64::is_finite)) {
            return Err(ControlError::Parse {
                line: 0,
                message: format!("non-finite coordinates for {}", p.id),
            });
        }
        let key = (p.datum.clone(), p.id.clone());
        match self.points.get(&key) {
            Some(existing) if *existing == p => Ok(()),
            Some(_) => Err(ControlError::ConflictingDuplicate {
                id: p.id,
                datum: p.datum,
            }),
            None => {
                self.points.insert(key, p);
                Ok(())
            }
        }
    }

    /// Reads CSV with header `id,datum,easting,northing,height`; height may be empty.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ControlError::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let expected = ["id", "datum", "easting", "northing", "height"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(ControlError::Parse {
                line: 1,
                message: format!("expected header {}", expected.join(",")),
            });
        }
        let mut db = Self::default();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ControlError::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let row: ControlRow = rec.deserialize(Some(&headers)).map_err(|e| ControlError::Parse {
                line,
                message: e.to_string(),
            })?;
            if row.id.is_empty() || row.datum.is_empty() {
                return Err(ControlError::Parse {
                    line,
                    message: "id and datum must be nonempty".into(),
                });
            }
            db.insert(ControlPoint {
                id: row.id,
                datum: row.datum,
                easting: row.easting,
                northing: row.northing,
                height: row.height,
            })
            .map_err(|e| match e {
                ControlError::Parse { message, .. } => ControlError::Parse { line, message },
                other => other,
            })?;
        }
        Ok(db)
    }

    pub fn datums(&self) -> BTreeSet<&str> {
        self.points.keys().map(|(d, _)| d.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn get(&self, datum: &str, id: &str) -> Option<&ControlPoint> {
        self.points.get(&(datum.to_owned(), id.to_owned()))
    }

    /// Points of one datum, ordered by id.
    pub fn in_datum<'a>(&'a self, datum: &'a str) -> impl Iterator<Item = &'a ControlPoint> + 'a {
        self.points
            .range((datum.to_owned(), String::new())..)
            .take_while(move |((d, _), _)| d == datum)
            .map(|(_, p)| p)
    }

    pub fn coordinates_in(&self, datum: &str) -> CoordMap {
        self.in_datum(datum).map(|p| (p.id.clone(), p.coordinates())).collect()
    }

    pub fn heights_in(&self, datum: &str) -> BTreeMap<String, f64> {
        self.in_datum(datum)
            .filter_map(|p| p.height.map(|h| (p.id.clone(), h)))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StationClassification {
    pub fixed: BTreeSet<String>,
    pub free: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub classification: StationClassification,
    /// Warning-level findings, e.g. [`ControlError::NoFixedStations`].
    pub warnings: Vec<String>,
}

/// Fixed = dataset stations ∩ control points of `datum`; the rest are free.
///
/// An unknown datum is an error unless the database is empty, in which case
/// every station is free and a warning is returned.
pub fn scan_stations(dataset: &DataSet, db: &ControlDatabase, datum: &str) -> Result<ScanOutcome> {
    if !db.is_empty() && !db.datums().contains(datum) {
        return Err(ControlError::UnknownDatum(datum.to_owned()));
    }
    let mut c = StationClassification::default();
    for s in dataset.stations() {
        if db.get(datum, s).is_some() {
            c.fixed.insert(s.clone());
        } else {
            c.free.insert(s.clone());
        }
    }
    let mut warnings = Vec::new();
    if c.fixed.is_empty() {
        warnings.push(ControlError::NoFixedStations(datum.to_owned()).to_string());
    }
    Ok(ScanOutcome {
        classification: c,
        warnings,
    })
}

/// Plane similarity `E' = tE + s(E cosα - N sinα)`, `N' = tN + s(E sinα + N cosα)`.
///
/// `rotation` is counter-clockwise in the (E, N) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translate_e: f64,
    pub translate_n: f64,
    pub rms_fit: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            translate_e: 0.0,
            translate_n: 0.0,
            rms_fit: 0.0,
        }
    }

    pub fn from_params(a: f64, b: f64, translate_e: f64, translate_n: f64) -> Self {
        Self {
            scale: a.hypot(b),
            rotation: b.atan2(a),
            translate_e,
            translate_n,
            rms_fit: 0.0,
        }
    }

    fn ab(&self) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (self.scale * c, self.scale * s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.scale.is_finite()
            && self.scale > 0.0
            && self.rotation.is_finite()
            && self.translate_e.is_finite()
            && self.translate_n.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ControlError::InvalidTransform(format!("{self:?}")))
        }
    }

    pub fn apply(&self, p: Coordinates) -> Coordinates {
        let (a, b) = self.ab();
        Coordinates::new(
            self.translate_e + a * p.easting - b * p.northing,
            self.translate_n + b * p.easting + a * p.northing,
        )
    }

    pub fn inverse(&self) -> Self {
        let s = 1.0 / self.scale;
        let r = -self.rotation;
        let (sn, cs) = r.sin_cos();
        let (a, b) = (s * cs, s * sn);
        Self {
            scale: s,
            rotation: r,
            translate_e: -(a * self.translate_e - b * self.translate_n),
            translate_n: -(b * self.translate_e + a * self.translate_n),
            rms_fit: self.rms_fit,
        }
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &Self) -> Self {
        let t = other.apply(Coordinates::new(self.translate_e, self.translate_n));
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation + other.rotation,
            translate_e: t.easting,
            translate_n: t.northing,
            rms_fit: 0.0,
        }
    }
}

/// Least-squares similarity taking `from_datum` coordinates onto `to_datum`
/// over the points both datums share.
pub fn estimate_datum_transform(db: &ControlDatabase, from_datum: &str, to_datum: &str) -> Result<SimilarityTransform> {
    for d in [from_datum, to_datum] {
        if !db.datums().contains(d) {
            return Err(ControlError::UnknownDatum(d.to_owned()));
        }
    }
    let pairs: Vec<(Coordinates, Coordinates)> = db
        .in_datum(from_datum)
        .filter_map(|p| db.get(to_datum, &p.id).map(|q| (p.coordinates(), q.coordinates())))
        .collect();
    let overlap = || ControlError::InsufficientOverlap {
        from: from_datum.to_owned(),
        to: to_datum.to_owned(),
        common: pairs.len(),
    };
    if pairs.len() < 2 {
        return Err(overlap());
    }
    let degenerate = || ControlError::DegenerateGeometry {
        from: from_datum.to_owned(),
        to: to_datum.to_owned(),
    };
    fit_similarity(&pairs).map_err(|e| match e {
        AdjustError::SingularNormalMatrix { .. } => degenerate(),
        _ => degenerate(),
    })
}

/// Fits the four-parameter similarity to point pairs `(source, target)`.
///
/// Source coordinates are reduced to their centroid before the solve; the
/// translation is restored afterwards.
pub fn fit_similarity(pairs: &[(Coordinates, Coordinates)]) -> std::result::Result<SimilarityTransform, AdjustError> {
    let k = pairs.len() as f64;
    let ce = pairs.iter().map(|(p, _)| p.easting).sum::<f64>() / k;
    let cn = pairs.iter().map(|(p, _)| p.northing).sum::<f64>() / k;
    let spread = pairs
        .iter()
        .map(|(p, _)| (p.easting - ce).hypot(p.northing - cn))
        .fold(0.0, f64::max);
    if spread <= 1e-9 * (1.0 + ce.abs().max(cn.abs())) {
        return Err(AdjustError::SingularNormalMatrix {
            columns: vec![0, 1],
            stations: Vec::new(),
        });
    }
    let n = 2 * pairs.len();
    let mut a = DMatrix::zeros(n, 4);
    let mut b = DVector::zeros(n);
    for (i, (p, q)) in pairs.iter().enumerate() {
        let (e, nn) = (p.easting - ce, p.northing - cn);
        // parameters: a, b, tE, tN
        a[(2 * i, 0)] = e;
        a[(2 * i, 1)] = -nn;
        a[(2 * i, 2)] = 1.0;
        a[(2 * i + 1, 0)] = nn;
        a[(2 * i + 1, 1)] = e;
        a[(2 * i + 1, 3)] = 1.0;
        b[2 * i] = q.easting;
        b[2 * i + 1] = q.northing;
    }
    let sol = solve_weighted(&a, &b, &DVector::from_element(n, 1.0))?;
    let (pa, pb) = (sol.x[0], sol.x[1]);
    let te = sol.x[2] - (pa * ce - pb * cn);
    let tn = sol.x[3] - (pb * ce + pa * cn);
    let mut t = SimilarityTransform::from_params(pa, pb, te, tn);
    t.rms_fit = (sol.residuals.norm_squared() / k).sqrt();
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListingRow {
    pub nos: usize,
    pub station: String,
    pub easting: f64,
    pub northing: f64,
    pub height: Option<f64>,
}

/// Maps every adjusted and fixed station through `transform`, ordered by id.
pub fn list_in_datum(
    result: &AdjustmentResult,
    transform: &SimilarityTransform,
    heights: &BTreeMap<String, f64>,
) -> Result<Vec<ListingRow>> {
    list_coordinates(&result.coordinates, transform, heights)
}

pub fn list_coordinates(
    coords: &CoordMap,
    transform: &SimilarityTransform,
    heights: &BTreeMap<String, f64>,
) -> Result<Vec<ListingRow>> {
    transform.validate()?;
    Ok(coords
        .iter()
        .enumerate()
        .map(|(i, (id, c))| {
            let t = transform.apply(*c);
            ListingRow {
                nos: i + 1,
                station: id.clone(),
                easting: t.easting,
                northing: t.northing,
                height: heights.get(id).copied(),
            }
        })
        .collect())
}

/// Fixed-width results table, coordinates to 4 decimal places.
pub fn format_listing(rows: &[ListingRow], datum: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Datum: {datum}");
    let _ = writeln!(
        out,
        "{:>4}  {:<10} {:>14} {:>14} {:>10}",
        "Nos", "Station", "Easting (m)", "Northing (m)", "Height (m)"
    );
    for r in rows {
        let h = r.height.map(|h| format!("{h:.4}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{:>4}  {:<10} {:>14.4} {:>14.4} {:>10}",
            r.nos, r.station, r.easting, r.northing, h
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldbook::CompiledObservation;

    fn point(id: &str, datum: &str, e: f64, n: f64) -> ControlPoint {
        ControlPoint {
            id: id.into(),
            datum: datum.into(),
            easting: e,
            northing: n,
            height: None,
        }
    }

    fn dataset(ids: &[&str]) -> DataSet {
        let obs = ids
            .windows(2)
            .map(|w| CompiledObservation::distance(w[0], w[1], 10.0, 0.003))
            .collect();
        DataSet::new(obs).unwrap()
    }

    #[test]
    fn csv_loading_and_conflicts() {
        let text =
            "id,datum,easting,northing,height\nP,LOCAL,100.0,200.0,5.5\nQ,LOCAL,110,210,\nP,LOCAL,100.0,200.0,5.5\n";
        let db = ControlDatabase::from_csv(text.as_bytes()).unwrap();
        assert_eq!(db.len(), 2);
        assert_eq!(db.get("LOCAL", "Q").unwrap().height, None);
        assert_eq!(db.get("LOCAL", "P").unwrap().height, Some(5.5));

        let bad = "id,datum,easting,northing,height\nP,LOCAL,100.0,200.0,\nP,LOCAL,100.5,200.0,\n";
        assert!(matches!(
            ControlDatabase::from_csv(bad.as_bytes()),
            Err(ControlError::ConflictingDuplicate { .. })
        ));
        let bad_header = "id,datum,e,n,h\n";
        assert!(matches!(
            ControlDatabase::from_csv(bad_header.as_bytes()),
            Err(ControlError::Parse { line: 1, .. })
        ));
        let bad_number = "id,datum,easting,northing,height\nP,LOCAL,abc,1,\n";
        assert!(matches!(
            ControlDatabase::from_csv(bad_number.as_bytes()),
            Err(ControlError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn scan_partitions() {
        let ds = dataset(&["P", "A", "B", "Q", "C", "R", "D", "S"]);
        let db = ControlDatabase::new(["P", "Q", "R", "S"].map(|id| point(id, "L", 0.0, 0.0))).unwrap();
        let out = scan_stations(&ds, &db, "L").unwrap();
        assert_eq!(out.classification.fixed, ["P", "Q", "R", "S"].map(String::from).into());
        assert_eq!(out.classification.free, ["A", "B", "C", "D"].map(String::from).into());
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn scan_empty_and_superset() {
        let ds = dataset(&["A", "B"]);
        let out = scan_stations(&ds, &ControlDatabase::default(), "L").unwrap();
        assert!(out.classification.fixed.is_empty());
        assert_eq!(out.classification.free.len(), 2);
        assert_eq!(out.warnings.len(), 1);

        let db = ControlDatabase::new(["A", "B", "Z"].map(|id| point(id, "L", 0.0, 0.0))).unwrap();
        let out = scan_stations(&ds, &db, "L").unwrap();
        assert!(out.classification.free.is_empty());
        assert!(matches!(
            scan_stations(&ds, &db, "OTHER"),
            Err(ControlError::UnknownDatum(_))
        ));
    }

    #[test]
    fn identity_estimate() {
        let mut pts = Vec::new();
        for (id, e, n) in [("1", 10.0, 20.0), ("2", 300.0, 25.0), ("3", 150.0, 400.0)] {
            pts.push(point(id, "A", e, n));
            pts.push(point(id, "B", e, n));
        }
        let db = ControlDatabase::new(pts).unwrap();
        let t = estimate_datum_transform(&db, "A", "B").unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!(t.translate_e.abs() < 1e-9 && t.translate_n.abs() < 1e-9);
        assert!(t.rms_fit < 1e-9);
    }

    #[test]
    fn overlap_and_degeneracy() {
        let db = ControlDatabase::new([
            point("1", "A", 0.0, 0.0),
            point("1", "B", 5.0, 5.0),
            point("2", "A", 1.0, 1.0),
        ])
        .unwrap();
        assert!(matches!(
            estimate_datum_transform(&db, "A", "B"),
            Err(ControlError::InsufficientOverlap { common: 1, .. })
        ));
        let db = ControlDatabase::new([
            point("1", "A", 7.0, 7.0),
            point("2", "A", 7.0, 7.0),
            point("1", "B", 0.0, 0.0),
            point("2", "B", 1.0, 1.0),
        ])
        .unwrap();
        assert!(matches!(
            estimate_datum_transform(&db, "A", "B"),
            Err(ControlError::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn two_points_fit_exactly() {
        let db = ControlDatabase::new([
            point("1", "A", 0.0, 0.0),
            point("2", "A", 100.0, 0.0),
            point("1", "B", 50.0, 50.0),
            point("2", "B", 50.0, 250.0),
        ])
        .unwrap();
        let t = estimate_datum_transform(&db, "A", "B").unwrap();
        assert!(t.rms_fit < 1e-9);
        assert!((t.scale - 2.0).abs() < 1e-12);
        assert!((t.rotation - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn inverse_and_compose() {
        let t = SimilarityTransform {
            scale: 1.3,
            rotation: 0.4,
            translate_e: 12.0,
            translate_n: -7.0,
            rms_fit: 0.0,
        };
        let p = Coordinates::new(123.4, -56.7);
        let back = t.inverse().apply(t.apply(p));
        assert!((back.easting - p.easting).abs() < 1e-9 && (back.northing - p.northing).abs() < 1e-9);
        let id = t.then(&t.inverse());
        assert!((id.scale - 1.0).abs() < 1e-12 && id.rotation.abs() < 1e-12);
        let q = t.then(&t).apply(p);
        let r = t.apply(t.apply(p));
        assert!((q.easting - r.easting).abs() < 1e-9 && (q.northing - r.northing).abs() < 1e-9);
    }

    #[test]
    fn listing_table_format() {
        let coords: CoordMap = [("P1".to_owned(), Coordinates::new(10379.0710, 5546.7395))].into();
        let heights: BTreeMap<String, f64> = [("P1".to_owned(), 100.1301)].into();
        let rows = list_coordinates(&coords, &SimilarityTransform::identity(), &heights).unwrap();
        let text = format_listing(&rows, "CENTRAL");
        assert!(
            text.contains("   1  P1             10379.0710      5546.7395   100.1301"),
            "{text}"
        );
        let bad = SimilarityTransform {
            scale: 0.0,
            ..SimilarityTransform::identity()
        };
        assert!(list_coordinates(&coords, &bad, &heights).is_err());
    }
}
