//! Stage runners chaining compile, scan, analyze, adjust and listing, and
//! the reports they produce.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use serde::Serialize;

use crate::adjust::{self, AdjustError, AdjustOptions, AdjustmentResult};
use crate::angle::ARCSEC_PER_RAD;
use crate::control::{self, ControlDatabase, ListingRow, SimilarityTransform};
use crate::equations::CoordMap;
use crate::fieldbook::{self, DataSet, ObservationKind, ObservationRecord, SigmaOverrides, SigmaPolicy};
use crate::graph::{self, ClosureRule, GraphError, NetworkGraph, SpanningTree};

/// Pipeline stage, used to label failures and pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Compile,
    Scan,
    Analyze,
    Adjust,
    Transform,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Compile => 2,
            Stage::Scan => 3,
            Stage::Analyze => 4,
            Stage::Adjust => 5,
            Stage::Transform => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Compile => "compile",
            Stage::Scan => "scan",
            Stage::Analyze => "analyze",
            Stage::Adjust => "adjust",
            Stage::Transform => "transform",
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
    /// Report of a run that finished without converging.
    pub partial: Option<Box<AdjustReport>>,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
            partial: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage.name(), self.message)
    }
}

impl std::error::Error for PipelineError {}

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fieldbook_path: PathBuf,
    pub control_db_path: PathBuf,
    pub datum: String,
    pub output_datum: Option<String>,
    pub sigma: SigmaOverrides,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub format: OutputFormat,
    pub report_path: Option<PathBuf>,
    pub dump_matrix: bool,
}

impl PipelineConfig {
    pub fn new(fieldbook_path: impl Into<PathBuf>, control_db_path: impl Into<PathBuf>, datum: &str) -> Self {
        let defaults = AdjustOptions::default();
        Self {
            fieldbook_path: fieldbook_path.into(),
            control_db_path: control_db_path.into(),
            datum: datum.to_owned(),
            output_datum: None,
            sigma: SigmaOverrides::default(),
            tolerance: defaults.tolerance,
            max_iterations: defaults.max_iterations,
            format: OutputFormat::Text,
            report_path: None,
            dump_matrix: false,
        }
    }

    pub fn options(&self) -> AdjustOptions {
        AdjustOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            ..AdjustOptions::default()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.fieldbook_path.as_os_str().is_empty() || self.control_db_path.as_os_str().is_empty() {
            return Err("input paths must be nonempty".into());
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if self.max_iterations == 0 {
            return Err("max iterations must be at least 1".into());
        }
        Ok(())
    }
}

/// Inputs already read from disk.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub fieldbook_text: String,
    pub controls: ControlDatabase,
}

impl Inputs {
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let fieldbook_text = std::fs::read_to_string(&config.fieldbook_path)
            .map_err(|e| PipelineError::new(Stage::Compile, format!("{}: {e}", config.fieldbook_path.display())))?;
        let controls = load_controls(&config.control_db_path)?;
        Ok(Self {
            fieldbook_text,
            controls,
        })
    }
}

pub fn load_controls(path: &std::path::Path) -> Result<ControlDatabase> {
    let file = std::fs::File::open(path)
        .map_err(|e| PipelineError::new(Stage::Compile, format!("{}: {e}", path.display())))?;
    ControlDatabase::from_csv(file).map_err(|e| PipelineError::new(Stage::Compile, format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// compile

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompileReport {
    pub stations: Vec<String>,
    pub angles: usize,
    pub distances: usize,
    /// Angles in decimal degrees, distances in metres.
    pub observations: Vec<ObservationRecord>,
}

pub fn run_compile(text: &str, sigma: &SigmaOverrides) -> Result<(DataSet, CompileReport)> {
    let book = fieldbook::parse_fieldbook(text).map_err(|e| PipelineError::new(Stage::Compile, e))?;
    let policy = SigmaPolicy::default().with_overrides(&book.sigma).with_overrides(sigma);
    let ds = fieldbook::compile(&book, &policy).map_err(|e| PipelineError::new(Stage::Compile, e))?;
    let report = CompileReport {
        stations: ds.stations().to_vec(),
        angles: ds.count(ObservationKind::Angle),
        distances: ds.count(ObservationKind::Distance),
        observations: ds.observations().iter().map(ObservationRecord::from).collect(),
    };
    Ok((ds, report))
}

impl CompileReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Compiled {} observations ({} angles, {} distances) over {} stations",
            self.angles + self.distances,
            self.angles,
            self.distances,
            self.stations.len()
        );
        let _ = writeln!(
            out,
            "{:<10} {:<12} {:>18} {:>14}",
            "Kind", "Observation", "Value", "Sigma"
        );
        for o in &self.observations {
            let tag = match &o.to {
                Some(to) => format!("{}-{}-{}", o.from, o.at, to),
                None => format!("{}-{}", o.at, o.from),
            };
            let (value, sigma) = match o.kind {
                ObservationKind::Angle => (
                    format!("{} dms", fieldbook::format_dms(o.value.to_radians(), 2)),
                    format!("{:.2}\"", o.sigma * 3600.0),
                ),
                ObservationKind::Distance => (format!("{:.4} m", o.value), format!("{:.4} m", o.sigma)),
            };
            let _ = writeln!(out, "{:<10} {:<12} {:>18} {:>14}", o.kind, tag, value, sigma);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,at,from,to,value,sigma\n");
        for o in &self.observations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                o.kind,
                o.at,
                o.from,
                o.to.as_deref().unwrap_or(""),
                o.value,
                o.sigma
            );
        }
        out
    }
}

// ---------------------------------------------------------------------------
// scan

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub datum: String,
    pub fixed: Vec<String>,
    pub free: Vec<String>,
    pub warnings: Vec<String>,
}

impl ScanReport {
    pub fn classification(&self) -> control::StationClassification {
        control::StationClassification {
            fixed: self.fixed.iter().cloned().collect(),
            free: self.free.iter().cloned().collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Datum: {}", self.datum);
        let _ = writeln!(out, "Fixed: {}", self.fixed.join(" "));
        let _ = writeln!(out, "Free:  {}", self.free.join(" "));
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("station,status\n");
        for s in &self.fixed {
            let _ = writeln!(out, "{s},fixed");
        }
        for s in &self.free {
            let _ = writeln!(out, "{s},free");
        }
        out
    }
}

/// Classifies stations. With `require_fixed`, an empty fixed set fails.
pub fn run_scan(dataset: &DataSet, db: &ControlDatabase, datum: &str, require_fixed: bool) -> Result<ScanReport> {
    let out = control::scan_stations(dataset, db, datum).map_err(|e| PipelineError::new(Stage::Scan, e))?;
    if require_fixed && out.classification.fixed.is_empty() {
        return Err(PipelineError::new(
            Stage::Scan,
            control::ControlError::NoFixedStations(datum.to_owned()),
        ));
    }
    Ok(ScanReport {
        datum: datum.to_owned(),
        fixed: out.classification.fixed.into_iter().collect(),
        free: out.classification.free.into_iter().collect(),
        warnings: out.warnings,
    })
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TreeKind {
    #[default]
    Dfs,
    Bfs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeReport {
    pub root: String,
    pub span_index: Vec<String>,
    pub tree_edges: Vec<String>,
    pub back_edges: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisclosureReport {
    pub de_m: f64,
    pub dn_m: f64,
    pub linear_m: f64,
    pub length_m: f64,
    pub closure_ratio: f64,
    pub ratio: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub cycle: String,
    pub nodes: Vec<String>,
    pub legs: usize,
    pub misclosure: Option<MisclosureReport>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeReport {
    pub tree: String,
    pub nodes: usize,
    pub edges: usize,
    pub components: Vec<Vec<String>>,
    pub trees: Vec<TreeReport>,
    pub cycles: Vec<CycleReport>,
    pub warnings: Vec<String>,
}

/// Graph census, spanning trees and cycle misclosures at provisional
/// coordinates.
///
/// A component with no fixed station fails the stage: it cannot be placed
/// in the datum.
pub fn run_analyze(
    dataset: &DataSet,
    fixed: &BTreeSet<String>,
    fixed_coords: &CoordMap,
    kind: TreeKind,
) -> Result<AnalyzeReport> {
    if dataset.is_empty() {
        return Err(PipelineError::new(Stage::Analyze, GraphError::EmptyDataset));
    }
    let g = NetworkGraph::from_dataset(dataset);
    let components = g.components();
    let mut warnings = Vec::new();
    if components.len() > 1 {
        if let Some(c) = components.iter().find(|c| !c.iter().any(|s| fixed.contains(s))) {
            return Err(PipelineError::new(
                Stage::Analyze,
                format!(
                    "{}; component {{{}}} has no fixed station",
                    GraphError::DisconnectedNetwork {
                        components: components.clone()
                    },
                    c.join(", ")
                ),
            ));
        }
        warnings.push(
            GraphError::DisconnectedNetwork {
                components: components.clone(),
            }
            .to_string(),
        );
    }
    let build: fn(&NetworkGraph, &str) -> std::result::Result<SpanningTree, GraphError> = match kind {
        TreeKind::Dfs => graph::dfs_spanning_tree,
        TreeKind::Bfs => graph::bfs_spanning_tree,
    };
    let forest = graph::spanning_forest(&g, fixed, build);
    let provisionals = adjust::provisional_coordinates(dataset, fixed_coords);
    if let Err(e) = &provisionals {
        warnings.push(format!("misclosures unavailable: {e}"));
    }
    let mut trees = Vec::new();
    let mut cycles = Vec::new();
    for t in &forest {
        trees.push(TreeReport {
            root: t.root.clone(),
            span_index: t.span_index.clone(),
            tree_edges: t.tree_labels(),
            back_edges: t.back_labels(),
        });
        for c in graph::fundamental_cycles_with(t, ClosureRule::ShortestClosure) {
            let (misclosure, note) = match &provisionals {
                Ok(coords) => match graph::cycle_misclosure(&c, dataset, coords) {
                    Ok(m) => (
                        Some(MisclosureReport {
                            de_m: m.de,
                            dn_m: m.dn,
                            linear_m: m.linear(),
                            length_m: m.length,
                            closure_ratio: m.closure_ratio,
                            ratio: graph::format_ratio(m.closure_ratio),
                        }),
                        None,
                    ),
                    Err(e) => (None, Some(e.to_string())),
                },
                Err(_) => (None, Some("no provisional coordinates".to_owned())),
            };
            cycles.push(CycleReport {
                cycle: c.label(),
                nodes: c.node_sequence.clone(),
                legs: c.len(),
                misclosure,
                note,
            });
        }
    }
    Ok(AnalyzeReport {
        tree: match kind {
            TreeKind::Dfs => "dfs",
            TreeKind::Bfs => "bfs",
        }
        .to_owned(),
        nodes: g.nodes.len(),
        edges: g.edges.len(),
        components,
        trees,
        cycles,
        warnings,
    })
}

impl AnalyzeReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Graph: {} nodes, {} edges, {} component(s), {} cycle(s)",
            self.nodes,
            self.edges,
            self.components.len(),
            self.cycles.len()
        );
        for t in &self.trees {
            let _ = writeln!(
                out,
                "{} tree from {}: {}",
                self.tree.to_uppercase(),
                t.root,
                t.tree_edges.join(" ")
            );
            let _ = writeln!(out, "  span index: {}", t.span_index.join(" "));
            let _ = writeln!(out, "  back edges: {}", t.back_edges.join(" "));
        }
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>12} {:>12} {:>12} {:>12}",
            "Cycle", "Legs", "dE (m)", "dN (m)", "Length (m)", "Ratio"
        );
        for c in &self.cycles {
            match &c.misclosure {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{:<12} {:>5} {:>12.4} {:>12.4} {:>12.3} {:>12}",
                        c.cycle, c.legs, m.de_m, m.dn_m, m.length_m, m.ratio
                    );
                }
                None => {
                    let _ = writeln!(out, "{:<12} {:>5} {}", c.cycle, c.legs, c.note.as_deref().unwrap_or(""));
                }
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,legs,de_m,dn_m,length_m,closure_ratio\n");
        for c in &self.cycles {
            match &c.misclosure {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        c.cycle, c.legs, m.de_m, m.dn_m, m.length_m, m.closure_ratio
                    );
                }
                None => {
                    let _ = writeln!(out, "{},{},,,,", c.cycle, c.legs);
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// adjust

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationReport {
    pub station: String,
    pub status: String,
    pub easting_m: f64,
    pub northing_m: f64,
    pub sd_easting_m: Option<f64>,
    pub sd_northing_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub observation: String,
    pub kind: ObservationKind,
    pub residual: f64,
    /// `m` for distances, `arcsec` for angles.
    pub unit: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub max_abs_correction_m: f64,
    pub weighted_sum_squares: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustReport {
    pub datum: String,
    pub converged: bool,
    pub iterations: usize,
    pub observations: usize,
    pub unknowns: usize,
    pub redundancy: usize,
    pub unit_variance: Option<f64>,
    pub sigma0: Option<f64>,
    pub stations: Vec<StationReport>,
    pub residuals: Vec<ResidualReport>,
    pub iteration_log: Vec<IterationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design_matrix: Option<String>,
}

impl AdjustReport {
    pub fn from_result(datum: &str, r: &AdjustmentResult, design_matrix: Option<String>) -> Self {
        let stations = r
            .coordinates
            .iter()
            .map(|(id, c)| {
                let sd = r.std_devs(id);
                StationReport {
                    station: id.clone(),
                    status: if r.fixed.contains(id) { "fixed" } else { "free" }.to_owned(),
                    easting_m: c.easting,
                    northing_m: c.northing,
                    sd_easting_m: sd.map(|s| s.0),
                    sd_northing_m: sd.map(|s| s.1),
                }
            })
            .collect();
        let residuals = r
            .residual_table
            .iter()
            .map(|o| {
                let (residual, unit) = match o.kind {
                    ObservationKind::Angle => (o.residual * ARCSEC_PER_RAD, "arcsec"),
                    ObservationKind::Distance => (o.residual, "m"),
                };
                ResidualReport {
                    observation: o.tag.clone(),
                    kind: o.kind,
                    residual,
                    unit: unit.to_owned(),
                    weight: o.weight,
                }
            })
            .collect();
        Self {
            datum: datum.to_owned(),
            converged: r.converged,
            iterations: r.iterations,
            observations: r.residuals.len(),
            unknowns: r.index.unknowns(),
            redundancy: r.redundancy,
            unit_variance: r.unit_variance,
            sigma0: r.unit_sigma(),
            stations,
            residuals,
            iteration_log: r
                .log
                .iter()
                .map(|l| IterationReport {
                    iteration: l.iteration,
                    max_abs_correction_m: l.max_abs_correction,
                    weighted_sum_squares: l.weighted_sum_squares,
                })
                .collect(),
            design_matrix,
        }
    }

    pub fn free_stations(&self) -> impl Iterator<Item = &StationReport> {
        self.stations.iter().filter(|s| s.status == "free")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Adjustment in datum {}: {} after {} iteration(s)",
            self.datum,
            if self.converged { "converged" } else { "NOT converged" },
            self.iterations
        );
        let _ = writeln!(
            out,
            "Observations {}, unknowns {}, redundancy {}",
            self.observations, self.unknowns, self.redundancy
        );
        match (self.unit_variance, self.sigma0) {
            (Some(v), Some(s)) => {
                let _ = writeln!(out, "Unit variance {v:.6}, sigma0 {s:.6}");
            }
            _ => {
                let _ = writeln!(out, "Unit variance undefined (zero redundancy)");
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:<6} {:>14} {:>14} {:>10} {:>10}",
            "Station", "Status", "Easting (m)", "Northing (m)", "sE (m)", "sN (m)"
        );
        let sd = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        for s in &self.stations {
            let _ = writeln!(
                out,
                "{:<10} {:<6} {:>14.4} {:>14.4} {:>10} {:>10}",
                s.station,
                s.status,
                s.easting_m,
                s.northing_m,
                sd(s.sd_easting_m),
                sd(s.sd_northing_m)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<12} {:<9} {:>14} {:<7} {:>14}",
            "Observation", "Kind", "Residual", "Unit", "Weight"
        );
        for r in &self.residuals {
            let _ = writeln!(
                out,
                "{:<12} {:<9} {:>14.4} {:<7} {:>14.6e}",
                r.observation, r.kind, r.residual, r.unit, r.weight
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>9} {:>18} {:>16}", "Iteration", "max|dx| (m)", "vTWv");
        for l in &self.iteration_log {
            let _ = writeln!(
                out,
                "{:>9} {:>18.6e} {:>16.6e}",
                l.iteration, l.max_abs_correction_m, l.weighted_sum_squares
            );
        }
        if let Some(m) = &self.design_matrix {
            let _ = writeln!(out);
            out.push_str(m);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("station,status,easting_m,northing_m,sd_easting_m,sd_northing_m\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.stations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.station,
                s.status,
                s.easting_m,
                s.northing_m,
                opt(s.sd_easting_m),
                opt(s.sd_northing_m)
            );
        }
        out
    }
}

fn adjust_error(e: AdjustError, datum: &str, dump: Option<String>) -> PipelineError {
    match e {
        AdjustError::NotConverged(r) => PipelineError {
            stage: Stage::Adjust,
            message: format!("adjustment did not converge in {} iterations", r.iterations),
            partial: Some(Box::new(AdjustReport::from_result(datum, &r, dump))),
        },
        other => PipelineError::new(Stage::Adjust, other),
    }
}

/// Provisional coordinates, the iterative solve and its report.
pub fn run_adjust(
    dataset: &DataSet,
    scan: &ScanReport,
    fixed_coords: &CoordMap,
    options: &AdjustOptions,
    dump_matrix: bool,
) -> Result<(AdjustmentResult, AdjustReport)> {
    let classification = scan.classification();
    let provisionals =
        adjust::provisional_coordinates(dataset, fixed_coords).map_err(|e| PipelineError::new(Stage::Adjust, e))?;
    let dump = if dump_matrix {
        let system = adjust::form_equations(dataset, &classification, &provisionals, options.sigma0_sq)
            .map_err(|e| PipelineError::new(Stage::Adjust, e))?;
        Some(system.dump_table())
    } else {
        None
    };
    let result = adjust::iterate_adjustment(dataset, &classification, &provisionals, options)
        .map_err(|e| adjust_error(e, &scan.datum, dump.clone()))?;
    let report = AdjustReport::from_result(&scan.datum, &result, dump);
    Ok((result, report))
}

// ---------------------------------------------------------------------------
// transform and listing

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformReport {
    pub from_datum: String,
    pub to_datum: String,
    pub common_points: usize,
    pub transform: SimilarityTransform,
}

impl TransformReport {
    pub fn to_text(&self) -> String {
        let t = &self.transform;
        format!(
            "Similarity {} -> {} over {} common points\n  scale        {:.12}\n  rotation     {:.9} deg\n  translate E  {:.4} m\n  translate N  {:.4} m\n  rms fit      {:.6} m\n",
            self.from_datum,
            self.to_datum,
            self.common_points,
            t.scale,
            t.rotation.to_degrees(),
            t.translate_e,
            t.translate_n,
            t.rms_fit
        )
    }

    pub fn to_csv(&self) -> String {
        let t = &self.transform;
        format!(
            "from_datum,to_datum,scale,rotation_rad,translate_e_m,translate_n_m,rms_fit_m\n{},{},{},{},{},{},{}\n",
            self.from_datum, self.to_datum, t.scale, t.rotation, t.translate_e, t.translate_n, t.rms_fit
        )
    }
}

pub fn run_transform(db: &ControlDatabase, from: &str, to: &str) -> Result<TransformReport> {
    let transform = if from == to && db.datums().contains(from) {
        SimilarityTransform::identity()
    } else {
        control::estimate_datum_transform(db, from, to).map_err(|e| PipelineError::new(Stage::Transform, e))?
    };
    let common_points = db.in_datum(from).filter(|p| db.get(to, &p.id).is_some()).count();
    Ok(TransformReport {
        from_datum: from.to_owned(),
        to_datum: to.to_owned(),
        common_points,
        transform,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListingReport {
    pub datum: String,
    pub transform: TransformReport,
    pub rows: Vec<ListingRow>,
}

impl ListingReport {
    pub fn to_text(&self) -> String {
        control::format_listing(&self.rows, &self.datum)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("nos,station,easting_m,northing_m,height_m\n");
        for r in &self.rows {
            let h = r.height.map(|h| format!("{h:.4}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.4},{:.4},{}", r.nos, r.station, r.easting, r.northing, h);
        }
        out
    }
}

pub fn run_listing(
    result: &AdjustmentResult,
    db: &ControlDatabase,
    datum: &str,
    list_datum: &str,
) -> Result<ListingReport> {
    let transform = run_transform(db, datum, list_datum)?;
    let mut heights = db.heights_in(datum);
    for (k, v) in db.heights_in(list_datum) {
        heights.entry(k).or_insert(v);
    }
    let rows = control::list_in_datum(result, &transform.transform, &heights)
        .map_err(|e| PipelineError::new(Stage::Transform, e))?;
    Ok(ListingReport {
        datum: list_datum.to_owned(),
        transform,
        rows,
    })
}

// ---------------------------------------------------------------------------
// compute

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputeReport {
    pub compile: CompileReport,
    pub scan: ScanReport,
    pub analyze: AnalyzeReport,
    pub adjust: AdjustReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub listing: Option<ListingReport>,
}

impl ComputeReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (title, body) in [
            ("COMPILE", self.compile.to_text()),
            ("SCAN", self.scan.to_text()),
            ("ANALYZE", self.analyze.to_text()),
            ("ADJUST", self.adjust.to_text()),
        ] {
            let _ = writeln!(out, "== {title} ==");
            out.push_str(&body);
            out.push('\n');
        }
        if let Some(l) = &self.listing {
            let _ = writeln!(out, "== LISTING ==");
            out.push_str(&l.transform.to_text());
            out.push_str(&l.to_text());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        match &self.listing {
            Some(l) => l.to_csv(),
            None => self.adjust.to_csv(),
        }
    }
}

/// Runs every stage in order on already loaded inputs.
pub fn compute(inputs: &Inputs, config: &PipelineConfig) -> Result<ComputeReport> {
    config.validate().map_err(|e| PipelineError::new(Stage::Compile, e))?;
    let (ds, compile) = run_compile(&inputs.fieldbook_text, &config.sigma)?;
    let scan = run_scan(&ds, &inputs.controls, &config.datum, true)?;
    let fixed_coords = inputs.controls.coordinates_in(&config.datum);
    let fixed: BTreeSet<String> = scan.fixed.iter().cloned().collect();
    let analyze = run_analyze(&ds, &fixed, &fixed_coords, TreeKind::Dfs)?;
    let (result, adjust) = run_adjust(&ds, &scan, &fixed_coords, &config.options(), config.dump_matrix)?;
    let listing = match &config.output_datum {
        Some(d) => Some(run_listing(&result, &inputs.controls, &config.datum, d)?),
        None => None,
    };
    Ok(ComputeReport {
        compile,
        scan,
        analyze,
        adjust,
        listing,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}
