//! Command-line front end.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::adjust::AdjustOptions;
use crate::fieldbook::SigmaOverrides;
use crate::pipeline::{self, Inputs, OutputFormat, PipelineConfig, PipelineError, Stage, TreeKind};
use crate::regress::{self, ModelKind};
use crate::synth::SyntheticNetwork;

#[derive(Debug, Parser)]
#[command(
    name = "netadjust",
    version,
    about = "Least-squares adjustment of horizontal survey networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and compile a field book into mean observations.
    Compile(CompileArgs),
    /// Classify stations as fixed or free against the control database.
    Scan(NetworkArgs),
    /// Graph census, spanning tree, cycles and misclosures.
    Analyze(AnalyzeArgs),
    /// Iterative least-squares adjustment.
    Adjust(AdjustArgs),
    /// Straight-line, linearized or polynomial regression on x,y[,w] CSV.
    Regress(RegressArgs),
    /// Estimate the similarity transform between two datums.
    Transform(TransformArgs),
    /// Run every stage in one pass.
    Compute(ComputeArgs),
    /// Write a synthetic field book and control file.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Json,
    Csv,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => OutputFormat::Text,
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SigmaArgs {
    /// Constant part of the distance sigma, metres.
    #[arg(long)]
    pub sigma_dist_const: Option<f64>,
    /// Distance-proportional part of the distance sigma, ppm.
    #[arg(long)]
    pub sigma_dist_ppm: Option<f64>,
    /// Angle sigma, arc-seconds.
    #[arg(long)]
    pub sigma_angle: Option<f64>,
}

impl SigmaArgs {
    fn overrides(&self) -> SigmaOverrides {
        SigmaOverrides {
            distance_const_m: self.sigma_dist_const,
            distance_ppm: self.sigma_dist_ppm,
            angle_arcsec: self.sigma_angle,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[arg(long)]
    pub fieldbook: PathBuf,
    #[command(flatten)]
    pub sigma: SigmaArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    #[arg(long)]
    pub fieldbook: PathBuf,
    #[arg(long)]
    pub controls: PathBuf,
    #[arg(long)]
    pub datum: String,
    #[command(flatten)]
    pub sigma: SigmaArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TreeArg {
    Dfs,
    Bfs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long, value_enum, default_value = "dfs")]
    pub tree: TreeArg,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Convergence threshold on the largest correction, metres.
    #[arg(long, default_value_t = AdjustOptions::default().tolerance)]
    pub tolerance: f64,
    #[arg(long = "max-iter", default_value_t = AdjustOptions::default().max_iterations)]
    pub max_iter: usize,
    /// Append the coefficient matrix at the provisional coordinates.
    #[arg(long)]
    pub dump_matrix: bool,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// List the adjusted coordinates in this datum.
    #[arg(long)]
    pub list_datum: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Line,
    Exponential,
    Power,
    Polynomial,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// CSV of x,y[,weight] rows.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "line")]
    pub model: ModelArg,
    /// Polynomial degree.
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub controls: PathBuf,
    #[arg(long)]
    pub from: String,
    #[arg(long)]
    pub to: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureName {
    Traverse,
    Braced,
    Square,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, value_enum)]
    pub name: FixtureName,
    /// Directory receiving `<name>.fbk` and `<name>_controls.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Add seeded Gaussian noise at the default sigmas.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Rendered {
    text: String,
    json: String,
    csv: String,
}

fn render<T: Serialize>(value: &T, text: String, csv: String) -> Rendered {
    Rendered {
        text,
        json: pipeline::to_json(value),
        csv,
    }
}

fn emit(output: &OutputArgs, r: &Rendered) -> Result<(), PipelineError> {
    let body = match output.format {
        FormatArg::Text => &r.text,
        FormatArg::Json => &r.json,
        FormatArg::Csv => &r.csv,
    };
    match &output.out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| PipelineError::new(Stage::Compile, format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| PipelineError::new(Stage::Compile, e))
        }
    }
}

fn config_for(network: &NetworkArgs, solve: Option<&SolveArgs>) -> PipelineConfig {
    let mut config = PipelineConfig::new(&network.fieldbook, &network.controls, &network.datum);
    config.sigma = network.sigma.overrides();
    config.format = network.output.format.into();
    config.report_path = network.output.out.clone();
    if let Some(s) = solve {
        config.tolerance = s.tolerance;
        config.max_iterations = s.max_iter;
        config.dump_matrix = s.dump_matrix;
    }
    config
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Compile, format!("{}: {e}", path.display())))
}

fn execute(command: &Command) -> Result<(), PipelineError> {
    match command {
        Command::Compile(a) => {
            let (_, report) = pipeline::run_compile(&read(&a.fieldbook)?, &a.sigma.overrides())?;
            emit(&a.output, &render(&report, report.to_text(), report.to_csv()))
        }
        Command::Scan(a) => {
            let inputs = Inputs::load(&config_for(a, None))?;
            let (ds, _) = pipeline::run_compile(&inputs.fieldbook_text, &a.sigma.overrides())?;
            let report = pipeline::run_scan(&ds, &inputs.controls, &a.datum, false)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            emit(&a.output, &render(&report, report.to_text(), report.to_csv()))
        }
        Command::Analyze(a) => {
            let n = &a.network;
            let inputs = Inputs::load(&config_for(n, None))?;
            let (ds, _) = pipeline::run_compile(&inputs.fieldbook_text, &n.sigma.overrides())?;
            let scan = pipeline::run_scan(&ds, &inputs.controls, &n.datum, false)?;
            let fixed: BTreeSet<String> = scan.fixed.iter().cloned().collect();
            let kind = match a.tree {
                TreeArg::Dfs => TreeKind::Dfs,
                TreeArg::Bfs => TreeKind::Bfs,
            };
            let report = pipeline::run_analyze(&ds, &fixed, &inputs.controls.coordinates_in(&n.datum), kind)?;
            emit(&n.output, &render(&report, report.to_text(), report.to_csv()))
        }
        Command::Adjust(a) => {
            let config = config_for(&a.network, Some(&a.solve));
            config.validate().map_err(|e| PipelineError::new(Stage::Adjust, e))?;
            let inputs = Inputs::load(&config)?;
            let (ds, _) = pipeline::run_compile(&inputs.fieldbook_text, &config.sigma)?;
            let scan = pipeline::run_scan(&ds, &inputs.controls, &config.datum, true)?;
            let fixed_coords = inputs.controls.coordinates_in(&config.datum);
            match pipeline::run_adjust(&ds, &scan, &fixed_coords, &config.options(), config.dump_matrix) {
                Ok((_, report)) => emit(&a.network.output, &render(&report, report.to_text(), report.to_csv())),
                Err(mut e) => {
                    if let Some(partial) = e.partial.take() {
                        emit(
                            &a.network.output,
                            &render(&*partial, partial.to_text(), partial.to_csv()),
                        )?;
                    }
                    Err(e)
                }
            }
        }
        Command::Compute(a) => {
            let mut config = config_for(&a.network, Some(&a.solve));
            config.output_datum = a.list_datum.clone();
            let inputs = Inputs::load(&config)?;
            match pipeline::compute(&inputs, &config) {
                Ok(report) => emit(&a.network.output, &render(&report, report.to_text(), report.to_csv())),
                Err(mut e) => {
                    if let Some(partial) = e.partial.take() {
                        emit(
                            &a.network.output,
                            &render(&*partial, partial.to_text(), partial.to_csv()),
                        )?;
                    }
                    Err(e)
                }
            }
        }
        Command::Regress(a) => regress_command(a),
        Command::Transform(a) => {
            let db = pipeline::load_controls(&a.controls)?;
            let report = pipeline::run_transform(&db, &a.from, &a.to)?;
            emit(&a.output, &render(&report, report.to_text(), report.to_csv()))
        }
        Command::Fixture(a) => fixture_command(a),
    }
}

#[derive(Debug, Serialize)]
struct RegressReport {
    model: &'static str,
    n: usize,
    coefficients: Vec<(String, f64)>,
    std_error_estimate: Option<f64>,
    residual_sum_squares: Option<f64>,
}

fn regress_command(a: &RegressArgs) -> Result<(), PipelineError> {
    let file = std::fs::File::open(&a.input)
        .map_err(|e| PipelineError::new(Stage::Compile, format!("{}: {e}", a.input.display())))?;
    let data = regress::read_samples_csv(file).map_err(|e| PipelineError::new(Stage::Compile, e))?;
    let fail = |e: regress::RegressError| PipelineError::new(Stage::Adjust, e);
    let n = data.samples.len();
    let report = match a.model {
        ModelArg::Line => {
            let f = regress::fit_simple_line(&data.samples).map_err(fail)?;
            RegressReport {
                model: "line",
                n,
                coefficients: vec![("a".into(), f.intercept_a), ("b".into(), f.gradient_b)],
                std_error_estimate: f.std_error_estimate,
                residual_sum_squares: None,
            }
        }
        ModelArg::Exponential | ModelArg::Power => {
            let (kind, name) = if a.model == ModelArg::Exponential {
                (ModelKind::Exponential, "exponential")
            } else {
                (ModelKind::Power, "power")
            };
            let (alpha, beta) = regress::linearize_fit(kind, &data.samples).map_err(fail)?;
            RegressReport {
                model: name,
                n,
                coefficients: vec![("alpha".into(), alpha), ("beta".into(), beta)],
                std_error_estimate: None,
                residual_sum_squares: None,
            }
        }
        ModelArg::Polynomial => {
            let xs: Vec<f64> = data.samples.iter().map(|p| p.x).collect();
            let y = DVector::from_iterator(n, data.samples.iter().map(|p| p.y));
            let basis: DMatrix<f64> = regress::polynomial_basis(&xs, a.degree);
            let f = regress::fit_basis(&basis, &y, &DVector::from_vec(data.weights.clone())).map_err(fail)?;
            RegressReport {
                model: "polynomial",
                n,
                coefficients: f
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (format!("b{j}"), *c))
                    .collect(),
                std_error_estimate: None,
                residual_sum_squares: Some(f.residual_sum_squares),
            }
        }
    };
    let mut text = format!("Model {} over {} samples\n", report.model, report.n);
    let mut csv = String::from("name,value\n");
    for (k, v) in &report.coefficients {
        text.push_str(&format!("  {k:<6} {v:.12}\n"));
        csv.push_str(&format!("{k},{v}\n"));
    }
    if let Some(s) = report.std_error_estimate {
        text.push_str(&format!("  S_y/x  {s:.12}\n"));
        csv.push_str(&format!("std_error_estimate,{s}\n"));
    }
    if let Some(s) = report.residual_sum_squares {
        text.push_str(&format!("  RSS    {s:.12e}\n"));
        csv.push_str(&format!("residual_sum_squares,{s}\n"));
    }
    emit(&a.output, &render(&report, text, csv))
}

fn fixture_command(a: &FixtureArgs) -> Result<(), PipelineError> {
    let (net, name) = match a.name {
        FixtureName::Traverse => (SyntheticNetwork::traverse(), "traverse"),
        FixtureName::Braced => (SyntheticNetwork::braced(), "braced"),
        FixtureName::Square => (SyntheticNetwork::square(), "square"),
    };
    let policy = crate::fieldbook::SigmaPolicy::default();
    let book = match a.seed {
        Some(seed) => net
            .noisy_dataset(&policy, seed)
            .to_fieldbook()
            .map_err(|e| PipelineError::new(Stage::Compile, e))?,
        None => net.fieldbook(),
    };
    let io = |e: std::io::Error| PipelineError::new(Stage::Compile, e);
    std::fs::create_dir_all(&a.out_dir).map_err(io)?;
    std::fs::write(a.out_dir.join(format!("{name}.fbk")), book.to_text()).map_err(io)?;
    std::fs::write(a.out_dir.join(format!("{name}_controls.csv")), net.controls_csv()).map_err(io)?;
    Ok(())
}
