//! Command-line entry points. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 internal error.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{self, AnnotatorLabels};
use crate::binmat;
use crate::dataset::{ingest_dataset, Dataset, FeatureMatrix};
use crate::eval::{simulate_annotation, EvalProtocol, RegionBias};
use crate::labels::{histogram_report_tsv, HistogramGroup};
use crate::plot::{histogram_chart_svg, learning_curve_svg, BarSeries};
use crate::projection::{compute_pca, compute_tsne, import_projection, TsneConfig, TsneOptimizer};
use crate::risk::{render_table, render_tsv, GroupScope, RiskSpec};
use crate::sampling::{faft_from, sample_faft, sample_random, DistanceMetric, Method};
use crate::session::{read_export_csv, AnnotatorGroup, SessionConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn io_out(e: std::io::Error) -> CliError {
    CliError::Internal(format!("write failed: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "annoselect", version, about = "Sample selection and label analysis for time-series annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a dataset and print a summary.
    IngestCheck {
        /// Dataset directory or manifest file.
        dataset: PathBuf,
    },
    /// Compute or import a 2-D projection.
    #[command(subcommand)]
    Project(ProjectCommand),
    /// Print a sampling order, one index per line.
    Sample(SampleArgs),
    /// Simulate an annotator and write the session export as CSV.
    Simulate(SimulateArgs),
    /// Label-distribution report per method (tab-separated).
    Histograms(HistogramArgs),
    /// Combined risk table from a JSON description.
    RiskReport(RiskArgs),
    /// Learning curves from exported label files.
    EvalCurve(CurveArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum ProjectCommand {
    /// Principal component analysis.
    Pca {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact t-SNE.
    Tsne {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = OptimizerArg::Momentum)]
        optimizer: OptimizerArg,
    },
    /// Validate an external N x 2 coordinate file.
    Import {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        coords: PathBuf,
        #[arg(long, default_value = "imported")]
        name: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Momentum,
    LineSearch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Rnd,
    Faft,
    #[value(name = "2dv")]
    TwoDv,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rnd => Method::Random,
            MethodArg::Faft => Method::Faft,
            MethodArg::TwoDv => Method::TwoDv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Cosine,
    Euclidean,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => DistanceMetric::Cosine,
            MetricArg::Euclidean => DistanceMetric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GroupArg {
    Expert,
    NonExpert,
    All,
}

impl From<GroupArg> for GroupScope {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Expert => GroupScope::Expert,
            GroupArg::NonExpert => GroupScope::NonExpert,
            GroupArg::All => GroupScope::All,
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["dataset", "features"]))]
struct SampleArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    metric: MetricArg,
    /// Dataset directory or manifest file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Binary feature matrix, as an alternative to --dataset.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Force FAFT's first pick instead of drawing it from the seed.
    #[arg(long)]
    first: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    track: String,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "sim")]
    annotator_id: String,
    #[arg(long, default_value = "expert")]
    annotator_group: AnnotatorGroup,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    metric: MetricArg,
    /// Probability of replacing the true class by another one.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Bias 2DV picks toward a disc "x,y,radius" in the PCA projection.
    #[arg(long)]
    bias: Option<String>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the binary session snapshot.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HistogramArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    track: String,
    /// Exported session CSV files.
    #[arg(long, num_args = 1.., required = true)]
    labels: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = GroupArg::All)]
    group: GroupArg,
    /// Write a grouped bar chart here.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["spec", "dataset"]))]
struct RiskArgs {
    /// JSON file describing conditions, tracks and per-method inputs.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Dataset to evaluate exported labels against, instead of --spec.
    #[arg(long, requires = "labels", requires = "tracks")]
    dataset: Option<PathBuf>,
    /// Exported session CSV files.
    #[arg(long, num_args = 1..)]
    labels: Vec<PathBuf>,
    /// Tracks summed into one task.
    #[arg(long, value_delimiter = ',')]
    tracks: Vec<String>,
    #[arg(long, default_value = "task")]
    task: String,
    #[arg(long, value_enum, default_value_t = GroupArg::All)]
    group: GroupArg,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = crate::risk::DEFAULT_RARE_THRESHOLD)]
    rare_threshold: f64,
    /// Tab-separated output instead of an aligned table.
    #[arg(long)]
    tsv: bool,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    track: String,
    #[arg(long, num_args = 1.., required = true)]
    labels: Vec<PathBuf>,
    /// Merge each method's annotators by majority vote.
    #[arg(long)]
    merge: bool,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    metric: MetricArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GroupArg::All)]
    group: GroupArg,
    /// Horizontal reference line for the chart, e.g. a gold-standard score.
    #[arg(long)]
    reference: Option<f64>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory for session snapshots.
    #[arg(long, default_value = "sessions")]
    store: PathBuf,
}

/// Parses `argv` and runs the command, writing results to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::IngestCheck { dataset } => ingest_check(&dataset, out),
        Command::Project(p) => project(p, out),
        Command::Sample(a) => sample(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Histograms(a) => histograms(a, out),
        Command::RiskReport(a) => risk_report(a, out),
        Command::EvalCurve(a) => eval_curve(a, out),
        Command::Serve(a) => serve(a),
    }
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    ingest_dataset(path).map_err(data)
}

fn ingest_check(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let ds = load(path)?;
    let mut s = String::new();
    s.push_str(&format!("dataset\t{}\n", ds.name));
    s.push_str(&format!("samples\t{}\n", ds.len()));
    s.push_str(&format!("dims\t{}\n", ds.features.n_dims()));
    for scheme in &ds.schemes {
        let n_truth = ds.ground_truth.get(&scheme.track).map_or(0, |t| t.len());
        s.push_str(&format!(
            "track\t{}\t{} classes\t{} ground-truth labels\n",
            scheme.track,
            scheme.n_classes(),
            n_truth
        ));
    }
    for p in &ds.projections {
        s.push_str(&format!("projection\t{}\t{}\n", p.name, p.path));
    }
    for w in &ds.warnings {
        s.push_str(&format!("warning\trow {}\t{}\n", w.row, w.defect));
    }
    out.write_all(s.as_bytes()).map_err(io_out)
}

fn write_coords(path: &Path, coords: &[[f64; 2]]) -> Result<(), CliError> {
    let flat: Vec<f64> = coords.iter().flatten().copied().collect();
    binmat::write_file(path, coords.len(), 2, &flat).map_err(|e| CliError::Internal(e.to_string()))
}

fn project(cmd: ProjectCommand, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        ProjectCommand::Pca { dataset, out: path } => {
            let ds = load(&dataset)?;
            let pca = compute_pca(&ds.features).map_err(data)?;
            write_coords(&path, &pca.projection.coords)?;
            let ev = pca.explained_variance();
            writeln!(out, "pca\t{} points\texplained variance {:.6} {:.6}", ds.len(), ev[0], ev[1]).map_err(io_out)
        }
        ProjectCommand::Tsne {
            dataset,
            out: path,
            perplexity,
            iterations,
            seed,
            optimizer,
        } => {
            let ds = load(&dataset)?;
            let cfg = TsneConfig {
                perplexity,
                n_iterations: iterations,
                seed,
                optimizer: match optimizer {
                    OptimizerArg::Momentum => TsneOptimizer::Momentum,
                    OptimizerArg::LineSearch => TsneOptimizer::LineSearch,
                },
                ..TsneConfig::default()
            };
            let p = compute_tsne(&ds.features, &cfg).map_err(data)?;
            write_coords(&path, &p.coords)?;
            writeln!(out, "tsne\t{} points", p.len()).map_err(io_out)
        }
        ProjectCommand::Import { dataset, coords, name } => {
            let ds = load(&dataset)?;
            let p = import_projection(&name, &coords, ds.len()).map_err(data)?;
            writeln!(out, "{}\t{} points\tok", p.name, p.len()).map_err(io_out)
        }
    }
}

fn sample(a: SampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let features = match (&a.dataset, &a.features) {
        (Some(d), _) => load(d)?.features,
        (None, Some(f)) => {
            let raw = binmat::read_file(f).map_err(data)?;
            FeatureMatrix::new(raw.n_rows, raw.n_cols, raw.values)
        }
        (None, None) => return Err(CliError::Usage("--dataset or --features is required".into())),
    };
    let method: Method = a.method.into();
    let order = match method {
        Method::Random => {
            if a.first.is_some() {
                return Err(CliError::Usage("--first applies to faft only".into()));
            }
            sample_random(features.n_samples(), a.budget, a.seed).map_err(data)?.order
        }
        Method::Faft => match a.first {
            Some(first) => faft_from(&features, a.budget, first, a.metric.into()).map_err(data)?,
            None => sample_faft(&features, a.budget, a.seed, a.metric.into()).map_err(data)?.order,
        },
        Method::TwoDv => return Err(CliError::Usage("2dv orders come from interactive selection".into())),
    };
    let mut s = String::with_capacity(order.len() * 6);
    for i in order {
        s.push_str(&i.to_string());
        s.push('\n');
    }
    out.write_all(s.as_bytes()).map_err(io_out)
}

fn parse_bias(s: &str) -> Result<([f64; 2], f64), CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--bias expects x,y,radius, got {s:?}")))?;
    match parts[..] {
        [x, y, r] if r >= 0.0 => Ok(([x, y], r)),
        _ => Err(CliError::Usage(format!("--bias expects x,y,radius, got {s:?}"))),
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ds = load(&a.dataset)?;
    let bias = a.bias.as_deref().map(parse_bias).transpose()?;
    let pca = match bias {
        Some(_) => Some(compute_pca(&ds.features).map_err(data)?.projection),
        None => None,
    };
    let cfg = SessionConfig {
        dataset_name: ds.name.clone(),
        track: a.track,
        method: a.method.into(),
        budget: a.budget,
        seed: a.seed,
        annotator_id: a.annotator_id,
        annotator_group: a.annotator_group,
        metric: a.metric.into(),
    };
    let region = match (bias, &pca) {
        (Some((center, radius)), Some(p)) => Some(RegionBias { projection: p, center, radius }),
        _ => None,
    };
    let session = simulate_annotation(&ds, cfg, a.noise, region).map_err(data)?;
    if let Some(p) = &a.snapshot {
        std::fs::write(p, session.save()).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?;
    }
    let csv = session.export_csv();
    match &a.out {
        Some(p) => std::fs::write(p, csv).map_err(|e| CliError::Internal(format!("{}: {e}", p.display()))),
        None => out.write_all(&csv).map_err(io_out),
    }
}

fn read_annotators(paths: &[PathBuf]) -> Result<Vec<AnnotatorLabels>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        let records = read_export_csv(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        out.extend(analysis::annotators_from_records(&records).map_err(data)?);
    }
    Ok(out)
}

fn histograms(a: HistogramArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ds = load(&a.dataset)?;
    let scheme = ds
        .scheme(&a.track)
        .ok_or_else(|| CliError::Data(format!("unknown track {:?}", a.track)))?;
    let annotators = read_annotators(&a.labels)?;
    let mut groups = Vec::new();
    if let Ok(r) = analysis::reference_histogram(&ds, &a.track) {
        groups.push(HistogramGroup {
            name: "Reference".into(),
            annotators: vec!["ground_truth".into()],
            histograms: vec![r],
        });
    }
    groups.extend(analysis::method_histograms(scheme, &annotators, a.group.into()).map_err(data)?);
    let tsv = histogram_report_tsv(scheme, &groups).map_err(data)?;
    out.write_all(tsv.as_bytes()).map_err(io_out)?;
    if let Some(p) = &a.svg {
        let stats = groups.iter().map(|g| g.stats()).collect::<Result<Vec<_>, _>>().map_err(data)?;
        let series: Vec<BarSeries> = groups
            .iter()
            .zip(&stats)
            .map(|(g, s)| BarSeries { name: &g.name, stats: s })
            .collect();
        std::fs::write(p, histogram_chart_svg(scheme, &series))
            .map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn risk_report(a: RiskArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reports = match (&a.spec, &a.dataset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let spec: RiskSpec = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            spec.evaluate().map_err(data)?
        }
        (None, Some(dataset)) => vec![risk_from_labels(&a, dataset)?],
        (None, None) => return Err(CliError::Usage("--spec or --dataset is required".into())),
    };
    let body = if a.tsv { render_tsv(&reports) } else { render_table(&reports) };
    out.write_all(body.as_bytes()).map_err(io_out)
}

fn risk_from_labels(a: &RiskArgs, dataset: &Path) -> Result<crate::risk::RiskReport, CliError> {
    let ds = load(dataset)?;
    let annotators = read_annotators(&a.labels)?;
    let tracks: Vec<&str> = a.tracks.iter().map(String::as_str).collect();
    let available = annotators
        .iter()
        .filter(|x| tracks.contains(&x.track.as_str()))
        .map(|x| x.labels.len())
        .min()
        .ok_or_else(|| CliError::Data(format!("no labels for tracks {:?}", a.tracks)))?;
    let mut protocol = EvalProtocol::with_budget(available);
    if let Some(c) = &a.checkpoints {
        protocol.checkpoints = c.clone();
    }
    protocol.n_repeats = a.repeats;
    protocol.seed = a.seed;
    analysis::risk_from_annotations(&ds, &a.task, &tracks, &annotators, a.group.into(), &protocol, a.rare_threshold)
        .map_err(data)
}

fn eval_curve(a: CurveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ds = load(&a.dataset)?;
    let annotators = read_annotators(&a.labels)?;
    let grouped = analysis::by_method(&annotators, &a.track, a.group.into());
    if grouped.is_empty() {
        return Err(CliError::Data(format!("no labels for track {:?}", a.track)));
    }
    let mut curves = Vec::new();
    for m in Method::ALL {
        let Some(list) = grouped.get(&m) else { continue };
        let available = list.iter().map(|x| x.labels.len()).min().unwrap_or(0);
        let mut protocol = EvalProtocol::with_budget(available);
        if let Some(c) = &a.checkpoints {
            protocol.checkpoints = c.clone();
        }
        protocol.n_repeats = a.repeats;
        protocol.k = a.k;
        protocol.metric = a.metric.into();
        protocol.seed = a.seed;
        let curve = analysis::method_curve(&ds, &a.track, list, &protocol, a.merge).map_err(data)?;
        curves.push((m, curve));
    }
    let mut s = String::from("method\tn_labels\tmean_uar\tscores\n");
    for (m, c) in &curves {
        for p in &c.points {
            let scores: Vec<String> = p.scores.iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&format!("{}\t{}\t{:.6}\t{}\n", m.as_str(), p.n_labels, p.mean, scores.join(",")));
        }
    }
    out.write_all(s.as_bytes()).map_err(io_out)?;
    if let Some(p) = &a.svg {
        let named: Vec<(&str, &crate::eval::LearningCurve)> = curves.iter().map(|(m, c)| (m.as_str(), c)).collect();
        let svg = learning_curve_svg(&named, a.reference.map(|v| ("reference", v)));
        std::fs::write(p, svg).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let cfg = crate::server::ServeConfig {
        bind: a.bind,
        dataset_root: a.dataset,
        store: a.store,
    };
    rt.block_on(crate::server::serve(cfg)).map_err(|e| match e {
        crate::server::ServeError::IngestFailure(_) | crate::server::ServeError::Projection(_) => data(e),
        other => CliError::Internal(other.to_string()),
    })
}
