use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dgsp::distrib::DistSignalFile;
use dgsp::graph::{self, GraphFile, KnnWeighting};
use dgsp::io;
use dgsp::operators::{self, OperatorPair, PushMode, PushOptions};
use dgsp::pipelines::{anomaly, edgewise, weather};
use dgsp::sampling::{self, SampleSet};
use dgsp::wasserstein::{self, W2Options};
use dgsp::{DistSignal, Empirical, Graph, GsoKind};

mod config;

#[derive(Parser, Debug)]
#[command(name = "dgsp", version, about = "Distributional graph signal processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// Seed for every random draw; required by commands that sample.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Monte Carlo draws per sampled distribution.
    #[arg(long, default_value_t = wasserstein::DEFAULT_BUDGET)]
    budget: usize,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output file (or prefix for commands writing several files).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// JSON file of option values; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

impl Common {
    fn seed(&self, what: &str) -> Result<u64> {
        self.seed.with_context(|| format!("{what} needs an explicit --seed"))
    }

    fn out_prefix(&self, what: &str) -> Result<&Path> {
        self.out.as_deref().with_context(|| format!("{what} needs --out"))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a graph and write it as JSON.
    Graph(GraphArgs),
    /// Wasserstein-2 distance between two distributional signals.
    W2(W2Args),
    /// Push a distributional signal through an operator pair.
    Push(PushArgs),
    /// Conditional expectation of an operator pair at a signal.
    Expect(ExpectArgs),
    /// Apply `r·c1 ⊞ c2` to a distributional signal.
    Boxplus(BoxplusArgs),
    /// Continuity probe: input versus output distances under shrinking shifts.
    Probe(ProbeArgs),
    /// Identify the subspace behind vertex samples and recover the signal.
    Recover(RecoverArgs),
    /// Fit an edgewise Gaussian model to lattice images and sample from it.
    PipelineMnist(MnistArgs),
    /// Learn predictive filters with signal-dependent coefficients.
    PipelineWeather(WeatherArgs),
    /// Anomaly classification with combined signal-adaptive filters.
    PipelineAnomaly(AnomalyArgs),
    /// Run the exact-path invariant checks.
    Selftest(SelftestArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Graph(_) => "graph",
            Command::W2(_) => "w2",
            Command::Push(_) => "push",
            Command::Expect(_) => "expect",
            Command::Boxplus(_) => "boxplus",
            Command::Probe(_) => "probe",
            Command::Recover(_) => "recover",
            Command::PipelineMnist(_) => "pipeline-mnist",
            Command::PipelineWeather(_) => "pipeline-weather",
            Command::PipelineAnomaly(_) => "pipeline-anomaly",
            Command::Selftest(_) => "selftest",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Graph(a) => &a.common,
            Command::W2(a) => &a.common,
            Command::Push(a) => &a.common,
            Command::Expect(a) => &a.common,
            Command::Boxplus(a) => &a.common,
            Command::Probe(a) => &a.common,
            Command::Recover(a) => &a.common,
            Command::PipelineMnist(a) => &a.common,
            Command::PipelineWeather(a) => &a.common,
            Command::PipelineAnomaly(a) => &a.common,
            Command::Selftest(a) => &a.common,
        }
    }

    fn options(&self) -> Result<Value> {
        Ok(match self {
            Command::Graph(a) => serde_json::to_value(a)?,
            Command::W2(a) => serde_json::to_value(a)?,
            Command::Push(a) => serde_json::to_value(a)?,
            Command::Expect(a) => serde_json::to_value(a)?,
            Command::Boxplus(a) => serde_json::to_value(a)?,
            Command::Probe(a) => serde_json::to_value(a)?,
            Command::Recover(a) => serde_json::to_value(a)?,
            Command::PipelineMnist(a) => serde_json::to_value(a)?,
            Command::PipelineWeather(a) => serde_json::to_value(a)?,
            Command::PipelineAnomaly(a) => serde_json::to_value(a)?,
            Command::Selftest(a) => serde_json::to_value(a)?,
        })
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GraphKind {
    Path,
    Lattice,
    Knn,
    Product,
}

#[derive(Args, Debug, Serialize)]
struct GraphArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    kind: GraphKind,
    /// Vertex count for `path`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rows: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cols: Option<usize>,
    /// CSV of points, one per row, for `knn`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    /// Gaussian weight width for `knn` (unit weights when absent).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Join only mutual nearest neighbours.
    #[arg(long)]
    mutual: bool,
    /// Factor graphs for `product`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct W2Args {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Largest combined support solved exactly.
    #[arg(long, default_value_t = wasserstein::DEFAULT_EXACT_CAP)]
    exact_cap: usize,
    /// Write the optimal coupling (finite supports only) as CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Auto,
    Sample,
}

impl From<ModeArg> for PushMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => PushMode::Auto,
            ModeArg::Sample => PushMode::ForceSampling,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct PushArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Operator pair JSON.
    #[arg(long)]
    op: PathBuf,
    /// Distributional signal JSON.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
}

#[derive(Args, Debug, Serialize)]
struct ExpectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    op: PathBuf,
    /// Signal as a JSON array or a one-row/one-column CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<PathBuf>,
    /// Print the expectation matrix (constant structures only) instead.
    #[arg(long)]
    matrix: bool,
}

#[derive(Args, Debug, Serialize)]
struct BoxplusArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    op1: PathBuf,
    #[arg(long)]
    op2: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Scalar `r` applied to the first pair.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    scale: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
}

#[derive(Args, Debug, Serialize)]
struct ProbeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    op: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Nonincreasing shift sizes.
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25,0.125,0")]
    scales: Vec<f64>,
}

#[derive(Args, Debug, Serialize)]
struct RecoverArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Directory of candidate bases, one `n × m` CSV each (taken in file-name order).
    #[arg(long)]
    bases: PathBuf,
    /// `{"indices": [...], "values": [...]}`
    #[arg(long)]
    samples: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MnistArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long, default_value_t = 8)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    cols: usize,
    /// Training images as CSV rows (row-major pixels); synthetic when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    /// Synthetic training images to generate.
    #[arg(long, default_value_t = 500)]
    train_count: usize,
    /// Images to sample from the fitted model.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Root vertex of the sampling orientation.
    #[arg(long, default_value_t = 0)]
    root: usize,
    /// Also write images thresholded at this level.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    /// Per-pixel variance of the noisy-copy baseline written next to the samples.
    #[arg(long, default_value_t = 0.1)]
    noise_variance: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum WeatherMode {
    Pointwise,
    Distributional,
    Both,
}

#[derive(Args, Debug, Serialize)]
struct WeatherArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Station graph JSON; with `--train` and `--test` replaces the synthetic data.
    #[arg(long, requires_all = ["train", "test"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<PathBuf>,
    /// Training groups JSON: `[{"inputs": [[...]], "targets": [[...]]}]`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    /// Test groups JSON in the same format.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    stations: usize,
    #[arg(long, default_value_t = 40)]
    train_groups: usize,
    #[arg(long, default_value_t = 10)]
    test_groups: usize,
    #[arg(long, default_value_t = 7)]
    days: usize,
    /// Filter degree in the normalized Laplacian.
    #[arg(long, default_value_t = 2)]
    degree: usize,
    /// Degree of each coefficient as a polynomial in the average reading.
    #[arg(long, default_value_t = 2)]
    coeff_degree: usize,
    #[arg(long, default_value_t = 1.0)]
    a_scale: f64,
    #[arg(long, value_enum, default_value_t = WeatherMode::Both)]
    mode: WeatherMode,
}

#[derive(Args, Debug, Serialize)]
struct AnomalyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Recordings JSON `{"candidates": [graph], "train": [class], "test": [class]}`;
    /// synthetic when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    sensors: usize,
    #[arg(long, default_value_t = 10)]
    path_len: usize,
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

#[derive(Args, Debug, Serialize)]
struct SelftestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    match run(argv) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let numerical = err.chain().any(|e| e.downcast_ref::<dgsp::Error>().is_some_and(dgsp::Error::is_numerical));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn parse(argv: Vec<OsString>) -> Result<Option<Cli>> {
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => return clap_failure(e),
    };
    let argv = config::merge(argv, &matches)?;
    match Cli::command().try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => Ok(Some(cli)),
        Err(e) => clap_failure(e),
    }
}

fn clap_failure(e: clap::Error) -> Result<Option<Cli>> {
    use clap::error::ErrorKind;
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
        e.print()?;
        return Ok(None);
    }
    let text = e.render().to_string();
    bail!("{}", text.trim_start_matches("error: ").trim_end())
}

fn run(argv: Vec<OsString>) -> Result<ExitCode> {
    let Some(cli) = parse(argv)? else { return Ok(ExitCode::SUCCESS) };
    let common = cli.command.common().clone();
    if common.workers == 0 {
        bail!("--workers must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(common.workers).build_global()?;

    let mut outputs = Vec::new();
    let code = match &cli.command {
        Command::Graph(a) => cmd_graph(a, &mut outputs)?,
        Command::W2(a) => cmd_w2(a, &mut outputs)?,
        Command::Push(a) => cmd_push(a, &mut outputs)?,
        Command::Expect(a) => cmd_expect(a, &mut outputs)?,
        Command::Boxplus(a) => cmd_boxplus(a, &mut outputs)?,
        Command::Probe(a) => cmd_probe(a, &mut outputs)?,
        Command::Recover(a) => cmd_recover(a, &mut outputs)?,
        Command::PipelineMnist(a) => cmd_mnist(a, &mut outputs)?,
        Command::PipelineWeather(a) => cmd_weather(a, &mut outputs)?,
        Command::PipelineAnomaly(a) => cmd_anomaly(a, &mut outputs)?,
        Command::Selftest(a) => cmd_selftest(a)?,
    };

    let manifest = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "options": cli.command.options()?,
        "outputs": outputs,
    });
    match &common.out {
        Some(out) => fs::write(suffixed(out, ".manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?,
        None => eprintln!("manifest: {manifest}"),
    }
    Ok(code)
}

/// `path` with `suffix` appended to its file name.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `text` to `--out` when given (recording it), else prints it.
fn emit(common: &Common, text: &str, outputs: &mut Vec<String>) -> Result<()> {
    match &common.out {
        Some(out) => {
            fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
            outputs.push(out.display().to_string());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn write_file(path: PathBuf, text: &str, outputs: &mut Vec<String>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(path.display().to_string());
    Ok(())
}

fn read_signal(path: &Path) -> Result<DistSignal> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    DistSignal::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_graph(path: &Path) -> Result<Graph> {
    Graph::load_json(path).with_context(|| format!("loading graph {}", path.display()))
}

fn read_pair(path: &Path) -> Result<OperatorPair> {
    OperatorPair::load_json(path).with_context(|| format!("loading operator pair {}", path.display()))
}

fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let values: Vec<f64> = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let rows = io::read_numeric_csv(path).with_context(|| format!("reading {}", path.display()))?;
        match rows.as_slice() {
            [row] => row.clone(),
            _ if rows.iter().all(|r| r.len() == 1) => rows.iter().map(|r| r[0]).collect(),
            _ => bail!("{}: expected one row or one column", path.display()),
        }
    };
    if values.is_empty() {
        bail!("{}: empty signal", path.display());
    }
    Ok(DVector::from_vec(values))
}

/// One-atom empirical laws are written as point masses.
fn simplify(d: DistSignal) -> DistSignal {
    match d {
        DistSignal::Empirical(e) if e.len() == 1 => DistSignal::Delta(e.points()[0].clone()),
        other => other,
    }
}

fn signal_json(d: &DistSignal) -> Result<String> {
    Ok(serde_json::to_string_pretty(&DistSignalFile::from_signal(d))? + "\n")
}

fn vec_list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn cmd_graph(a: &GraphArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let need = |v: Option<usize>, flag: &str| v.with_context(|| format!("--kind {:?} needs --{flag}", a.kind));
    let g = match a.kind {
        GraphKind::Path => graph::build_path(need(a.n, "n")?)?,
        GraphKind::Lattice => graph::build_lattice(need(a.rows, "rows")?, need(a.cols, "cols")?)?,
        GraphKind::Knn => {
            let path = a.points.as_deref().context("--kind knn needs --points")?;
            let rows = io::read_numeric_csv(path).with_context(|| format!("reading {}", path.display()))?;
            let weighting = a.sigma.map_or(KnnWeighting::Unit, |sigma| KnnWeighting::Gaussian { sigma });
            graph::build_knn(&rows, need(a.k, "k")?, !a.mutual, weighting)?
        }
        GraphKind::Product => {
            let ga = read_graph(a.a.as_deref().context("--kind product needs --a")?)?;
            let gb = read_graph(a.b.as_deref().context("--kind product needs --b")?)?;
            graph::cartesian_product(&ga, &gb)?
        }
    };
    let file: GraphFile = g.to_file();
    emit(&a.common, &(serde_json::to_string_pretty(&file)? + "\n"), outputs)?;
    eprintln!("{} vertices, {} edges", g.n(), g.edge_count());
    Ok(ExitCode::SUCCESS)
}

fn cmd_w2(a: &W2Args, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let (mu1, mu2) = (read_signal(&a.a)?, read_signal(&a.b)?);
    let opts = W2Options { budget: a.common.budget, seed: a.common.seed, exact_cap: a.exact_cap, ..W2Options::default() };
    let value = wasserstein::w2(&mu1, &mu2, &opts)?;
    if let Some(plan_path) = &a.plan {
        let support = |d: &DistSignal| match d {
            DistSignal::Delta(x) => Some(Empirical::dirac(x.clone())),
            DistSignal::Empirical(e) => Some(e.clone()),
            _ => None,
        };
        let (Some(e1), Some(e2)) = (support(&mu1), support(&mu2)) else {
            bail!("--plan needs point-mass or empirical inputs");
        };
        let (_, plan) = wasserstein::w2_empirical_exact_with_cap(&e1, &e2, a.exact_cap)?;
        plan.write_csv(plan_path)?;
        outputs.push(plan_path.display().to_string());
    }
    println!("{}", io::format_f64(value.distance));
    if a.common.out.is_some() {
        emit(&a.common, &(serde_json::to_string_pretty(&value)? + "\n"), outputs)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_push(a: &PushArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let c = read_pair(&a.op)?;
    let mu = read_signal(&a.input)?;
    let opts = PushOptions { budget: a.common.budget, seed: a.common.seed, mode: a.mode.into() };
    let out = simplify(operators::pushforward(&c, &mu, &opts)?);
    emit(&a.common, &signal_json(&out)?, outputs)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_expect(a: &ExpectArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let c = read_pair(&a.op)?;
    let text = if a.matrix {
        let m: DMatrix<f64> = operators::cond_expectation_operator(&c)?;
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde_json::to_string_pretty(&rows)?
    } else {
        let x = read_vector(a.x.as_deref().context("expect needs --x (or --matrix)")?)?;
        serde_json::to_string(&vec_list(&operators::cond_expectation(&c, &x)?))?
    };
    emit(&a.common, &(text + "\n"), outputs)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_boxplus(a: &BoxplusArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let c1 = operators::scalar_mul(a.scale, &read_pair(&a.op1)?);
    let c2 = read_pair(&a.op2)?;
    let mu = read_signal(&a.input)?;
    let opts = PushOptions { budget: a.common.budget, seed: a.common.seed, mode: a.mode.into() };
    let out = simplify(operators::boxplus(&c1, &c2, &mu, &opts)?);
    emit(&a.common, &signal_json(&out)?, outputs)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_probe(a: &ProbeArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let seed = a.common.seed("probe")?;
    let c = read_pair(&a.op)?;
    let mu = read_signal(&a.input)?;
    let rows = operators::continuity_probe(&c, &mu, &a.scales, a.common.budget, seed)?;
    let mut text = String::from("scale,input_w2,output_w2\n");
    for r in rows {
        text += &format!("{},{},{}\n", io::format_f64(r.scale), io::format_f64(r.input_w2), io::format_f64(r.output_w2));
    }
    emit(&a.common, &text, outputs)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_recover(a: &RecoverArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let mut files: Vec<PathBuf> = fs::read_dir(&a.bases)
        .with_context(|| format!("reading {}", a.bases.display()))?
        .map(|e| Ok(e?.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("{} holds no .csv bases", a.bases.display());
    }
    let bases = files
        .iter()
        .map(|f| io::read_matrix_csv(f).with_context(|| format!("reading {}", f.display())))
        .collect::<Result<Vec<_>>>()?;
    let text = fs::read_to_string(&a.samples).with_context(|| format!("reading {}", a.samples.display()))?;
    let samples: SampleSet = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.samples.display()))?;
    let id = sampling::identify_subspace(&bases, &samples)?;
    let residuals: Vec<Value> = files
        .iter()
        .zip(&id.residuals)
        .map(|(f, r)| json!({"basis": f.file_name().map(|n| n.to_string_lossy().into_owned()), "residual": r}))
        .collect();
    let out = json!({
        "index": id.index,
        "basis": files[id.index].file_name().map(|n| n.to_string_lossy().into_owned()),
        "signal": vec_list(&id.signal),
        "residuals": residuals,
    });
    emit(&a.common, &(serde_json::to_string_pretty(&out)? + "\n"), outputs)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_mnist(a: &MnistArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let seed = a.common.seed("pipeline-mnist")?;
    let prefix = a.common.out_prefix("pipeline-mnist")?;
    let g = graph::build_lattice(a.rows, a.cols)?;
    let train = match &a.train {
        Some(p) => io::read_points_csv(p).with_context(|| format!("reading {}", p.display()))?,
        None => edgewise::synthetic_images(a.rows, a.cols, a.train_count, dgsp::rng::derive_seed(seed, 1)),
    };
    let model = edgewise::fit_edgewise_rooted(&train, &g, a.root)?;
    write_file(suffixed(prefix, ".model.json"), &(serde_json::to_string_pretty(&model)? + "\n"), outputs)?;
    let draws = model.samples(a.samples, dgsp::rng::derive_seed(seed, 2));
    let path = suffixed(prefix, ".samples.csv");
    io::write_points_csv(&path, &draws)?;
    outputs.push(path.display().to_string());
    if let Some(level) = a.threshold {
        let binary: Vec<DVector<f64>> = draws.iter().map(|x| edgewise::threshold(x, level)).collect();
        let path = suffixed(prefix, ".thresholded.csv");
        io::write_points_csv(&path, &binary)?;
        outputs.push(path.display().to_string());
    }
    let noisy = edgewise::add_pixel_noise(&train, a.noise_variance, dgsp::rng::derive_seed(seed, 3))?;
    let path = suffixed(prefix, ".noisy.csv");
    io::write_points_csv(&path, &noisy)?;
    outputs.push(path.display().to_string());
    eprintln!("fitted {} edges from {} images; wrote {} samples", model.edges.len(), train.len(), draws.len());
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct GroupFile {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

fn read_groups(path: &Path) -> Result<Vec<weather::Group>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let files: Vec<GroupFile> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(files
        .into_iter()
        .map(|g| weather::Group {
            inputs: g.inputs.into_iter().map(DVector::from_vec).collect(),
            targets: g.targets.into_iter().map(DVector::from_vec).collect(),
        })
        .collect())
}

/// Generating family of the synthetic weather data.
fn weather_truth(a_scale: f64) -> Result<weather::FilterFamily> {
    Ok(weather::FilterFamily::new(
        GsoKind::NormalizedLaplacian,
        vec![vec![0.6, 0.2, -0.1], vec![-0.3, 0.1, 0.05], vec![0.1, -0.05, 0.02]],
        a_scale,
    )?)
}

fn cmd_weather(a: &WeatherArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let seed = a.common.seed("pipeline-weather")?;
    let prefix = a.common.out_prefix("pipeline-weather")?;
    let (g, train, test) = match (&a.graph, &a.train, &a.test) {
        (Some(gp), Some(tr), Some(te)) => (read_graph(gp)?, read_groups(tr)?, read_groups(te)?),
        (None, None, None) => {
            let g = weather::synthetic_stations(a.stations, seed)?;
            let truth = weather_truth(a.a_scale)?;
            let train = weather::synthetic_groups(&g, &truth, a.train_groups, a.days, dgsp::rng::derive_seed(seed, 1))?;
            let test = weather::synthetic_groups(&g, &truth, a.test_groups, a.days, dgsp::rng::derive_seed(seed, 2))?;
            (g, train, test)
        }
        _ => bail!("--graph, --train and --test go together"),
    };
    let config = weather::LearnConfig { degree: a.degree, coeff_degree: a.coeff_degree, a_scale: a.a_scale, ..Default::default() };
    let pairs: Vec<(DVector<f64>, DVector<f64>)> =
        test.iter().flat_map(|grp| grp.inputs.iter().cloned().zip(grp.targets.iter().cloned())).collect();

    let mut modes = Vec::new();
    if a.mode != WeatherMode::Distributional {
        modes.push(("pointwise", weather::LearnMode::Pointwise));
    }
    if a.mode != WeatherMode::Pointwise {
        modes.push(("distributional", weather::LearnMode::Distributional));
    }
    let mut families = serde_json::Map::new();
    let mut tables = Vec::new();
    for (name, mode) in modes {
        let learned = weather::learn_predictive_filter(&g, &train, mode, &config)?;
        let snr = weather::evaluate_snr(&learned.family, &g, &pairs)?;
        eprintln!("{name}: training loss {:e}, mean test SNR {:.2} dB", learned.losses.last().unwrap_or(&0.0), snr.mean_db);
        families.insert(name.into(), json!({"family": learned.family, "final_loss": learned.losses.last(), "mean_snr_db": snr.mean_db}));
        tables.push((name, snr));
    }
    write_file(suffixed(prefix, ".family.json"), &(serde_json::to_string_pretty(&families)? + "\n"), outputs)?;
    let mut csv = String::from("index");
    for (name, _) in &tables {
        csv += &format!(",{name}_db");
    }
    csv += "\n";
    for i in 0..pairs.len() {
        csv += &i.to_string();
        for (_, t) in &tables {
            csv += &format!(",{}", io::format_f64(t.snr_db[i]));
        }
        csv += "\n";
    }
    write_file(suffixed(prefix, ".snr.csv"), &csv, outputs)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct ClassFile {
    subject: String,
    condition: String,
    signals: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RecordingsFile {
    candidates: Vec<GraphFile>,
    train: Vec<ClassFile>,
    test: Vec<ClassFile>,
}

fn classes(files: Vec<ClassFile>) -> Vec<anomaly::LabeledSignals> {
    files
        .into_iter()
        .map(|c| anomaly::LabeledSignals {
            label: anomaly::ClassLabel { subject: c.subject, condition: c.condition },
            signals: c.signals.into_iter().map(DVector::from_vec).collect(),
        })
        .collect()
}

fn cmd_anomaly(a: &AnomalyArgs, outputs: &mut Vec<String>) -> Result<ExitCode> {
    let seed = a.common.seed("pipeline-anomaly")?;
    let prefix = a.common.out_prefix("pipeline-anomaly")?;
    let data = match &a.data {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let file: RecordingsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            anomaly::SyntheticRecordings {
                candidates: file.candidates.iter().map(Graph::from_file).collect::<dgsp::Result<_>>()?,
                train: classes(file.train),
                test: classes(file.test),
            }
        }
        None => anomaly::synthetic_recordings(a.sensors, a.path_len, a.per_class, dgsp::rng::derive_seed(seed, 1))?,
    };
    let sensors = data.candidates.first().context("no candidate graphs")?.n();
    let config = anomaly::synthetic_config(sensors * a.path_len, a.path_len, dgsp::rng::derive_seed(seed, 2));
    let model = anomaly::build_anomaly_model(&data.train, &data.candidates, &config)?;
    let peaks: Vec<Value> = model
        .classes
        .iter()
        .map(|(label, m)| {
            let comps: Vec<Value> = m.components().iter().map(|(w, g)| json!({"weight": w, "peak": vec_list(g.mean())})).collect();
            json!({"subject": label.subject, "condition": label.condition, "components": comps})
        })
        .collect();
    write_file(suffixed(prefix, ".model.json"), &(serde_json::to_string_pretty(&peaks)? + "\n"), outputs)?;
    let curve = anomaly::accuracy_curve(&model, &data.test, &a.ks, a.trials, dgsp::rng::derive_seed(seed, 3))?;
    let mut csv = String::from("k,condition_accuracy,class_accuracy\n");
    for r in &curve {
        csv += &format!("{},{},{}\n", r.k, io::format_f64(r.condition_accuracy), io::format_f64(r.class_accuracy));
        eprintln!("k = {}: condition accuracy {:.3}", r.k, r.condition_accuracy);
    }
    write_file(suffixed(prefix, ".accuracy.csv"), &csv, outputs)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(a: &SelftestArgs) -> Result<ExitCode> {
    let rows = dgsp::selftest::run_selftest(a.common.seed.unwrap_or(0))?;
    let mut all = true;
    for r in &rows {
        all &= r.passed;
        println!("{}  {:<50} worst {:.3e} (tol {:.0e})", if r.passed { "PASS" } else { "FAIL" }, r.name, r.worst, r.tolerance);
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
