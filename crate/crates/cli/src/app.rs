use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hgkit_core::bbox::BBox;
use hgkit_core::eigencam::eigen_cam;
use hgkit_core::emca::{default_groups, emca_forward, CaaConfig, EmaConfig};
use hgkit_core::hyperconv::{
    build_hypergraph, gridize, propagate, to_map, Hypergraph, Metric, MetricKind, NodeSet,
};
use hgkit_core::losses::{
    bce_loss, ciou_box_loss, dfl_loss, grad_check, total_loss, DflBins, GradTarget, LossWeights,
    DEFAULT_STEP,
};
use hgkit_core::metrics::{evaluate, Detection, EvalOptions, GroundTruth};
use hgkit_core::{Matrix, SeededRng, Tensor};
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchSpec};
use crate::config::{ConfigError, RunConfig, Settings};
use crate::tensor_file;

#[derive(Debug, Parser)]
#[command(name = "hgkit", version, about = "Hypergraph, attention, loss, metric and Eigen-CAM tools")]
pub struct Cli {
    /// JSON file of settings; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build hypergraphs and run hypergraph convolution
    #[command(subcommand)]
    Hypergraph(HypergraphCmd),
    /// Multi-scale + context anchor attention
    #[command(subcommand)]
    Emca(EmcaCmd),
    /// Evaluate the composite detection loss
    #[command(subcommand)]
    Loss(LossCmd),
    /// Evaluate detections against ground truth
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Eigen-CAM heatmap of an activation tensor
    Cam(CamArgs),
    /// Time dense vs bucketed hypergraph construction
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum HypergraphCmd {
    /// Write the hypergraph of a feature tensor as JSON
    Build(InOut),
    /// Propagate features over their hypergraph (theta = identity)
    Conv(ConvArgs),
}

#[derive(Debug, Subcommand)]
pub enum EmcaCmd {
    /// Apply EMCA with seeded Glorot-uniform weights
    Forward(InOut),
}

#[derive(Debug, Subcommand)]
pub enum LossCmd {
    /// Loss terms, gradients and the weighted total from a JSON input
    Eval(LossArgs),
}

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    /// Match, AP/mAP, P/R/F1 report from JSON Lines inputs
    Eval(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct InOut {
    /// Input file (HGTN tensor; JSON for `loss eval`)
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output file (stdout when omitted, text outputs only)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvArgs {
    #[command(flatten)]
    pub io: InOut,
    /// Also write the hypergraph JSON here
    #[arg(long)]
    pub graph_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[command(flatten)]
    pub io: InOut,
    /// Include central-difference gradient checks
    #[arg(long)]
    pub grad_check: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Detections, one JSON object per line
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long)]
    pub gts: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Merged PR curve as CSV
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
    /// Number of classes (default: highest class id + 1)
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CamArgs {
    /// HGTN activation, (C,H,W) or (1,C,H,W)
    #[arg(long = "in")]
    pub input: PathBuf,
    /// PGM (P5) heatmap
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Heatmap size (default: activation size)
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub c: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Comma-separated metrics (default: all four)
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<MetricKind>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] anyhow::Error),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Data(_) => 1,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Usage(e.to_string())
    }
}

pub fn run(cli: Cli) -> Result<(), AppError> {
    let cfg = RunConfig::resolve(cli.settings, cli.config.as_deref())?;
    if let Command::Bench(args) = &cli.command {
        if args.n < 2 || args.reps < 3 {
            return Err(AppError::Usage(format!(
                "bench needs --n >= 2 and --reps >= 3 (got {} and {})",
                args.n, args.reps
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .context("starting worker pool")?;
    pool.install(|| dispatch(&cli.command, &cfg)).map_err(AppError::Data)
}

fn dispatch(command: &Command, cfg: &RunConfig) -> anyhow::Result<()> {
    match command {
        Command::Hypergraph(HypergraphCmd::Build(io)) => hypergraph_build(io, cfg),
        Command::Hypergraph(HypergraphCmd::Conv(args)) => hypergraph_conv(args, cfg),
        Command::Emca(EmcaCmd::Forward(io)) => emca(io, cfg),
        Command::Loss(LossCmd::Eval(args)) => loss(args, cfg),
        Command::Metrics(MetricsCmd::Eval(args)) => metrics(args, cfg),
        Command::Cam(args) => cam(args),
        Command::Bench(args) => run_bench(args, cfg),
    }
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().lock().write_all(bytes)?),
    }
}

fn pretty<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_tensor(path: &Path) -> anyhow::Result<Tensor> {
    tensor_file::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_tensor(path: Option<&Path>, t: &Tensor) -> anyhow::Result<()> {
    let Some(path) = path else {
        bail!("--out is required for tensor output");
    };
    tensor_file::write(path, t).with_context(|| format!("writing {}", path.display()))
}

/// `(N)` and `(N, C)` tensors are node lists; `(C, H, W)` and
/// `(1, C, H, W)` are feature maps.
fn load_nodes(t: &Tensor) -> anyhow::Result<NodeSet> {
    let d = t.dims();
    Ok(match d.len() {
        1 => NodeSet::from_matrix(Matrix::new(d[0], 1, t.data().to_vec())?),
        2 => NodeSet::from_matrix(Matrix::new(d[0], d[1], t.data().to_vec())?),
        3 => gridize(&t.clone().reshape(vec![1, d[0], d[1], d[2]])?)?,
        _ => gridize(t)?,
    })
}

fn resolve_metric(cfg: &RunConfig, nodes: &NodeSet) -> anyhow::Result<Metric> {
    let metric = match (cfg.metric, cfg.delta, cfg.sigma) {
        (MetricKind::GaussianKernel, _, Some(sigma)) => Metric::new(cfg.metric, cfg.tau, sigma)?,
        (kind, Some(delta), _) => Metric::new(kind, delta, 0.0)?,
        (kind, _, _) => Metric::from_percentile(kind, nodes, cfg.percentile, cfg.tau, cfg.seed)?,
    };
    eprintln!("metric: {metric}");
    Ok(metric)
}

fn hypergraph_build(io: &InOut, cfg: &RunConfig) -> anyhow::Result<()> {
    let nodes = load_nodes(&read_tensor(&io.input)?)?;
    let metric = resolve_metric(cfg, &nodes)?;
    let graph = build_hypergraph(&nodes, &metric)?;
    emit(io.out.as_deref(), &pretty(&graph)?)
}

fn hypergraph_conv(args: &ConvArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let input = read_tensor(&args.io.input)?;
    let nodes = load_nodes(&input)?;
    let metric = resolve_metric(cfg, &nodes)?;
    let graph: Hypergraph = build_hypergraph(&nodes, &metric)?;
    let out = propagate(nodes.features(), &graph, &Matrix::identity(nodes.dim()))?;
    let out = match input.rank() {
        1 | 2 => Tensor::new(input.dims().to_vec(), out.into_data())?,
        _ => to_map(&out, nodes.height(), nodes.width())?.reshape(input.dims().to_vec())?,
    };
    if let Some(p) = &args.graph_out {
        emit(Some(p), &pretty(&graph)?)?;
    }
    write_tensor(args.io.out.as_deref(), &out)
}

fn emca(io: &InOut, cfg: &RunConfig) -> anyhow::Result<()> {
    let input = read_tensor(&io.input)?;
    let x = match input.rank() {
        3 => {
            let d = input.dims().to_vec();
            input.reshape(vec![1, d[0], d[1], d[2]])?
        }
        4 => input,
        r => bail!("emca forward expects a (C,H,W) or (N,C,H,W) tensor, got rank {r}"),
    };
    let channels = x.dims()[1];
    let groups = cfg.groups.unwrap_or_else(|| default_groups(channels));
    let mut rng = SeededRng::new(cfg.seed);
    let ema = EmaConfig::random(channels, groups, &mut rng)?;
    let caa = CaaConfig::random(channels, cfg.kernel, &mut rng)?;
    eprintln!("emca: C={channels} g={groups} k={} seed={}", cfg.kernel, cfg.seed);
    write_tensor(io.out.as_deref(), &emca_forward(&x, &ema, &caa)?)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossInput {
    cls: Option<ClsInput>,
    #[serde(rename = "box")]
    bbox: Option<BoxInput>,
    dfl: Option<DflInput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClsInput {
    p: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxInput {
    pred: BBox,
    gt: BBox,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DflInput {
    /// Defaults to unit spacing `0..len`.
    positions: Option<Vec<f64>>,
    probs: Option<Vec<f64>>,
    logits: Option<Vec<f64>>,
    target: f64,
}

#[derive(Debug, Serialize)]
struct LossReport {
    weights: LossWeights,
    total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cls: Option<TermReport>,
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    bbox: Option<BoxReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dfl: Option<DflReport>,
}

#[derive(Debug, Serialize)]
struct TermReport {
    value: f64,
    grad: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_check_max_rel_error: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BoxReport {
    value: f64,
    iou: f64,
    ciou: f64,
    alpha: f64,
    grad: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_check_max_rel_error: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DflReport {
    value: f64,
    lower_bin: usize,
    grad_probs: Vec<f64>,
    grad_logits: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_check_max_rel_error: Option<f64>,
}

fn loss(args: &LossArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let path = &args.io.input;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let input: LossInput =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let check = |t: GradTarget| -> anyhow::Result<Option<f64>> {
        Ok(if args.grad_check {
            Some(grad_check(&t, DEFAULT_STEP)?.max_rel_error)
        } else {
            None
        })
    };

    let cls = match input.cls {
        Some(c) => {
            let l = bce_loss(&c.p, &c.y)?;
            Some(TermReport {
                value: l.value,
                grad: l.grad,
                grad_check_max_rel_error: check(GradTarget::Bce { p: c.p, y: c.y })?,
            })
        }
        None => None,
    };
    let bbox = match input.bbox {
        Some(b) => {
            let l = ciou_box_loss(&b.pred, &b.gt)?;
            Some(BoxReport {
                value: l.value,
                iou: l.iou,
                ciou: l.ciou,
                alpha: l.alpha,
                grad: l.grad,
                grad_check_max_rel_error: check(GradTarget::Ciou { pred: b.pred, gt: b.gt })?,
            })
        }
        None => None,
    };
    let dfl = match input.dfl {
        Some(d) => {
            let len = d.probs.as_ref().or(d.logits.as_ref()).map_or(0, Vec::len);
            let positions = d.positions.unwrap_or_else(|| DflBins::unit_positions(len));
            let (bins, logits) = match (d.probs, d.logits) {
                (Some(p), None) => (DflBins::new(positions.clone(), p)?, None),
                (None, Some(z)) => (DflBins::from_logits(positions.clone(), &z)?, Some(z)),
                _ => bail!("dfl input needs exactly one of \"probs\" or \"logits\""),
            };
            let l = dfl_loss(&bins, d.target)?;
            let checked = match logits {
                Some(logits) => check(GradTarget::Dfl {
                    positions,
                    logits,
                    target: d.target,
                })?,
                None => None,
            };
            Some(DflReport {
                value: l.value,
                lower_bin: l.lower,
                grad_probs: l.grad_probs,
                grad_logits: l.grad_logits,
                grad_check_max_rel_error: checked,
            })
        }
        None => None,
    };

    let value = |v: Option<f64>| v.unwrap_or(0.0);
    let total = total_loss(
        value(cls.as_ref().map(|c| c.value)),
        value(bbox.as_ref().map(|b| b.value)),
        value(dfl.as_ref().map(|d| d.value)),
        &cfg.weights,
    );
    let report = LossReport {
        weights: cfg.weights,
        total,
        cls,
        bbox,
        dfl,
    };
    emit(args.io.out.as_deref(), &pretty(&report)?)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))
        })
        .collect()
}

fn metrics(args: &MetricsArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let dets: Vec<Detection> = read_jsonl(&args.dets)?;
    let gts: Vec<GroundTruth> = read_jsonl(&args.gts)?;
    let classes = args.classes.unwrap_or_else(|| {
        dets.iter()
            .map(|d| d.class)
            .chain(gts.iter().map(|g| g.class))
            .max()
            .map_or(1, |c| c + 1)
    });
    let opts = EvalOptions {
        classes,
        iou: cfg.iou,
        sweep: cfg.sweep.clone(),
    };
    let report = evaluate(&dets, &gts, &opts)?;
    if !report.excluded.is_empty() {
        eprintln!("classes without ground truth (excluded from means): {:?}", report.excluded);
    }
    if let Some(p) = &args.pr_csv {
        let mut csv = String::from("recall,precision\n");
        for pt in &report.curve {
            csv.push_str(&format!("{},{}\n", pt.recall, pt.precision));
        }
        emit(Some(p), csv.as_bytes())?;
    }
    emit(args.out.as_deref(), &pretty(&report)?)
}

fn cam(args: &CamArgs) -> anyhow::Result<()> {
    let input = read_tensor(&args.input)?;
    let act = match input.rank() {
        3 => {
            let d = input.dims().to_vec();
            input.reshape(vec![1, d[0], d[1], d[2]])?
        }
        4 => input,
        r => bail!("cam expects a (C,H,W) or (1,C,H,W) activation, got rank {r}"),
    };
    let (_, _, h, w) = act.nchw()?;
    let result = eigen_cam(&act, args.height.unwrap_or(h), args.width.unwrap_or(w))?;
    if result.degenerate {
        eprintln!("warning: activation has no contrast; heatmap is all zeros");
    }
    if let Some(p) = &args.csv {
        emit(Some(p), result.heatmap.to_csv().as_bytes())?;
    }
    emit(Some(&args.out), &result.heatmap.to_pgm())
}

fn run_bench(args: &BenchArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let metrics = if args.metrics.is_empty() {
        MetricKind::ALL.to_vec()
    } else {
        args.metrics.clone()
    };
    let rows = bench::run(&BenchSpec {
        n: args.n,
        c: args.c,
        metrics,
        reps: args.reps,
        seed: cfg.seed,
        percentile: cfg.percentile,
        tau: cfg.tau,
    })?;
    emit(args.out.as_deref(), bench::to_csv(&rows).as_bytes())
}
