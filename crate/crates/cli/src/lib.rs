//! The `adamerge` command-line front end.
//!
//! Argument types live here so integration tests can drive the commands
//! in-process; `main.rs` only maps results to exit codes.

pub mod report;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use adamerge_core::calibration::{refine, save_stats, CalibrationConfig};
use adamerge_core::flops::{schedule_flops, tome_block_lengths, trace_flops, FlopsConvention};
use adamerge_core::runtime::{forward_model, schedule_for, Method, RunConfig, RunOutput};
use adamerge_core::{
    load_stats, synth_dataset, synth_weights, Dataset, LayerStats, ModelDims, ModelWeights, Redundancy,
    SalienceSource, SynthConfig, TieBreak,
};

use report::CompareRow;

pub const SEED_ENV: &str = "ADAMERGE_SEED";

#[derive(Debug, Parser)]
#[command(name = "adamerge", version, about = "Adaptive token merging for ViTs")]
pub struct Cli {
    /// Worker threads for dataset-parallel work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic token dataset with controlled redundancy.
    Synth(SynthArgs),
    /// Generate random ViT weights.
    Weights(WeightsArgs),
    /// Estimate per-layer redundancy statistics for the adaptive schedule.
    Calibrate(CalibrateArgs),
    /// Run one method over a dataset and emit per-layer traces.
    Run(RunArgs),
    /// Compare several method configurations.
    Compare(CompareArgs),
    /// Emit the survived/merged map of one image.
    Viz(VizArgs),
    /// Print the analytic FLOPs table for fixed-r schedules.
    Flops(FlopsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    None,
    Tome,
    Adamerge,
    SwOnly,
    AdpOnly,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::None => Method::None,
            MethodArg::Tome => Method::Tome,
            MethodArg::Adamerge => Method::AdaMerge,
            MethodArg::SwOnly => Method::SwOnly,
            MethodArg::AdpOnly => Method::AdpOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum SalienceArg {
    #[default]
    Normalized,
    Raw,
}

impl From<SalienceArg> for SalienceSource {
    fn from(s: SalienceArg) -> Self {
        match s {
            SalienceArg::Normalized => SalienceSource::Normalized,
            SalienceArg::Raw => SalienceSource::Raw,
        }
    }
}

fn parse_redundancy(s: &str) -> std::result::Result<Redundancy, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    let r = match s.split_once(':') {
        Some((lo, hi)) => Redundancy::Uniform(num(lo)?, num(hi)?),
        None => Redundancy::Fixed(num(s)?),
    };
    r.validate().map_err(|e| e.to_string())?;
    Ok(r)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub images: usize,
    /// Patch tokens per image (CLS excluded).
    #[arg(long, default_value_t = 196)]
    pub tokens: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// A fixed ratio `0.7` or a per-image uniform range `0:1`.
    #[arg(long, value_parser = parse_redundancy, default_value = "0:1")]
    pub redundancy: Redundancy,
    #[arg(long, default_value_t = adamerge_core::dataset::MAX_PROTOTYPES)]
    pub prototypes: usize,
    #[arg(long, default_value_t = adamerge_core::dataset::DEFAULT_NOISE)]
    pub noise: f32,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub mlp_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = adamerge_core::model::DEFAULT_INIT_STD)]
    pub init_std: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, value_enum, default_value_t)]
    pub salience: SalienceArg,
    /// Break exact score ties with this seed instead of by index.
    #[arg(long)]
    pub tie_seed: Option<u64>,
}

impl ScheduleArgs {
    fn tie_break(&self) -> TieBreak {
        self.tie_seed.map_or(TieBreak::Index, TieBreak::Seeded)
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Adamerge)]
    pub method: MethodArg,
    #[arg(long)]
    pub r_max: usize,
    #[arg(long, default_value_t = adamerge_core::calibration::DEFAULT_PASSES)]
    pub passes: usize,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Merges per layer for fixed methods, `r_max` for adaptive ones.
    #[arg(long, alias = "r-max", default_value_t = 0)]
    pub r: usize,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Count the affinity-matrix cost of merging in the FLOPs figures.
    #[arg(long)]
    pub include_overhead: bool,
    /// Per-layer trace CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Machine-readable summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// `method[:r]`, e.g. `tome:8`, `adamerge:23`, `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigSpec {
    pub method: Method,
    pub r: usize,
}

impl ConfigSpec {
    pub fn label(&self) -> String {
        match self.method {
            Method::None => "none".into(),
            m => format!("{m}:{}", self.r),
        }
    }
}

fn parse_config(s: &str) -> std::result::Result<ConfigSpec, String> {
    let (m, r) = match s.split_once(':') {
        Some((m, r)) => (m, Some(r.parse::<usize>().map_err(|e| format!("`{r}`: {e}"))?)),
        None => (s, None),
    };
    let method: Method = m.parse().map_err(|e: adamerge_core::Error| e.to_string())?;
    match (method, r) {
        (Method::None, None | Some(0)) => Ok(ConfigSpec { method, r: 0 }),
        (Method::None, Some(_)) => Err("`none` takes no merge count".into()),
        (_, Some(r)) => Ok(ConfigSpec { method, r }),
        (_, None) => Err(format!("`{m}` needs a merge count, e.g. `{m}:8`")),
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Repeatable `method[:r]`.
    #[arg(long = "config", value_parser = parse_config, required = true)]
    pub configs: Vec<ConfigSpec>,
    /// Stats for every adaptive config; otherwise each is calibrated.
    #[arg(long, conflicts_with = "calibration")]
    pub stats: Option<PathBuf>,
    /// Dataset to calibrate on (default: the evaluated dataset).
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, default_value_t = adamerge_core::calibration::DEFAULT_PASSES)]
    pub passes: usize,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub include_overhead: bool,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Image index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub image: usize,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, alias = "r-max", default_value_t = 0)]
    pub r: usize,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub out_svg: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Accounting {
    /// Block `l` runs after the merges of blocks `0..l`.
    #[default]
    Tome,
    /// Every block, the first included, is preceded by a merge.
    PreBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ConventionArg {
    #[default]
    Mac,
    TwoFlop,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long, default_value_t = ModelDims::VIT_B16.dim)]
    pub dim: usize,
    #[arg(long, default_value_t = ModelDims::VIT_B16.mlp_dim)]
    pub mlp_dim: usize,
    #[arg(long, default_value_t = ModelDims::VIT_B16.layers)]
    pub layers: usize,
    #[arg(long, default_value_t = 196)]
    pub tokens: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,3,4,5,6,7,8")]
    pub r: Vec<usize>,
    #[arg(long, value_enum, default_value_t)]
    pub accounting: Accounting,
    #[arg(long, value_enum, default_value_t)]
    pub convention: ConventionArg,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(n) = cli.threads {
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Weights(a) => cmd_weights(&a, out),
        Command::Calibrate(a) => cmd_calibrate(&a, out),
        Command::Run(a) => cmd_run(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
        Command::Viz(a) => cmd_viz(&a, out),
        Command::Flops(a) => cmd_flops(&a, out),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_weights(path: &Path) -> Result<ModelWeights> {
    ModelWeights::load(path).with_context(|| format!("loading weights from {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = Dataset::load(path).with_context(|| format!("loading dataset from {}", path.display()))?;
    if ds.is_empty() {
        bail!(adamerge_core::Error::EmptyDataset);
    }
    Ok(ds)
}

fn load_stats_checked(path: &Path, weights: &ModelWeights, r_max: usize) -> Result<LayerStats> {
    let stats = load_stats(path).with_context(|| format!("loading stats from {}", path.display()))?;
    if stats.meta.model_id != weights.id {
        eprintln!(
            "warning: stats were calibrated for `{}`, weights are `{}`",
            stats.meta.model_id, weights.id
        );
    }
    if stats.meta.r_max != r_max {
        eprintln!(
            "warning: stats were calibrated with r_max={}, running with {r_max}",
            stats.meta.r_max
        );
    }
    Ok(stats)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = SynthConfig::new(a.images, a.tokens, a.dim, a.redundancy, a.seed);
    cfg.prototypes = a.prototypes;
    cfg.noise = a.noise;
    let ds = synth_dataset(&cfg)?;
    ds.save(&a.out)?;
    writeln!(
        out,
        "wrote {} images ({} tokens, d={}) to {}",
        ds.len(),
        a.tokens,
        a.dim,
        a.out.display()
    )?;
    Ok(())
}

pub fn cmd_weights(a: &WeightsArgs, out: &mut dyn Write) -> Result<()> {
    let dims = ModelDims {
        dim: a.dim,
        heads: a.heads,
        mlp_dim: a.mlp_dim,
        layers: a.layers,
        num_classes: a.classes,
    };
    let w = synth_weights(a.seed, dims, a.init_std)?;
    w.save(&a.out)?;
    writeln!(out, "wrote {} to {}", w.id, a.out.display())?;
    Ok(())
}

fn calibration_config(method: Method, r_max: usize, passes: usize, s: &ScheduleArgs) -> CalibrationConfig {
    let mut cfg = CalibrationConfig::new(method, r_max);
    cfg.alpha = s.alpha;
    cfg.temperature = s.temperature;
    cfg.passes = passes;
    cfg.salience_source = s.salience.into();
    cfg.tie_break = s.tie_break();
    cfg
}

pub fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let weights = load_weights(&a.weights)?;
    let ds = load_dataset(&a.dataset)?;
    let cfg = calibration_config(a.method.into(), a.r_max, a.passes, &a.schedule);
    let stats = refine(&weights, &ds.images, &cfg)?;
    save_stats(&stats, &a.out)?;
    writeln!(out, "{:>5} {:>12} {:>12}", "layer", "mu", "sigma")?;
    for (l, (m, s)) in stats.mu.iter().zip(&stats.sigma).enumerate() {
        writeln!(out, "{l:>5} {m:>12.6} {s:>12.6}")?;
    }
    writeln!(
        out,
        "calibrated on {} images, {} passes; wrote {}",
        ds.len(),
        a.passes,
        a.out.display()
    )?;
    Ok(())
}

fn run_config(method: Method, r: usize, s: &ScheduleArgs) -> Result<RunConfig> {
    let schedule = schedule_for(method, r)
        .with_alpha(s.alpha)
        .with_temperature(s.temperature);
    Ok(RunConfig::with_source(method, schedule, s.salience.into())?.with_tie_break(s.tie_break()))
}

/// Runs every image; outputs are in dataset order.
pub fn evaluate(
    weights: &ModelWeights,
    ds: &Dataset,
    cfg: &RunConfig,
    stats: Option<&LayerStats>,
) -> Result<Vec<RunOutput>> {
    Ok(ds
        .images
        .par_iter()
        .map(|img| forward_model(img, weights, cfg, stats))
        .collect::<adamerge_core::Result<Vec<_>>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub method: String,
    pub r: usize,
    pub images: usize,
    pub mean_merges: f64,
    pub mean_final_tokens: f64,
    pub flops_g: f64,
    pub baseline_g: f64,
    pub flops_reduction_pct: f64,
    pub include_overhead: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

pub fn summarize(method: Method, r: usize, dims: &ModelDims, outputs: &[RunOutput], include_overhead: bool) -> Summary {
    let n = outputs.len().max(1) as f64;
    let mut total: u128 = 0;
    let mut baseline: u128 = 0;
    for o in outputs {
        let f = trace_flops(&o.trace, dims, include_overhead);
        total += f.total as u128;
        baseline += f.baseline as u128;
    }
    Summary {
        method: method.to_string(),
        r,
        images: outputs.len(),
        mean_merges: outputs.iter().map(|o| o.trace.total_merges() as f64).sum::<f64>() / n,
        mean_final_tokens: outputs.iter().map(|o| o.trace.final_tokens() as f64).sum::<f64>() / n,
        flops_g: total as f64 / n / 1e9,
        baseline_g: baseline as f64 / n / 1e9,
        flops_reduction_pct: if baseline == 0 {
            0.0
        } else {
            100.0 * (1.0 - total as f64 / baseline as f64)
        },
        include_overhead,
        wall_time: outputs.iter().map(|o| o.trace.wall_time).sum(),
    }
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let method: Method = a.method.into();
    if method.merges() && a.r == 0 && !method.is_adaptive() {
        eprintln!("warning: --r is 0, no tokens will be merged");
    }
    let weights = load_weights(&a.weights)?;
    let ds = load_dataset(&a.dataset)?;
    let stats = match (&a.stats, method.is_adaptive()) {
        (Some(p), true) => Some(load_stats_checked(p, &weights, a.r)?),
        (None, true) => bail!(adamerge_core::Error::MissingStats),
        (Some(_), false) => {
            eprintln!("warning: --stats is ignored for method {method}");
            None
        }
        (None, false) => None,
    };
    let cfg = run_config(method, a.r, &a.schedule)?;
    let start = Instant::now();
    let outputs = evaluate(&weights, &ds, &cfg, stats.as_ref())?;
    let elapsed = start.elapsed();
    let traces: Vec<_> = outputs.iter().map(|o| o.trace.clone()).collect();
    for (i, t) in traces.iter().enumerate() {
        t.verify_ledger()
            .map_err(|e| anyhow::anyhow!("image {i}: ledger check failed: {e}"))?;
    }
    if let Some(p) = &a.out {
        write_file(p, &report::trace_csv(&traces))?;
    }
    let summary = summarize(method, a.r, &weights.dims, &outputs, a.include_overhead);
    if let Some(p) = &a.summary {
        write_file(p, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    }
    writeln!(out, "method           {}", summary.method)?;
    writeln!(out, "images           {}", summary.images)?;
    writeln!(out, "mean merges      {:.3}", summary.mean_merges)?;
    writeln!(out, "mean final tokens {:.3}", summary.mean_final_tokens)?;
    writeln!(out, "FLOPs (G)        {:.6} / {:.6}", summary.flops_g, summary.baseline_g)?;
    writeln!(out, "FLOPs reduction  {:.2}%", summary.flops_reduction_pct)?;
    writeln!(out, "wall time        {:.1} ms", elapsed.as_secs_f64() * 1e3)?;
    Ok(())
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return if aa == bb { 1.0 } else { 0.0 };
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Builds one comparison row against the unmerged outputs.
pub fn compare_row(
    spec: &ConfigSpec,
    dims: &ModelDims,
    outputs: &[RunOutput],
    reference: &[RunOutput],
    labels: Option<&[u32]>,
    include_overhead: bool,
) -> CompareRow {
    let s = summarize(spec.method, spec.r, dims, outputs, include_overhead);
    let n = outputs.len().max(1) as f64;
    let agree = outputs
        .iter()
        .zip(reference)
        .filter(|(o, r)| argmax(&o.logits) == argmax(&r.logits))
        .count();
    let cos = outputs
        .iter()
        .zip(reference)
        .map(|(o, r)| cosine(&o.logits, &r.logits))
        .sum::<f64>()
        / n;
    let accuracy = labels.map(|ls| {
        let hits = outputs
            .iter()
            .zip(ls)
            .filter(|(o, l)| argmax(&o.logits) == **l as usize)
            .count();
        100.0 * hits as f64 / n
    });
    CompareRow {
        label: spec.label(),
        method: spec.method.to_string(),
        r: spec.r,
        flops_g: s.flops_g,
        reduction_pct: s.flops_reduction_pct,
        mean_merges: s.mean_merges,
        mean_final_tokens: s.mean_final_tokens,
        agreement_pct: 100.0 * agree as f64 / n,
        logit_cosine: cos,
        accuracy_pct: accuracy,
        wall_ms: s.wall_time.as_secs_f64() * 1e3,
    }
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let weights = load_weights(&a.weights)?;
    let ds = load_dataset(&a.dataset)?;
    let calib = match &a.calibration {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    let labels = ds.labels.as_deref();
    let reference = evaluate(&weights, &ds, &RunConfig::vanilla(), None)?;
    let mut rows = Vec::with_capacity(a.configs.len());
    for spec in &a.configs {
        let outputs = if spec.method == Method::None {
            reference.clone()
        } else {
            let stats = if spec.method.is_adaptive() {
                Some(match &a.stats {
                    Some(p) => load_stats_checked(p, &weights, spec.r)?,
                    None => {
                        let images = &calib.as_ref().unwrap_or(&ds).images;
                        let cfg = calibration_config(spec.method, spec.r, a.passes, &a.schedule);
                        refine(&weights, images, &cfg)?
                    }
                })
            } else {
                None
            };
            let cfg = run_config(spec.method, spec.r, &a.schedule)?;
            evaluate(&weights, &ds, &cfg, stats.as_ref())?
        };
        rows.push(compare_row(
            spec,
            &weights.dims,
            &outputs,
            &reference,
            labels,
            a.include_overhead,
        ));
    }
    write!(out, "{}", report::compare_table(&rows))?;
    if let Some(p) = &a.out_csv {
        write_file(p, &report::compare_csv(&rows))?;
    }
    if let Some(p) = &a.out_svg {
        write_file(p, &report::compare_svg(&rows))?;
    }
    Ok(())
}

pub fn cmd_viz(a: &VizArgs, out: &mut dyn Write) -> Result<()> {
    let method: Method = a.method.into();
    let weights = load_weights(&a.weights)?;
    let ds = load_dataset(&a.dataset)?;
    let img = ds
        .images
        .get(a.image)
        .with_context(|| format!("image {} out of range (dataset has {})", a.image, ds.len()))?;
    let stats = match (&a.stats, method.is_adaptive()) {
        (Some(p), true) => Some(load_stats_checked(p, &weights, a.r)?),
        (None, true) => bail!(adamerge_core::Error::MissingStats),
        _ => None,
    };
    let cfg = run_config(method, a.r, &a.schedule)?.with_snapshots(true);
    let run = forward_model(img, &weights, &cfg, stats.as_ref())?;
    let mask = report::merge_mask(&run.trace);
    write_file(&a.out_svg, &report::mask_svg(&mask))?;
    write_file(&a.out_csv, &report::mask_csv(&mask))?;
    let mut line = String::new();
    for (l, layer) in mask.iter().enumerate() {
        let survived = layer.iter().filter(|c| !c.merged).count();
        let _ = write!(line, "{}{survived}", if l == 0 { "" } else { " " });
    }
    writeln!(out, "survived per layer: {line}")?;
    Ok(())
}

pub fn cmd_flops(a: &FlopsArgs, out: &mut dyn Write) -> Result<()> {
    let dims = ModelDims {
        dim: a.dim,
        heads: 1,
        mlp_dim: a.mlp_dim,
        layers: a.layers,
        num_classes: 1,
    };
    let convention = match a.convention {
        ConventionArg::Mac => FlopsConvention::Mac,
        ConventionArg::TwoFlop => FlopsConvention::TwoFlop,
    };
    let mut csv = String::from("r,flops_g,flops_reduction_pct,final_tokens\n");
    writeln!(out, "{:>4} {:>10} {:>9} {:>7}", "r", "FLOPs(G)", "FLOPs↓", "final")?;
    for &r in &a.r {
        let lengths = match a.accounting {
            Accounting::Tome => tome_block_lengths(a.tokens, r, a.layers),
            Accounting::PreBlock => (1..=a.layers)
                .map(|l| 1 + a.tokens.saturating_sub(r * l).max(1))
                .collect(),
        };
        let rep = schedule_flops(&lengths, a.tokens + 1, &dims).scaled(convention);
        let last = lengths.last().copied().unwrap_or(a.tokens + 1);
        writeln!(
            out,
            "{r:>4} {:>10.3} {:>8.1}% {last:>7}",
            rep.total_g(),
            rep.reduction_pct()
        )?;
        let _ = writeln!(csv, "{r},{:.6},{:.4},{last}", rep.total_g(), rep.reduction_pct());
    }
    if let Some(p) = &a.out_csv {
        write_file(p, &csv)?;
    }
    Ok(())
}
