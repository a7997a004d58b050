//! `mbhr`: batch driver for dataset synthesis and ingestion, training, evaluation, prediction
//! and scatter plots. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mbhr_core::eval::{evaluate, predict_tile, scatter_csv, write_report, HeightPredictor, MonthAggregate, ReferencePredictor};
use mbhr_core::geotiff::write_geotiff;
use mbhr_core::ingest::{ingest, IngestConfig};
use mbhr_core::manifest::{load_manifest, DatasetManifest, DEFAULT_SPLIT_RATIO};
use mbhr_core::metrics::footprint_filter;
use mbhr_core::synth::{generate_dataset_with_ratio, SceneParams};
use mbhr_core::{RasterTile, Split};
use mbhr_net::{load_checkpoint, NetPredictor, TrainConfig};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

/// Name of the literal `--ckpt` value that selects the perfect oracle instead of a network.
const REFERENCE_CKPT: &str = "reference";

#[derive(Parser)]
#[command(name = "mbhr", version, about = "Building height regression from monthly SAR and optical tiles")]
struct Cli {
    /// Worker threads for tensor math.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with known heights.
    Synth(SynthArgs),
    /// Build a dataset from staged raw scenes and building polygons.
    Ingest(IngestArgs),
    /// Train a model on a dataset's training split.
    Train(TrainArgs),
    /// Score a checkpoint on a split and write the report.
    Evaluate(EvalArgs),
    /// Write the predicted height map of one tile as a GeoTIFF.
    Predict(PredictArgs),
    /// Render a report's reference-vs-predicted scatter as PNG.
    PlotScatter(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    tiles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Scene parameters, JSON.
    #[arg(long)]
    params: Option<PathBuf>,
    /// A `SynthConfig` JSON file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// A `TrainConfig` JSON file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    months_per_epoch: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Write the effective config and stop.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file, or `reference` for the perfect oracle.
    #[arg(long)]
    ckpt: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "mean")]
    aggregate: AggArg,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: String,
    #[arg(long)]
    tile: String,
    #[arg(long)]
    out: PathBuf,
    /// Zero predictions outside the reference footprint.
    #[arg(long)]
    filtered: bool,
    #[arg(long, value_enum, default_value = "mean")]
    aggregate: AggArg,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AggArg {
    Mean,
    Median,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

impl From<AggArg> for MonthAggregate {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Mean => MonthAggregate::Mean,
            AggArg::Median => MonthAggregate::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    tiles: usize,
    split_ratio: f64,
    params: SceneParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { tiles: 80, split_ratio: DEFAULT_SPLIT_RATIO, params: SceneParams::default() }
    }
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    data: &'a Path,
    ckpt: &'a str,
    split: SplitArg,
    aggregate: AggArg,
}

#[derive(Serialize)]
struct PredictEcho<'a> {
    data: &'a Path,
    ckpt: &'a str,
    tile: &'a str,
    filtered: bool,
    aggregate: AggArg,
}

/// Failure with its exit code.
enum Fail {
    Usage(String),
    Runtime(String),
}

type Res<T> = Result<T, Fail>;

fn runtime(e: impl std::fmt::Display) -> Fail {
    Fail::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> Fail {
    Fail::Usage(e.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Res<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Res<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

/// Scratch directory for staged writes: `$MBHR_CACHE` when set, else next to the target.
fn scratch_for(target: &Path) -> PathBuf {
    match std::env::var_os("MBHR_CACHE") {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => target.parent().filter(|p| !p.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| ".".into()),
    }
}

/// Writes through a staging file, so a failed command never leaves a truncated output behind.
fn write_staged(target: &Path, write: impl FnOnce(&Path) -> Res<()>) -> Res<()> {
    let dir = scratch_for(target);
    create_dir(&dir)?;
    let name = target.file_name().ok_or_else(|| usage(format!("{} is not a file path", target.display())))?;
    let tmp = dir.join(format!(".{}.{}.partial", name.to_string_lossy(), std::process::id()));
    write(&tmp)?;
    if std::fs::rename(&tmp, target).is_err() {
        // staging may live on another filesystem
        std::fs::copy(&tmp, target).map_err(|e| runtime(format!("{}: {e}", target.display())))?;
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(())
}

fn echo(dir: &Path, command: &str, cfg: &impl Serialize) -> Res<()> {
    create_dir(dir)?;
    let path = dir.join(format!("{command}_config.json"));
    let text = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn open_dataset(dir: &Path) -> Res<DatasetManifest> {
    if !dir.exists() {
        return Err(usage(format!("{}: no such dataset", dir.display())));
    }
    load_manifest(dir).map_err(runtime)
}

fn predictor(ckpt: &str) -> Res<Box<dyn HeightPredictor>> {
    if ckpt == REFERENCE_CKPT {
        return Ok(Box::new(ReferencePredictor));
    }
    let path = Path::new(ckpt);
    if !path.exists() {
        return Err(usage(format!("{ckpt}: no such checkpoint")));
    }
    let ck = load_checkpoint(path, mbhr_net::default_device()).map_err(runtime)?;
    let norm = ck
        .normalization
        .ok_or_else(|| runtime(format!("{ckpt}: checkpoint carries no input normalization")))?;
    Ok(Box::new(NetPredictor::new(ck.model, norm)))
}

fn cmd_synth(a: SynthArgs) -> Res<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(p) = &a.params {
        cfg.params = read_json(p)?;
    }
    if let Some(n) = a.tiles {
        cfg.tiles = n;
    }
    if let Some(s) = a.seed {
        cfg.params.seed = s;
    }
    if cfg.tiles == 0 {
        return Err(usage("--tiles must be at least 1"));
    }
    cfg.params.validate().map_err(usage)?;
    let m = generate_dataset_with_ratio(cfg.tiles, &cfg.params, &a.out, cfg.split_ratio).map_err(runtime)?;
    echo(&a.out, "synth", &cfg)?;
    println!("{} tiles ({} train, {} test) in {}", m.samples.len(), m.count(Split::Train), m.count(Split::Test), a.out.display());
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Res<()> {
    let cfg: IngestConfig = read_json(&a.config)?;
    if !cfg.raw_root.is_dir() {
        return Err(usage(format!("raw root {} is not a directory", cfg.raw_root.display())));
    }
    let m = ingest(&cfg).map_err(runtime)?;
    echo(&cfg.out_root, "ingest", &cfg)?;
    println!("{} tiles ingested into {}", m.samples.len(), cfg.out_root.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Res<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr_init = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.width {
        cfg.width_multiplier = v;
    }
    if let Some(v) = a.months_per_epoch {
        cfg.months_per_epoch = v;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    cfg.validate().map_err(usage)?;
    echo(&a.out, "train", &cfg)?;
    if a.dry_run {
        return Ok(());
    }
    let m = open_dataset(&a.data)?;
    mbhr_net::train_with(&m, &cfg, Some(&a.out), mbhr_net::default_device(), |r| {
        println!("{}", serde_json::to_string(r).expect("record serializes"));
    })
    .map_err(runtime)?;
    Ok(())
}

fn cmd_evaluate(a: EvalArgs) -> Res<()> {
    let m = open_dataset(&a.data)?;
    let p = predictor(&a.ckpt)?;
    let report = evaluate(p.as_ref(), &m, a.split.into(), a.aggregate.into()).map_err(runtime)?;
    create_dir(&a.out)?;
    echo(&a.out, "evaluate", &EvalEcho { data: &a.data, ckpt: &a.ckpt, split: a.split, aggregate: a.aggregate })?;
    let report_path = a.out.join("report.json");
    write_report(&report_path, &report).map_err(runtime)?;
    let csv = a.out.join("scatter.csv");
    std::fs::write(&csv, scatter_csv(&report)).map_err(|e| runtime(format!("{}: {e}", csv.display())))?;
    for (k, v) in &report.aggregate {
        println!("{k}: {:.4} +/- {:.4} over {} tiles", v.mean, v.std, v.n);
    }
    for u in &report.undefined {
        println!("undefined {} on {}", u.metric, u.tile_id);
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Res<()> {
    let m = open_dataset(&a.data)?;
    let entry = m.entry(&a.tile).ok_or_else(|| usage(format!("tile {} is not in the manifest", a.tile)))?;
    let rec = m.load_sample(entry).map_err(runtime)?;
    let p = predictor(&a.ckpt)?;
    let mut heights = predict_tile(p.as_ref(), &rec, a.aggregate.into()).map_err(runtime)?;
    if a.filtered {
        heights = footprint_filter(&heights, &rec.reference_heights()).map_err(runtime)?;
    }
    let tile = RasterTile::from_bands(vec![heights], rec.reference.georef).map_err(runtime)?;
    write_staged(&a.out, |tmp| write_geotiff(tmp, &tile, &["height_m".to_string()]).map_err(runtime))?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    echo(dir, "predict", &PredictEcho { data: &a.data, ckpt: &a.ckpt, tile: &a.tile, filtered: a.filtered, aggregate: a.aggregate })?;
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Res<()> {
    if !a.report.exists() {
        return Err(usage(format!("{}: no such report", a.report.display())));
    }
    let report = mbhr_core::eval::read_report(&a.report).map_err(runtime)?;
    let img = plot::render(&report.scatter);
    write_staged(&a.out, |tmp| {
        img.save_with_format(tmp, image::ImageFormat::Png).map_err(|e| runtime(format!("{}: {e}", a.out.display())))
    })?;
    #[derive(Serialize)]
    struct Echo<'a> {
        report: &'a Path,
        points: usize,
        extent_m: f64,
    }
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    echo(dir, "plot_scatter", &Echo { report: &a.report, points: report.scatter.len(), extent_m: plot::extent(&report.scatter) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        mbhr_net::set_threads(j);
    }
    let res = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Ingest(a) => cmd_ingest(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::PlotScatter(a) => cmd_plot(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
