//! The `astod` command-line driver.
//!
//! Each pipeline stage is a subcommand that reads and writes plain files,
//! so an external detector and trainer can sit between any two of them.
//! `pipeline` chains aggregate, threshold, filter and (optionally) eval
//! through the same files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use astod_core::config::{load_config, PipelineConfig};
use astod_core::dataset::{Annotation, Dataset, ImageId, Source};
use astod_core::eval::{
    average_precision, coco_iou_thresholds, match_dataset, pr_f1, ApReport, Counts, GroundTruth, PrF1,
};
use astod_core::io::{
    format_f6, load_dataset, load_detections, load_thresholds, quantize, save_dataset, save_detections,
    save_thresholds, to_canonical_json, write_text, IoError, F6,
};
use astod_core::pipeline::{aggregate_candidates, flatten, pseudo_label_with};
use astod_core::pseudolabel::{
    alpha_weight, alpha_weight_general, merge_datasets, pseudo_to_dataset, ImageDetections, PseudoLabelError, Weighting,
};
use astod_core::simulator::{
    generate_scenes, run_iteration_loop, scenes_to_dataset, simulate_detector, threshold_sweep, to_view_detections,
    IterationReport, LoopSettings, StageMetrics, SweepPoint, SweepReport,
};
use astod_core::thresholding::{compute_thresholds, ClassTau, ThresholdError, ThresholdMode, ThresholdSet};
use astod_core::Error;

pub const CANDIDATES_FILE: &str = "candidates.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const PSEUDO_FILE: &str = "pseudo.json";
pub const MERGED_FILE: &str = "merged.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Parser)]
#[command(
    name = "astod",
    version,
    about = "Adaptive-threshold pseudo-labeling for semi-supervised object detection"
)]
pub struct Cli {
    #[command(flatten)]
    pub opts: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalOpts {
    /// Pipeline config (JSON); defaults apply without it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Threshold mode: uniform or class-wise.
    #[arg(long, global = true)]
    pub mode: Option<ThresholdMode>,
    /// Number of histogram bins.
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Histogram range as lo:hi.
    #[arg(long, global = true, value_parser = parse_range)]
    pub range: Option<Range>,
    /// IoU threshold of both NMS passes.
    #[arg(long, global = true)]
    pub nms_iou: Option<f64>,
    /// Comma-separated views: identity, hflip, scale, hflip_scale.
    #[arg(long, global = true, value_delimiter = ',')]
    pub views: Option<Vec<String>>,
    /// Upscale factor of the scaled views.
    #[arg(long, global = true)]
    pub scale_factor: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Give every pseudo-label weight 1.
    #[arg(long, global = true)]
    pub no_weights: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

fn parse_range(s: &str) -> Result<Range, String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo = lo.trim().parse::<f64>().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi = hi.trim().parse::<f64>().map_err(|e| format!("{hi:?}: {e}"))?;
    Ok(Range { lo, hi })
}

/// Fixed thresholds `start, start + step, …, end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep(pub Vec<f64>);

pub fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, step] = parts[..] else {
        return Err(format!("expected start:end:step, got {s:?}"));
    };
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    let (a, b, step) = (num(a)?, num(b)?, num(step)?);
    if !(step > 0.0) || !(a <= b) || !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err(format!("invalid sweep {s:?}"));
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok(Sweep(
        (0..=n)
            .map(|i| (a + i as f64 * step).min(b))
            .map(|t| (t * 1e9).round() / 1e9)
            .collect(),
    ))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge multi-view detections into one candidate set per image.
    Aggregate {
        /// Detection file of the teacher on every view.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Image table of the unlabeled pool.
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute ground thresholds from the candidates' score histogram.
    Threshold {
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Keep candidates above threshold and merge them with the labeled set.
    Filter {
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Recompute the alpha weights of pseudo-labels.
    Weights {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Upper threshold: scores at or above it get weight 1.
        #[arg(long)]
        tau_high: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score predictions or pseudo-labels against ground truth.
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// IoU for precision, recall and F1.
        #[arg(long)]
        iou: Option<f64>,
        /// Report path; printed to stdout otherwise.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the teacher/student loop on synthetic scenes.
    Simulate {
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Compare the ground threshold with fixed ones, as start:end:step.
        #[arg(long, value_parser = parse_sweep)]
        sweep: Option<Sweep>,
        /// Also write the synthetic datasets and teacher detections here.
        #[arg(long)]
        export_dir: Option<PathBuf>,
    },
    /// aggregate, threshold, filter and eval in one go.
    Pipeline {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(IoError::Integrity { .. }) => 3,
        Error::Io(_) => 2,
        Error::PseudoLabel(PseudoLabelError::InvalidThresholdPair { .. }) => 4,
        Error::PseudoLabel(_) => 3,
        Error::Threshold(ThresholdError::InvalidConfig(_)) => 4,
        Error::Threshold(_) => 3,
        Error::Config(_) => 4,
    }
}

/// Loads the config (or defaults) and applies the command-line overrides.
pub fn resolve_config(opts: &GlobalOpts) -> Result<PipelineConfig, Error> {
    let mut cfg = match &opts.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = opts.mode {
        cfg.mode = m;
    }
    if let Some(n) = opts.bins {
        cfg.histogram.n_bins = n;
    }
    if let Some(r) = opts.range {
        cfg.histogram.lo = r.lo;
        cfg.histogram.hi = r.hi;
    }
    if let Some(t) = opts.nms_iou {
        cfg.nms_iou = t;
    }
    if let Some(v) = &opts.views {
        cfg.views = v.clone();
    }
    if let Some(f) = opts.scale_factor {
        cfg.scale_factor = f;
    }
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    if opts.workers.is_some() {
        cfg.workers = opts.workers;
    }
    if opts.no_weights {
        cfg.weights = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = resolve_config(&cli.opts)?;
    match cfg.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command, &cfg, cli.opts.mode))
        }
        None => dispatch(&cli.command, &cfg, cli.opts.mode),
    }
}

fn required(arg: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    arg.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {what} given")))
}

/// `arg`, else `name` inside the configured output directory.
fn artifact(arg: &Option<PathBuf>, cfg: &PipelineConfig, name: &str) -> Result<PathBuf, Error> {
    match (arg, &cfg.paths.output_dir) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(dir)) => Ok(dir.join(name)),
        (None, None) => Err(Error::Config(format!("no path for {name} and no output directory"))),
    }
}

fn dispatch(cmd: &Command, cfg: &PipelineConfig, mode_override: Option<ThresholdMode>) -> Result<(), Error> {
    match cmd {
        Command::Aggregate {
            detections,
            unlabeled,
            output,
        } => {
            let d = required(detections, &cfg.paths.detections, "detection file")?;
            let u = required(unlabeled, &cfg.paths.unlabeled, "unlabeled image table")?;
            cmd_aggregate(cfg, &d, &u, &artifact(output, cfg, CANDIDATES_FILE)?)?;
        }
        Command::Threshold { candidates, output } => {
            cmd_threshold(
                cfg,
                &artifact(candidates, cfg, CANDIDATES_FILE)?,
                &artifact(output, cfg, THRESHOLDS_FILE)?,
            )?;
        }
        Command::Filter {
            candidates,
            thresholds,
            labeled,
            out_dir,
        } => {
            let out = required(out_dir, &cfg.paths.output_dir, "output directory")?;
            cmd_filter(
                cfg,
                mode_override,
                &artifact(candidates, cfg, CANDIDATES_FILE)?,
                &artifact(thresholds, cfg, THRESHOLDS_FILE)?,
                &required(labeled, &cfg.paths.labeled, "labeled dataset")?,
                &out,
            )?;
        }
        Command::Weights {
            input,
            thresholds,
            tau_high,
            output,
        } => {
            cmd_weights(
                cfg,
                mode_override,
                input,
                &artifact(thresholds, cfg, THRESHOLDS_FILE)?,
                *tau_high,
                output,
            )?;
        }
        Command::Eval {
            predictions,
            ground_truth,
            iou,
            output,
        } => {
            let p = artifact(predictions, cfg, PSEUDO_FILE)?;
            let g = required(ground_truth, &cfg.paths.ground_truth, "ground truth")?;
            let metrics = cmd_eval(&p, &g, iou.unwrap_or(cfg.eval_iou))?;
            match output {
                Some(o) => write_text(o, &metrics.to_json())?,
                None => print!("{}", metrics.to_json()),
            }
        }
        Command::Simulate {
            out_dir,
            sweep,
            export_dir,
        } => {
            let out = required(out_dir, &cfg.paths.output_dir, "output directory")?;
            cmd_simulate(cfg, &out, sweep.as_ref(), export_dir.as_deref())?;
        }
        Command::Pipeline {
            detections,
            unlabeled,
            labeled,
            ground_truth,
            out_dir,
        } => {
            let paths = PipelinePaths {
                detections: required(detections, &cfg.paths.detections, "detection file")?,
                unlabeled: required(unlabeled, &cfg.paths.unlabeled, "unlabeled image table")?,
                labeled: required(labeled, &cfg.paths.labeled, "labeled dataset")?,
                ground_truth: ground_truth.clone().or_else(|| cfg.paths.ground_truth.clone()),
                out_dir: required(out_dir, &cfg.paths.output_dir, "output directory")?,
            };
            cmd_pipeline(cfg, &paths)?;
        }
    }
    Ok(())
}

/// Candidates as a dataset over the images that have any, ids from 1.
pub fn candidates_to_dataset(candidates: &ImageDetections, images: &Dataset) -> Dataset {
    let index = images.image_index();
    let mut out = Dataset {
        categories: images.categories.clone(),
        ..Dataset::default()
    };
    let mut next = 1;
    for (id, dets) in candidates {
        let Some(info) = index.get(id) else { continue };
        out.images.push((*info).clone());
        for d in dets {
            out.annotations.push(Annotation {
                id: next,
                image_id: *id,
                category_id: d.class_id,
                bbox: d.bbox,
                score: Some(d.score),
                alpha: None,
                source: None,
            });
            next += 1;
        }
    }
    out
}

pub fn cmd_aggregate(
    cfg: &PipelineConfig,
    detections: &Path,
    unlabeled: &Path,
    output: &Path,
) -> Result<Dataset, Error> {
    let table = load_dataset(unlabeled)?;
    let per_image = load_detections(detections, &table, cfg.scale_factor, &cfg.view_list()?)?;
    let params = cfg.params();
    let candidates = aggregate_candidates(&per_image, params.nms_iou, params.suppression);
    let ds = candidates_to_dataset(&candidates, &table);
    log::info!(
        "{} candidates on {} of {} images",
        ds.annotations.len(),
        ds.images.len(),
        table.images.len()
    );
    save_dataset(&ds, output)?;
    Ok(ds)
}

pub fn cmd_threshold(cfg: &PipelineConfig, candidates: &Path, output: &Path) -> Result<ThresholdSet, Error> {
    let ds = load_dataset(candidates)?;
    let dets = flatten(&ds.detections_by_image());
    let ts = compute_thresholds(&dets, cfg.histogram, cfg.mode)?;
    match ts.uniform_tau() {
        Some(t) => log::info!("uniform ground threshold {t:.6}"),
        None => log::info!("no uniform ground threshold"),
    }
    for c in ts.empty_classes() {
        log::warn!("class {c}: no candidate score in the histogram range, no pseudo-labels");
    }
    save_thresholds(&ts, output)?;
    Ok(ts)
}

pub fn cmd_filter(
    cfg: &PipelineConfig,
    mode_override: Option<ThresholdMode>,
    candidates: &Path,
    thresholds: &Path,
    labeled: &Path,
    out_dir: &Path,
) -> Result<(Dataset, Dataset), Error> {
    let cands = load_dataset(candidates)?;
    let mut ts = load_thresholds(thresholds)?;
    if let Some(m) = mode_override {
        ts.mode = m;
    }
    let labeled = load_dataset(labeled)?;
    let run = pseudo_label_with(&cands.detections_by_image(), ts, cfg.params().weighting)?;
    let pseudo = pseudo_to_dataset(&run.pseudo, &cands, labeled.max_annotation_id() + 1)?;
    let merged = merge_datasets(&labeled, &pseudo)?;
    log::info!(
        "{} pseudo-labels on {} images; {} images in the merged set",
        pseudo.annotations.len(),
        pseudo.images.len(),
        merged.images.len()
    );
    save_dataset(&pseudo, &out_dir.join(PSEUDO_FILE))?;
    save_dataset(&merged, &out_dir.join(MERGED_FILE))?;
    Ok((pseudo, merged))
}

fn integrity(path: &Path, detail: String) -> Error {
    Error::Io(IoError::Integrity {
        path: path.to_path_buf(),
        detail,
    })
}

/// Recomputes `alpha` of every non-ground-truth annotation of `input`.
pub fn cmd_weights(
    cfg: &PipelineConfig,
    mode_override: Option<ThresholdMode>,
    input: &Path,
    thresholds: &Path,
    tau_high: Option<f64>,
    output: &Path,
) -> Result<Dataset, Error> {
    let mut ds = load_dataset(input)?;
    let mut ts = load_thresholds(thresholds)?;
    if let Some(m) = mode_override {
        ts.mode = m;
    }
    let weighting = cfg.params().weighting;
    for a in ds.annotations.iter_mut() {
        if a.source == Some(Source::GroundTruth) {
            a.alpha = Some(1.0);
            continue;
        }
        let s = a
            .score
            .ok_or_else(|| integrity(input, format!("annotation {} has no score", a.id)))?;
        let tau = match ts.tau_for(a.category_id) {
            ClassTau::Tau(t) => t,
            ClassTau::Empty => {
                return Err(integrity(
                    input,
                    format!("annotation {}: class {} has no threshold", a.id, a.category_id),
                ))
            }
            ClassTau::Missing => {
                return Err(PseudoLabelError::MissingClassThreshold {
                    class_id: a.category_id,
                    image_id: a.image_id,
                }
                .into())
            }
        };
        if s < tau {
            return Err(integrity(
                input,
                format!("annotation {} scores {s} below its threshold {tau}", a.id),
            ));
        }
        a.alpha = Some(match (weighting, tau_high) {
            (Weighting::Unit, _) => 1.0,
            (Weighting::Confidence, None) => alpha_weight(s, tau),
            (Weighting::Confidence, Some(h)) => alpha_weight_general(s, tau, h)?,
        });
    }
    save_dataset(&ds, output)?;
    Ok(ds)
}

/// Matching and AP results of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub iou: f64,
    pub counts: Counts,
    pub prf: PrF1,
    pub ap: ApReport,
}

#[derive(Serialize)]
struct WireAp {
    iou_thresholds: Vec<F6>,
    map: F6,
    per_class: BTreeMap<u32, F6>,
}

#[derive(Serialize)]
struct WireCounts {
    #[serde(rename = "fn")]
    fn_: usize,
    fp: usize,
    tp: usize,
}

#[derive(Serialize)]
struct WireMetrics {
    ap: WireAp,
    classes_without_gt: Vec<u32>,
    counts: WireCounts,
    f1: F6,
    iou: F6,
    precision: F6,
    recall: F6,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        to_canonical_json(&WireMetrics {
            ap: WireAp {
                iou_thresholds: self.ap.iou_thresholds.iter().map(|&t| F6(t)).collect(),
                map: F6(self.ap.map),
                per_class: self.ap.per_class.iter().map(|(&c, &v)| (c, F6(v))).collect(),
            },
            classes_without_gt: self.ap.classes_without_gt.clone(),
            counts: WireCounts {
                fn_: self.counts.fn_,
                fp: self.counts.fp,
                tp: self.counts.tp,
            },
            f1: F6(self.prf.f1),
            iou: F6(self.iou),
            precision: F6(self.prf.precision),
            recall: F6(self.prf.recall),
        })
    }
}

/// Ground-truth boxes per image; every image of the dataset has an entry.
pub fn ground_truth_of(ds: &Dataset) -> BTreeMap<ImageId, Vec<GroundTruth>> {
    let mut out: BTreeMap<ImageId, Vec<GroundTruth>> = ds.images.iter().map(|i| (i.id, Vec::new())).collect();
    for a in &ds.annotations {
        out.entry(a.image_id)
            .or_default()
            .push(GroundTruth::new(a.category_id, a.bbox));
    }
    out
}

pub fn cmd_eval(predictions: &Path, ground_truth: &Path, iou: f64) -> Result<Metrics, Error> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(Error::Config(format!("IoU must be in [0, 1], got {iou}")));
    }
    let pred = load_dataset(predictions)?;
    let gt = load_dataset(ground_truth)?;
    let gt_ids = gt.image_ids();
    if let Some(id) = pred.image_ids().into_iter().find(|id| !gt_ids.contains(id)) {
        return Err(integrity(predictions, format!("image {id} is not in the ground truth")));
    }
    let dets = pred.detections_by_image();
    let gts = ground_truth_of(&gt);
    let counts = match_dataset(&dets, &gts, iou);
    Ok(Metrics {
        iou,
        counts,
        prf: pr_f1(counts),
        ap: average_precision(&dets, &gts, &coco_iou_thresholds()),
    })
}

/// Rounds every float to six decimals so reports are byte-stable.
fn quantize_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(q) = n.as_f64().map(quantize).and_then(serde_json::Number::from_f64) {
                *n = q;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(quantize_value),
        Value::Object(map) => map.values_mut().for_each(quantize_value),
        _ => {}
    }
}

/// Canonical JSON with sorted keys and rounded floats.
pub fn report_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("reports serialize");
    quantize_value(&mut v);
    to_canonical_json(&v)
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    iterations: &'a [IterationReport],
    n_labeled: usize,
    n_unlabeled: usize,
    seed: u64,
}

#[derive(Serialize)]
struct SweepDocument<'a> {
    best_fixed: Option<&'a SweepPoint>,
    fixed: &'a [SweepPoint],
    ground: &'a SweepPoint,
    seed: u64,
}

#[derive(Serialize)]
struct StageRow<'a> {
    iteration: usize,
    stage: &'a str,
    uniform_tau: String,
    n_candidates: usize,
    candidate_recall: String,
    n_pseudo_labels: usize,
    n_pseudo_images: usize,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    precision: String,
    recall: String,
    f1: String,
    merged_images: usize,
}

impl<'a> StageRow<'a> {
    fn new(iteration: usize, stage: &'a str, m: &StageMetrics) -> Self {
        Self {
            iteration,
            stage,
            uniform_tau: m.uniform_tau.map(format_f6).unwrap_or_default(),
            n_candidates: m.n_candidates,
            candidate_recall: format_f6(m.candidate_recall),
            n_pseudo_labels: m.pseudo.n_labels,
            n_pseudo_images: m.pseudo.n_images,
            tp: m.pseudo.tp,
            fp: m.pseudo.fp,
            fn_: m.pseudo.fn_,
            precision: format_f6(m.pseudo.precision),
            recall: format_f6(m.pseudo.recall),
            f1: format_f6(m.pseudo.f1),
            merged_images: m.merged_images,
        }
    }
}

#[derive(Serialize)]
struct SweepRow<'a> {
    threshold: &'a str,
    tau: String,
    n_labels: usize,
    precision: String,
    recall: String,
    f1: String,
}

fn sweep_row<'a>(threshold: &'a str, p: &SweepPoint) -> SweepRow<'a> {
    SweepRow {
        threshold,
        tau: p.tau.map(format_f6).unwrap_or_default(),
        n_labels: p.quality.n_labels,
        precision: format_f6(p.quality.precision),
        recall: format_f6(p.quality.recall),
        f1: format_f6(p.quality.f1),
    }
}

fn csv_text<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// What a simulation run produced.
#[derive(Debug, Clone, PartialEq)]
pub enum SimulationOutcome {
    Iterations(Vec<IterationReport>),
    Sweep(SweepReport),
}

pub fn cmd_simulate(
    cfg: &PipelineConfig,
    out_dir: &Path,
    sweep: Option<&Sweep>,
    export_dir: Option<&Path>,
) -> Result<SimulationOutcome, Error> {
    let seed = cfg
        .seed
        .ok_or_else(|| Error::Config("simulation needs a seed".into()))?;
    let sim = &cfg.simulator;
    let n_classes = sim.scene.n_classes();
    let labeled = generate_scenes(&sim.scene, sim.n_labeled, seed, 1)?;
    let unlabeled = generate_scenes(&sim.scene, sim.n_unlabeled, seed, 1 + sim.n_labeled as u64)?;
    let views = cfg.view_list()?;
    let mut settings = LoopSettings::new(cfg.params(), views.clone(), n_classes, seed);
    settings.match_iou = cfg.eval_iou;

    if let Some(dir) = export_dir {
        let gt = scenes_to_dataset(&unlabeled, n_classes);
        let table = Dataset {
            annotations: Vec::new(),
            ..gt.clone()
        };
        save_dataset(&scenes_to_dataset(&labeled, n_classes), &dir.join("labeled.json"))?;
        save_dataset(&table, &dir.join("unlabeled.json"))?;
        save_dataset(&gt, &dir.join("ground_truth.json"))?;
        let teacher = simulate_detector(&unlabeled, &sim.detector, &views, n_classes, seed)?;
        save_detections(&to_view_detections(&teacher), &dir.join("detections.json"))?;
    }

    match sweep {
        Some(Sweep(taus)) => {
            let report = threshold_sweep(&unlabeled, &sim.detector, &settings, taus)?;
            let doc = SweepDocument {
                best_fixed: report.best_fixed(),
                fixed: &report.fixed,
                ground: &report.ground,
                seed,
            };
            write_text(&out_dir.join("sweep.json"), &report_json(&doc))?;
            let rows = std::iter::once(sweep_row("ground", &report.ground))
                .chain(report.fixed.iter().map(|p| sweep_row("fixed", p)));
            write_text(&out_dir.join("sweep.csv"), &csv_text(rows)?)?;
            Ok(SimulationOutcome::Sweep(report))
        }
        None => {
            let reports = run_iteration_loop(
                sim.n_labeled,
                &unlabeled,
                &sim.detector,
                &sim.improvement,
                sim.iterations,
                &settings,
            )?;
            let doc = SimulationReport {
                iterations: &reports,
                n_labeled: sim.n_labeled,
                n_unlabeled: sim.n_unlabeled,
                seed,
            };
            write_text(&out_dir.join("simulation.json"), &report_json(&doc))?;
            let rows = reports.iter().flat_map(|r| {
                [
                    StageRow::new(r.iteration, "teacher", &r.teacher),
                    StageRow::new(r.iteration, "student", &r.student),
                    StageRow::new(r.iteration, "refined", &r.refined),
                ]
            });
            write_text(&out_dir.join("simulation.csv"), &csv_text(rows)?)?;
            Ok(SimulationOutcome::Iterations(reports))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelinePaths {
    pub detections: PathBuf,
    pub unlabeled: PathBuf,
    pub labeled: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Runs the stages back to back through their files in `out_dir`.
pub fn cmd_pipeline(cfg: &PipelineConfig, paths: &PipelinePaths) -> Result<Option<Metrics>, Error> {
    let dir = &paths.out_dir;
    let candidates = dir.join(CANDIDATES_FILE);
    let thresholds = dir.join(THRESHOLDS_FILE);
    cmd_aggregate(cfg, &paths.detections, &paths.unlabeled, &candidates)?;
    cmd_threshold(cfg, &candidates, &thresholds)?;
    cmd_filter(cfg, None, &candidates, &thresholds, &paths.labeled, dir)?;
    match &paths.ground_truth {
        Some(gt) => {
            let metrics = cmd_eval(&dir.join(PSEUDO_FILE), gt, cfg.eval_iou)?;
            write_text(&dir.join(METRICS_FILE), &metrics.to_json())?;
            Ok(Some(metrics))
        }
        None => Ok(None),
    }
}
