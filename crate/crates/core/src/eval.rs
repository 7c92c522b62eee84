//! OTB-style metrics and the benchmark runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::backbone::BackboneModel;
use crate::config::TrackerConfig;
use crate::error::{Error, Result};
use crate::io::Sequence;
use crate::tracker::{BBox, TrackState};

pub const PRECISION_THRESHOLDS: usize = 51;
pub const SUCCESS_THRESHOLDS: usize = 21;

/// Distance between box centres in pixels.
pub fn center_location_error(pred: &BBox, gt: &BBox) -> f64 {
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    (px - gx).hypot(py - gy)
}

/// Intersection over union; 0 for disjoint boxes.
pub fn overlap_ratio(pred: &BBox, gt: &BBox) -> f64 {
    // Areas use the same edge arithmetic as the intersection so identical
    // boxes score exactly 1.
    let (pr, pb) = (pred.x + pred.w, pred.y + pred.h);
    let (gr, gb) = (gt.x + gt.w, gt.y + gt.h);
    let iw = (pr.min(gr) - pred.x.max(gt.x)).max(0.0);
    let ih = (pb.min(gb) - pred.y.max(gt.y)).max(0.0);
    let inter = iw * ih;
    let union = (pr - pred.x) * (pb - pred.y) + (gr - gt.x) * (gb - gt.y) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Precision threshold `i` in pixels.
pub fn precision_threshold(i: usize) -> f64 {
    i as f64
}

/// Success threshold `i` on the overlap ratio, `i / 20`. Division keeps the
/// thresholds equal to their decimal literals (0.3, not 0.30000000000000004).
pub fn success_threshold(i: usize) -> f64 {
    i as f64 / 20.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub cle: Vec<f64>,
    pub iou: Vec<f64>,
    /// Fraction of frames with CLE at most `t` for `t = 0..=50` px.
    pub precision: Vec<f64>,
    /// Fraction of frames with IoU strictly above `t` for `t = 0, 0.05, ..., 1`.
    pub success: Vec<f64>,
    pub auc: f64,
    pub precision_at_20: f64,
}

pub fn curves(cles: &[f64], ious: &[f64]) -> Result<EvalResult> {
    if cles.is_empty() {
        return Err(Error::Empty("no frames to evaluate".into()));
    }
    if cles.len() != ious.len() {
        return Err(Error::Dimension(format!("{} CLE values but {} IoU values", cles.len(), ious.len())));
    }
    let n = cles.len() as f64;
    let frac = |count: usize| count as f64 / n;
    let precision: Vec<f64> = (0..PRECISION_THRESHOLDS)
        .map(|i| frac(cles.iter().filter(|&&e| e <= precision_threshold(i)).count()))
        .collect();
    let success: Vec<f64> = (0..SUCCESS_THRESHOLDS)
        .map(|i| frac(ious.iter().filter(|&&o| o > success_threshold(i)).count()))
        .collect();
    let auc = success.iter().sum::<f64>() / success.len() as f64;
    Ok(EvalResult {
        cle: cles.to_vec(),
        iou: ious.to_vec(),
        precision_at_20: precision[20],
        precision,
        success,
        auc,
    })
}

/// Per-frame metrics of `pred` against `gt`.
pub fn evaluate(pred: &[BBox], gt: &[BBox]) -> Result<EvalResult> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predictions for {} ground-truth boxes", pred.len(), gt.len())));
    }
    let cles: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_location_error(p, g)).collect();
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| overlap_ratio(p, g)).collect();
    curves(&cles, &ious)
}

#[derive(Clone, Debug, Serialize)]
pub struct SequenceReport {
    pub name: String,
    pub frames: usize,
    pub fps: f64,
    pub boxes: Vec<BBox>,
    pub result: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub sequences: Vec<SequenceReport>,
    pub skipped: Vec<Skipped>,
    /// Metrics over the pooled frames of every evaluated sequence.
    pub aggregate: Option<EvalResult>,
    pub aggregate_fps: f64,
}

/// Tracks one sequence from its first ground-truth box. Returns the boxes and
/// the tracking speed in frames per second (initialisation included).
pub fn track_sequence_dir(model: &BackboneModel, config: &TrackerConfig, seq: &Sequence) -> Result<(Vec<BBox>, f64)> {
    let start = Instant::now();
    let mut frames = seq.frames();
    let first = frames
        .next()
        .ok_or_else(|| Error::Empty(format!("{} has no frames", seq.name)))??;
    let mut state = TrackState::init(&first, seq.gt[0], model, config)?;
    let mut boxes = vec![seq.gt[0]];
    for frame in frames {
        boxes.push(state.track_frame(&frame?)?);
    }
    let secs = start.elapsed().as_secs_f64();
    let fps = boxes_per_sec(boxes.len(), secs);
    Ok((boxes, fps))
}

fn boxes_per_sec(n: usize, secs: f64) -> f64 {
    if secs > 0.0 {
        n as f64 / secs
    } else {
        0.0
    }
}

fn run_one(model: &BackboneModel, config: &TrackerConfig, dir: &Path) -> Result<SequenceReport> {
    let seq = Sequence::load(dir)?;
    let (boxes, fps) = track_sequence_dir(model, config, &seq)?;
    let result = evaluate(&boxes, &seq.gt)?;
    Ok(SequenceReport {
        name: seq.name,
        frames: boxes.len(),
        fps,
        boxes,
        result,
    })
}

/// Evaluates every sequence directory on up to `jobs` threads. Failing
/// sequences are recorded as skipped. Output order follows `dirs`.
pub fn run_benchmark(model: &BackboneModel, config: &TrackerConfig, dirs: &[PathBuf], jobs: usize) -> Result<BenchmarkReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<SequenceReport>> =
        pool.install(|| dirs.par_iter().map(|d| run_one(model, config, d)).collect());

    let mut sequences = Vec::new();
    let mut skipped = Vec::new();
    for (dir, outcome) in dirs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => sequences.push(r),
            Err(e) => skipped.push(Skipped {
                path: dir.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let cles: Vec<f64> = sequences.iter().flat_map(|s| s.result.cle.iter().copied()).collect();
    let ious: Vec<f64> = sequences.iter().flat_map(|s| s.result.iou.iter().copied()).collect();
    let aggregate = if cles.is_empty() { None } else { Some(curves(&cles, &ious)?) };
    let total_frames: usize = sequences.iter().map(|s| s.frames).sum();
    let total_secs: f64 = sequences
        .iter()
        .filter(|s| s.fps > 0.0)
        .map(|s| s.frames as f64 / s.fps)
        .sum();
    Ok(BenchmarkReport {
        sequences,
        skipped,
        aggregate,
        aggregate_fps: boxes_per_sec(total_frames, total_secs),
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `name,auc,precision_at_20,fps` per sequence plus an `aggregate` row.
pub fn summary_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("name,auc,precision_at_20,fps\n");
    for s in &report.sequences {
        out += &format!(
            "{},{:.6},{:.6},{:.3}\n",
            csv_field(&s.name),
            s.result.auc,
            s.result.precision_at_20,
            s.fps
        );
    }
    if let Some(agg) = &report.aggregate {
        out += &format!("aggregate,{:.6},{:.6},{:.3}\n", agg.auc, agg.precision_at_20, report.aggregate_fps);
    }
    out
}

/// Writes `report.json` and `summary.csv` into `out_dir`.
pub fn write_reports(report: &BenchmarkReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = serde_json::to_string_pretty(report)?;
    let path = out_dir.join("report.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join("summary.csv");
    fs::write(&path, summary_csv(report)).map_err(|e| Error::io(&path, e))
}
