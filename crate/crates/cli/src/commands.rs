use std::fs;
use std::path::Path;
use std::time::Instant;

use tatrack_core::backbone::fixture::check_parity;
use tatrack_core::backbone::BackboneModel;
use tatrack_core::eval::{run_benchmark, summary_csv, write_reports};
use tatrack_core::io::{self, list_frames, list_sequences, load_frame, read_boxes, write_boxes, FRAME_DIR, GROUNDTRUTH_FILE};
use tatrack_core::synth::{generate, SynthSpec};
use tatrack_core::target_aware::importance_report;
use tatrack_core::tracker::{BBox, TrackState};

use crate::{CliError, CliResult, TrackerArgs};

fn load_model(weights: &Path) -> CliResult<BackboneModel> {
    BackboneModel::load_weights(weights).map_err(|e| {
        if e.is_io() {
            CliError::Io(format!("cannot read weights {}: {e}", weights.display()))
        } else {
            CliError::Invalid(format!("invalid weights {}: {e}", weights.display()))
        }
    })
}

/// Parses a single 1-indexed `x,y,w,h` box.
fn parse_box(text: &str) -> CliResult<BBox> {
    let boxes = io::parse_boxes(text, Path::new("<argument>"))
        .map_err(|e| CliError::Usage(format!("bad box {text:?}: {e}")))?;
    match boxes.as_slice() {
        [b] => Ok(*b),
        _ => Err(CliError::Usage(format!("expected one box x,y,w,h, got {text:?}"))),
    }
}

pub fn track(weights: &Path, args: &TrackerArgs, init: Option<&str>, out: &Path, sequence: &Path) -> CliResult {
    let config = args.resolve()?;
    let model = load_model(weights)?;
    let frames = list_frames(&sequence.join(FRAME_DIR))?;
    if frames.is_empty() {
        return Err(CliError::Invalid(format!("no frames under {}", sequence.join(FRAME_DIR).display())));
    }
    let init = match init {
        Some(text) => parse_box(text)?,
        None => *read_boxes(&sequence.join(GROUNDTRUTH_FILE))?
            .first()
            .ok_or_else(|| CliError::Invalid("ground-truth file is empty".into()))?,
    };

    let start = Instant::now();
    let first = load_frame(&frames[0])?;
    let mut state = TrackState::init(&first, init, &model, &config)?;
    let mut boxes = vec![init];
    for path in &frames[1..] {
        let frame = load_frame(path)?;
        if (frame.height(), frame.width()) != (first.height(), first.width()) {
            return Err(CliError::Invalid(format!("{} differs in size from the first frame", path.display())));
        }
        boxes.push(state.track_frame(&frame)?);
    }
    let secs = start.elapsed().as_secs_f64();
    write_boxes(out, &boxes)?;
    println!(
        "tracked {} frames in {:.2} s ({:.2} fps) -> {}",
        boxes.len(),
        secs,
        boxes.len() as f64 / secs.max(1e-9),
        out.display()
    );
    Ok(())
}

pub fn eval(weights: &Path, args: &TrackerArgs, jobs: usize, out: &Path, dataset: &Path) -> CliResult {
    let config = args.resolve()?;
    let model = load_model(weights)?;
    let dirs = list_sequences(dataset)?;
    if dirs.is_empty() {
        return Err(CliError::Invalid(format!("no sequences under {}", dataset.display())));
    }
    let report = run_benchmark(&model, &config, &dirs, jobs)?;
    write_reports(&report, out)?;
    print!("{}", summary_csv(&report));
    for s in &report.skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    if report.sequences.is_empty() {
        return Err(CliError::Invalid("every sequence was skipped".into()));
    }
    Ok(())
}

pub fn importance(weights: &Path, args: &TrackerArgs, bbox: &str, out: &Path, frame: &Path) -> CliResult {
    let config = args.resolve()?;
    let model = load_model(weights)?;
    let target = parse_box(bbox)?;
    let image = load_frame(frame)?;
    let state = TrackState::init(&image, target, &model, &config)?;
    let json = serde_json::to_string_pretty(&importance_report(state.selection()))
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    fs::write(out, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    Ok(())
}

pub fn synth(spec: &SynthSpec, out: &Path) -> CliResult {
    let seq = generate(spec)?;
    io::write_sequence(out, &seq.frames, &seq.gt)?;
    println!("wrote {} {} frames to {}", seq.frames.len(), spec.kind, out.display());
    Ok(())
}

pub fn random_weights(seed: u64, out: &Path) -> CliResult {
    BackboneModel::random(seed).save_weights(out)?;
    Ok(())
}

pub fn parity(weights: &Path, tolerance: f64, fixtures: &Path) -> CliResult {
    let model = load_model(weights)?;
    let results = check_parity(&model, fixtures)?;
    let mut worst: f64 = 0.0;
    for r in &results {
        println!("{} {} max_abs {:.3e}", r.fixture, r.tap, r.max_abs);
        worst = worst.max(r.max_abs);
    }
    if worst > tolerance {
        return Err(CliError::Invalid(format!("max deviation {worst:.3e} exceeds {tolerance:.1e}")));
    }
    Ok(())
}
