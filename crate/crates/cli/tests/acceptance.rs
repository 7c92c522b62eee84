//! Acceptance gate. Every criterion prints one `PASS`/`FAIL` line; soft
//! checks are reported but never fail the run. Oracles here are written
//! independently of the library: plain f64 loops, normal equations, brute
//! force sorting and hand tallies.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tatrack_core::backbone::BackboneModel;
use tatrack_core::config::{AblationMode, TrackerConfig};
use tatrack_core::eval::{curves, evaluate, overlap_ratio};
use tatrack_core::io::image_to_tensor;
use tatrack_core::synth::{generate, SynthKind, SynthSpec};
use tatrack_core::target_aware::{
    rank_feature_grad, rank_loss, regression_feature_grad, scale_pairs, select_channels, train_ridge_head,
    Descent, GaussianLabel, ImportanceVector, RankHead, RidgeHead,
};
use tatrack_core::tracker::{BBox, TrackState};
use tatrack_core::{ConvKernel, Tensor3};

/// Seed of the random-weight backbone used by every tracking criterion.
const BACKBONE_SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f32, hi: f32) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(lo..hi))
}

fn random_kernel(rng: &mut ChaCha8Rng, c: usize, kh: usize, kw: usize) -> ConvKernel {
    let weights = (0..c * kh * kw).map(|_| rng.random_range(-0.5..0.5)).collect();
    ConvKernel::new(1, c, kh, kw, weights, vec![rng.random_range(-0.5..0.5)]).unwrap()
}

/// `b + sum W * X` at output position `(y, x)`, all in f64.
fn head_output(x: &[f64], dims: (usize, usize, usize), k: &ConvKernel, y: usize, xo: usize) -> f64 {
    let (c, h, w) = dims;
    let (kh, kw) = (k.kernel_h(), k.kernel_w());
    let mut acc = k.bias()[0] as f64;
    for ch in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                acc += k.weight(0, ch, dy, dx) as f64 * x[(ch * h + y + dy) * w + xo + dx];
            }
        }
    }
    acc
}

fn ridge_loss_f64(x: &[f64], dims: (usize, usize, usize), k: &ConvKernel, label: &Tensor3, lambda: f64) -> f64 {
    let mut fit = 0.0;
    for y in 0..label.height() {
        for xo in 0..label.width() {
            fit += (label.get(0, y, xo) as f64 - head_output(x, dims, k, y, xo)).powi(2);
        }
    }
    let reg: f64 = k.weights().iter().map(|&v| (v as f64).powi(2)).sum();
    fit + lambda * reg
}

fn rank_loss_f64(samples: &[Vec<f64>], dims: (usize, usize, usize), k: &ConvKernel, pairs: &[(usize, usize)]) -> f64 {
    let s: Vec<f64> = samples.iter().map(|x| head_output(x, dims, k, 0, 0)).collect();
    (1.0 + pairs.iter().map(|&(i, j)| (s[i] - s[j]).exp()).sum::<f64>()).ln()
}

fn central_diff(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    const STEP: f64 = 1e-3;
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(x);
            x[i] = orig - STEP;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(&a, &n)| (a as f64 - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

fn to_f64(t: &Tensor3) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn gradient_suite() -> Outcome {
    const INSTANCES: usize = 20;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_ridge: f64 = 0.0;
    for _ in 0..INSTANCES {
        let c = rng.random_range(1..=8);
        let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let (kh, kw) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let feats = random_tensor(&mut rng, c, h, w, -1.0, 1.0);
        let label = GaussianLabel {
            map: random_tensor(&mut rng, 1, h - kh + 1, w - kw + 1, 0.0, 1.0),
            sigma: 1.0,
            center: (0, 0),
        };
        let lambda = rng.random_range(0.0..0.1);
        let mut head = RidgeHead::new(c, kh, kw, lambda, Descent::default()).unwrap();
        head.kernel = random_kernel(&mut rng, c, kh, kw);
        let analytic = regression_feature_grad(&feats, &head, &label).unwrap();
        let dims = (c, h, w);
        let numeric = central_diff(&mut to_f64(&feats), |x| ridge_loss_f64(x, dims, &head.kernel, &label.map, lambda));
        worst_ridge = worst_ridge.max(rel_error(analytic.data(), &numeric));
    }

    let mut worst_rank: f64 = 0.0;
    for _ in 0..INSTANCES {
        let c = rng.random_range(1..=8);
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let n = rng.random_range(2..=5);
        let scales: Vec<f64> = loop {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.4)).collect();
            if !scale_pairs(&s).is_empty() {
                break s;
            }
        };
        let pairs = scale_pairs(&scales);
        let samples: Vec<Tensor3> = (0..n).map(|_| random_tensor(&mut rng, c, h, w, -1.0, 1.0)).collect();
        let mut head = RankHead::new(c, h, w, Descent::default()).unwrap();
        head.kernel = random_kernel(&mut rng, c, h, w);
        let analytic = rank_feature_grad(&samples, &head, &pairs).unwrap();
        let dims = (c, h, w);
        let base: Vec<Vec<f64>> = samples.iter().map(to_f64).collect();
        for s in 0..n {
            let mut xs = base.clone();
            let mut flat = xs[s].clone();
            let numeric = central_diff(&mut flat, |x| {
                xs[s] = x.to_vec();
                rank_loss_f64(&xs, dims, &head.kernel, &pairs)
            });
            worst_rank = worst_rank.max(rel_error(analytic[s].data(), &numeric));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_ridge <= 1e-3 && worst_rank <= 1e-3 && secs < 10.0,
        format!(
            "{INSTANCES}+{INSTANCES} instances, worst rel err ridge {worst_ridge:.2e} rank {worst_rank:.2e} (<= 1e-3), {secs:.2} s (< 10 s)"
        ),
    )
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn ridge_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10 {
        let c = rng.random_range(2..=8);
        let (h, w) = (rng.random_range(6..=10), rng.random_range(6..=10));
        let feats = random_tensor(&mut rng, c, h, w, 0.0, 1.0);
        let centre = (rng.random_range(0..h), rng.random_range(0..w));
        let label = tatrack_core::target_aware::gaussian_label(h, w, 1.5, centre).unwrap();
        let lambda = 1e-2;

        // Normal equations over [w_1..w_c, b]; the bias is not regularised.
        let n = c + 1;
        let row = |y: usize, x: usize| -> Vec<f64> {
            let mut r: Vec<f64> = (0..c).map(|ch| feats.get(ch, y, x) as f64).collect();
            r.push(1.0);
            r
        };
        let mut ata = vec![vec![0.0; n]; n];
        let mut aty = vec![0.0; n];
        for y in 0..h {
            for x in 0..w {
                let r = row(y, x);
                let t = label.map.get(0, y, x) as f64;
                for i in 0..n {
                    aty[i] += r[i] * t;
                    for j in 0..n {
                        ata[i][j] += r[i] * r[j];
                    }
                }
            }
        }
        for (i, r) in ata.iter_mut().enumerate().take(c) {
            r[i] += lambda;
        }
        let theta = solve(ata, aty);
        let mut optimum: f64 = theta[..c].iter().map(|v| lambda * v * v).sum();
        for y in 0..h {
            for x in 0..w {
                let p: f64 = row(y, x).iter().zip(&theta).map(|(a, b)| a * b).sum();
                optimum += (label.map.get(0, y, x) as f64 - p).powi(2);
            }
        }

        let descent = Descent {
            learn_rate: 1e-3,
            max_iters: 5000,
            loss_threshold: 0.0,
        };
        let head = RidgeHead::new(c, 1, 1, lambda, descent).unwrap();
        let trained = train_ridge_head(&feats, &label, head).unwrap();
        worst_ratio = worst_ratio.max(trained.final_loss / optimum);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_ratio <= 1.05 && secs < 5.0,
        format!("10 instances, worst trained/optimal loss {worst_ratio:.5} (<= 1.05), {secs:.2} s (< 5 s)"),
    )
}

fn ranking_values() -> Outcome {
    let tie = rank_loss(&[0.7, 0.7], &[(0, 1)]).unwrap();
    let tie_ok = (tie - std::f64::consts::LN_2).abs() <= 1e-6;

    // Disjoint pairs make every margin an independent variable. Raising any
    // one margin must lower the loss, starting from zero margins and from
    // random ones.
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0;
    for trial in 0..100 {
        let npairs = rng.random_range(1..=6);
        let pairs: Vec<(usize, usize)> = (0..npairs).map(|p| (2 * p, 2 * p + 1)).collect();
        let mut preds: Vec<f64> = if trial % 2 == 0 {
            vec![0.0; 2 * npairs]
        } else {
            (0..2 * npairs).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        let before = rank_loss(&preds, &pairs).unwrap();
        let p = rng.random_range(0..npairs);
        preds[2 * p + 1] += rng.random_range(0.01..2.0);
        let after = rank_loss(&preds, &pairs).unwrap();
        if !(after < before && after >= 0.0) {
            violations += 1;
        }
    }
    outcome(
        tie_ok && violations == 0,
        format!("tie loss {tie:.9} (ln 2 = {:.9}), {violations}/100 monotonicity violations", std::f64::consts::LN_2),
    )
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    for trial in 0..100 {
        let scores: Vec<f64> = match trial % 4 {
            0 => vec![1.5; 512],
            1 => (0..512).map(|_| rng.random_range(0..5) as f64).collect(),
            _ => (0..512).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let k = match trial % 5 {
            0 => 512,
            1 => 600,
            _ => rng.random_range(1..512),
        };
        let mut order: Vec<usize> = (0..512).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut expected: Vec<usize> = order.into_iter().take(k).collect();
        expected.sort_unstable();
        let got = select_channels(&ImportanceVector::new(scores).unwrap(), k);
        if got.indices != expected {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches}/100 vectors differ from the brute-force sort"))
}

struct RunStats {
    mean_iou: f64,
    init_secs: f64,
    max_frame_secs: f64,
    scale_ups: usize,
    frames: usize,
}

fn run_synth(model: &BackboneModel, spec: &SynthSpec, config: &TrackerConfig) -> RunStats {
    let seq = generate(spec).unwrap();
    let frames: Vec<Tensor3> = seq.frames.iter().map(image_to_tensor).collect();
    let t = Instant::now();
    let mut state = TrackState::init(&frames[0], seq.gt[0], model, config).unwrap();
    let init_secs = t.elapsed().as_secs_f64();
    let mut boxes = vec![seq.gt[0]];
    let mut max_frame_secs: f64 = 0.0;
    let mut scale_ups = 0;
    for f in &frames[1..] {
        let t = Instant::now();
        boxes.push(state.track_frame(f).unwrap());
        max_frame_secs = max_frame_secs.max(t.elapsed().as_secs_f64());
        if state.last_choice() == Some(2) {
            scale_ups += 1;
        }
    }
    let r = evaluate(&boxes, &seq.gt).unwrap();
    RunStats {
        mean_iou: r.iou.iter().sum::<f64>() / r.iou.len() as f64,
        init_secs,
        max_frame_secs,
        scale_ups,
        frames: frames.len() - 1,
    }
}

fn synthetic_translation(model: &BackboneModel) -> Outcome {
    let config = TrackerConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [SynthKind::Translate, SynthKind::Clutter] {
        let s = run_synth(model, &SynthSpec::new(kind, 30, 1), &config);
        let slowest = s.max_frame_secs.max(s.init_secs);
        pass &= s.mean_iou >= 0.5 && slowest < 1.0;
        parts.push(format!(
            "{kind}: mean IoU {:.3} (>= 0.5), slowest frame {:.3} s incl. init (< 1 s)",
            s.mean_iou, slowest
        ));
    }
    outcome(pass, parts.join("; "))
}

fn synthetic_zoom(model: &BackboneModel) -> Outcome {
    // The tracker harness: 10% growth per frame over 10 frames. The generator
    // default of 1% per frame is below half a pyramid step (45/43 ~ 4.7%),
    // where holding scale is the correct choice; it is reported alongside.
    let config = TrackerConfig::default();
    let spec = SynthSpec {
        growth: 0.10,
        side: 24.0,
        ..SynthSpec::new(SynthKind::Zoom, 10, 1)
    };
    let s = run_synth(model, &spec, &config);
    let slow = run_synth(model, &SynthSpec::new(SynthKind::Zoom, 30, 1), &config);
    outcome(
        2 * s.scale_ups > s.frames,
        format!(
            "10%/frame: scale-up chosen in {}/{} frames (> 50%); info: 1%/frame default chose it in {}/{}",
            s.scale_ups, s.frames, slow.scale_ups, slow.frames
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let gt: Vec<BBox> = (0..25)
        .map(|_| BBox::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0), rng.random_range(5.0..80.0), rng.random_range(5.0..80.0)).unwrap())
        .collect();
    let perfect = evaluate(&gt, &gt).unwrap();
    // Every IoU is 1: above every threshold except 1 itself.
    let exact_mean = 20.0 / 21.0;
    let perfect_ok = (perfect.auc - exact_mean).abs() <= 1e-6 && perfect.precision_at_20 == 1.0;

    // Hand tally of a 10-frame mixed case.
    let cles = [0.0, 3.0, 5.0, 12.5, 20.0, 20.5, 35.0, 50.0, 50.5, 100.0];
    let ious = [1.0, 0.9, 0.75, 0.5, 0.5, 0.3, 0.05, 0.0, 0.0, 0.62];
    let r = curves(&cles, &ious).unwrap();
    let precision_ok = r.precision[0] == 0.1
        && r.precision[5] == 0.3
        && r.precision[20] == 0.5
        && r.precision[50] == 0.8
        && r.precision_at_20 == 0.5;
    // Success counts for thresholds 0, 0.05, ..., 1.
    let counts = [8, 7, 7, 7, 7, 7, 6, 6, 6, 6, 4, 4, 4, 3, 3, 2, 2, 2, 1, 1, 0];
    let success_ok = r.success.iter().zip(counts).all(|(&s, c)| s == c as f64 / 10.0);
    let auc_ok = (r.auc - 93.0 / 210.0).abs() < 1e-12;

    let a = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let b = BBox::new(0.5, 0.0, 1.0, 1.0).unwrap();
    let third = overlap_ratio(&a, &b);
    let third_ok = (third - 1.0 / 3.0).abs() <= 1e-9;

    outcome(
        perfect_ok && precision_ok && success_ok && auc_ok && third_ok,
        format!(
            "perfect auc {:.9} vs {exact_mean:.9}, p@20 {}; hand tally precision {precision_ok} success {success_ok} auc {:.6}; half-overlap IoU {third:.12}",
            perfect.auc, perfect.precision_at_20, r.auc
        ),
    )
}

fn tatrack(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tatrack")).args(args).output().unwrap()
}

fn determinism(work: &Path) -> Outcome {
    let weights = work.join("w.tadtw");
    let seq = work.join("seq");
    let w = weights.to_str().unwrap();
    let s = seq.to_str().unwrap();
    let seed = BACKBONE_SEED.to_string();
    for args in [
        vec!["random-weights", "--seed", &seed, "--out", w],
        vec!["synth", "--kind", "clutter", "--frames", "30", "--seed", "3", "--out", s],
    ] {
        let out = tatrack(&args);
        if !out.status.success() {
            return outcome(false, format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    let mut files = Vec::new();
    for run in 0..2 {
        let path = work.join(format!("boxes{run}.txt"));
        let out = tatrack(&["track", "--weights", w, "--out", path.to_str().unwrap(), s]);
        if !out.status.success() {
            return outcome(false, format!("track failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        files.push(std::fs::read(&path).unwrap());
    }
    let lines = files[0].iter().filter(|&&b| b == b'\n').count();
    outcome(
        files[0] == files[1] && lines == 30,
        format!("two track runs: {} bytes each, {lines} lines, identical: {}", files[0].len(), files[0] == files[1]),
    )
}

fn ablation_ordering(model: &BackboneModel) -> Outcome {
    let mut regress = Vec::new();
    let mut rand = Vec::new();
    for seed in 0..5 {
        let spec = SynthSpec::new(SynthKind::Clutter, 30, seed);
        for (mode, sink) in [(AblationMode::Regress, &mut regress), (AblationMode::Rand, &mut rand)] {
            let config = TrackerConfig {
                mode,
                seed: Some(seed),
                ..TrackerConfig::default()
            };
            sink.push(run_synth(model, &spec, &config).mean_iou);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mr, mq) = (mean(&regress), mean(&rand));
    outcome(
        mr >= mq,
        format!("clutter x5 seeds: regress mean IoU {mr:.3}, rand {mq:.3}; per seed regress {regress:.3?} rand {rand:.3?}"),
    )
}

fn main() {
    let model = BackboneModel::random(BACKBONE_SEED);
    let work = tempfile::tempdir().unwrap();
    type Check<'a> = (&'static str, bool, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("gradient suite", true, Box::new(gradient_suite)),
        ("ridge oracle", true, Box::new(ridge_oracle)),
        ("ranking values", true, Box::new(ranking_values)),
        ("selection oracle", true, Box::new(selection_oracle)),
        ("synthetic tracking (translate, clutter)", true, Box::new(|| synthetic_translation(&model))),
        ("synthetic tracking (zoom)", true, Box::new(|| synthetic_zoom(&model))),
        ("metric oracles", true, Box::new(metric_oracles)),
        ("determinism", true, Box::new(|| determinism(work.path()))),
        ("ablation ordering (soft)", false, Box::new(|| ablation_ordering(&model))),
    ];
    let mut failed = 0;
    for (name, gated, check) in &checks {
        let o = check();
        let tag = match (o.pass, gated) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "SOFT-FAIL",
        };
        println!("{tag} {name}: {}", o.detail);
        if !o.pass && *gated {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} gated criteria, {failed} failed",
        checks.iter().filter(|c| c.1).count()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
