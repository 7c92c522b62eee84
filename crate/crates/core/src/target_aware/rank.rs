//! Pairwise ranking of scaled target crops: a sample whose size is closer to
//! the ground truth should score higher than one further away.

use super::descent::{minimize, Descent, TrainLog};
use crate::error::{Error, Result};
use crate::tensor::{conv2d_input_grad, conv2d_kernel_grad, conv2d_valid, sample_window, ConvKernel, Tensor3};

/// Box in continuous feature-cell coordinates (cell `r` spans `[r, r + 1)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatBox {
    pub cy: f64,
    pub cx: f64,
    pub h: f64,
    pub w: f64,
}

/// Scale distances closer than this are treated as ties.
const TIE_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RankPairSet {
    pub scales: Vec<f64>,
    pub samples: Vec<Tensor3>,
    /// `(i, j)`: sample `j` is strictly closer in size to the ground truth.
    pub pairs: Vec<(usize, usize)>,
}

/// Ordered pairs `(i, j)` with `|ln s_j| < |ln s_i|`. Exact ties under the
/// log metric produce no pair.
pub fn scale_pairs(scales: &[f64]) -> Vec<(usize, usize)> {
    let dist: Vec<f64> = scales.iter().map(|s| s.ln().abs()).collect();
    let mut pairs = Vec::new();
    for i in 0..scales.len() {
        for j in 0..scales.len() {
            if dist[j] + TIE_EPS < dist[i] {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// One crop per scale, each covering `scale x gt` around the target centre
/// and resampled to `out_h x out_w` cells.
pub fn build_rank_pairs(
    feature_patch: &Tensor3,
    gt: FeatBox,
    scales: &[f64],
    out_h: usize,
    out_w: usize,
) -> Result<RankPairSet> {
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::Invalid(format!("rank scale {s} must be positive")));
    }
    let (h, w) = (feature_patch.height() as f64, feature_patch.width() as f64);
    let inside = gt.h > 0.0
        && gt.w > 0.0
        && gt.cy - gt.h / 2.0 >= -TIE_EPS
        && gt.cx - gt.w / 2.0 >= -TIE_EPS
        && gt.cy + gt.h / 2.0 <= h + TIE_EPS
        && gt.cx + gt.w / 2.0 <= w + TIE_EPS;
    if !inside {
        return Err(Error::Invalid(format!(
            "target box {gt:?} is not inside the {h}x{w} feature patch"
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Invalid("rank sample size must be non-empty".into()));
    }
    let pairs = scale_pairs(scales);
    if pairs.is_empty() {
        return Err(Error::Empty(format!("scales {scales:?} produce no ranking pair")));
    }
    let samples = scales
        .iter()
        .map(|&s| sample_window(feature_patch, gt.cy, gt.cx, gt.h * s, gt.w * s, out_h, out_w))
        .collect();
    Ok(RankPairSet {
        scales: scales.to_vec(),
        samples,
        pairs,
    })
}

fn check_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Empty("ranking pair set".into()));
    }
    if let Some(p) = pairs.iter().find(|(i, j)| *i >= n || *j >= n) {
        return Err(Error::Invalid(format!("pair {p:?} indexes past {n} predictions")));
    }
    Ok(())
}

/// `log(1 + sum_pairs exp(f_i - f_j))`, evaluated without overflow.
pub fn rank_loss(predictions: &[f64], pairs: &[(usize, usize)]) -> Result<f64> {
    check_pairs(predictions.len(), pairs)?;
    let diffs: Vec<f64> = pairs.iter().map(|&(i, j)| predictions[i] - predictions[j]).collect();
    let m = diffs.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        return Ok(diffs.iter().map(|d| d.exp()).sum::<f64>().ln_1p());
    }
    let s: f64 = diffs.iter().map(|d| (d - m).exp()).sum();
    Ok(m + ((-m).exp() + s).ln())
}

/// `dL/df_k = (sum_{i=k} e_ij - sum_{j=k} e_ij) / (1 + S)` with
/// `e_ij = exp(f_i - f_j)` and `S` their sum over all pairs.
pub fn rank_prediction_grad(predictions: &[f64], pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    check_pairs(predictions.len(), pairs)?;
    let diffs: Vec<f64> = pairs.iter().map(|&(i, j)| predictions[i] - predictions[j]).collect();
    let m = diffs.iter().copied().fold(0.0, f64::max);
    let scaled: Vec<f64> = diffs.iter().map(|d| (d - m).exp()).collect();
    let denom = (-m).exp() + scaled.iter().sum::<f64>();
    let mut grad = vec![0.0; predictions.len()];
    for (&(i, j), e) in pairs.iter().zip(&scaled) {
        grad[i] += e / denom;
        grad[j] -= e / denom;
    }
    Ok(grad)
}

/// Single-output scorer `f(x; w)`; its kernel spans the whole sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RankHead {
    pub kernel: ConvKernel,
    pub descent: Descent,
}

impl RankHead {
    pub fn new(in_channels: usize, h: usize, w: usize, descent: Descent) -> Result<Self> {
        if descent.max_iters < 1 {
            return Err(Error::Invalid("rank head needs max_iters >= 1".into()));
        }
        Ok(RankHead {
            kernel: ConvKernel::zeros(1, in_channels, h, w),
            descent,
        })
    }

    pub fn score(&self, sample: &Tensor3) -> Result<f64> {
        score_with(&self.kernel, sample)
    }

    pub fn scores(&self, samples: &[Tensor3]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.score(s)).collect()
    }
}

fn score_with(kernel: &ConvKernel, sample: &Tensor3) -> Result<f64> {
    let out = conv2d_valid(sample, kernel)?;
    if out.data().len() != 1 {
        return Err(Error::Dimension(format!(
            "rank kernel {} must cover sample {} exactly",
            kernel.shape_str(),
            sample.shape_str()
        )));
    }
    Ok(out.data()[0] as f64)
}

fn loss_with(kernel: &ConvKernel, samples: &[Tensor3], pairs: &[(usize, usize)]) -> Result<f64> {
    let preds = samples
        .iter()
        .map(|s| score_with(kernel, s))
        .collect::<Result<Vec<_>>>()?;
    rank_loss(&preds, pairs)
}

/// Gradient of the ranking loss with respect to every sample, in sample order.
pub fn rank_feature_grad(samples: &[Tensor3], head: &RankHead, pairs: &[(usize, usize)]) -> Result<Vec<Tensor3>> {
    let preds = head.scores(samples)?;
    let dl_df = rank_prediction_grad(&preds, pairs)?;
    dl_df
        .iter()
        .map(|&g| conv2d_input_grad(&Tensor3::filled(1, 1, 1, g as f32), &head.kernel))
        .collect()
}

/// Channelwise sum of per-sample gradients.
pub fn sum_sample_grads(grads: &[Tensor3]) -> Result<Tensor3> {
    let first = grads.first().ok_or_else(|| Error::Empty("no sample gradients".into()))?;
    let mut total = Tensor3::zeros(first.channels(), first.height(), first.width());
    for g in grads {
        total.add_scaled(1.0, g)?;
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct TrainedRank {
    pub head: RankHead,
    pub final_loss: f64,
    pub log: TrainLog,
}

pub fn train_rank_head(samples: &[Tensor3], pairs: &[(usize, usize)], head: RankHead) -> Result<TrainedRank> {
    if samples.is_empty() {
        return Err(Error::Empty("rank training needs samples".into()));
    }
    check_pairs(samples.len(), pairs)?;
    let mut head = head;
    let dims = head.kernel.dims();
    let log = minimize(
        &mut head.kernel,
        &head.descent.clone(),
        |k| loss_with(k, samples, pairs),
        |k| {
            let preds = samples
                .iter()
                .map(|s| score_with(k, s))
                .collect::<Result<Vec<_>>>()?;
            let dl_df = rank_prediction_grad(&preds, pairs)?;
            let mut total = ConvKernel::zeros(dims[0], dims[1], dims[2], dims[3]);
            for (s, &g) in samples.iter().zip(&dl_df) {
                let gk = conv2d_kernel_grad(s, &Tensor3::filled(1, 1, 1, g as f32), dims)?;
                for (t, &v) in total.weights_mut().iter_mut().zip(gk.weights()) {
                    *t += v;
                }
                total.bias_mut()[0] += gk.bias()[0];
            }
            Ok(total)
        },
    )?;
    Ok(TrainedRank {
        final_loss: log.final_loss(),
        head,
        log,
    })
}
