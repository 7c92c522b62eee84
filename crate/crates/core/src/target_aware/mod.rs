//! Target-aware channel selection.
//!
//! Two single-convolution heads are fitted on the first frame: a ridge
//! regressor onto a Gaussian label centred on the target, and a pairwise
//! ranking scorer over rescaled crops of the target. Their loss gradients are
//! carried back to the backbone features, pooled per channel into importance
//! scores, and the top-scoring channels of each tap form the target-aware
//! feature space.

mod descent;
mod rank;
mod ridge;

pub use descent::{Descent, TrainLog};
pub use rank::{
    build_rank_pairs, rank_feature_grad, rank_loss, rank_prediction_grad, scale_pairs, sum_sample_grads,
    train_rank_head, FeatBox, RankHead, RankPairSet, TrainedRank,
};
pub use ridge::{
    gaussian_label, regression_feature_grad, ridge_loss, train_ridge_head, GaussianLabel, RidgeHead, TrainedRidge,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{FeatureTaps, TAP_CONV4_1, TAP_CONV4_3};
use crate::config::{AblationMode, ImportanceMode, TrackerConfig};
use crate::error::{Error, Result};
use crate::tensor::{global_avg_pool, resize_bilinear, Tensor3};

/// One score per feature channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceVector {
    pub scores: Vec<f64>,
}

impl ImportanceVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("importance scores".into()));
        }
        Ok(ImportanceVector { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn with_mode(&self, mode: ImportanceMode) -> ImportanceVector {
        match mode {
            ImportanceMode::Signed => self.clone(),
            ImportanceMode::Absolute => ImportanceVector {
                scores: self.scores.iter().map(|s| s.abs()).collect(),
            },
        }
    }

    /// Divided by the largest magnitude; an all-zero vector stays zero.
    pub fn normalized(&self) -> ImportanceVector {
        let m = self.scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if m == 0.0 {
            return self.clone();
        }
        ImportanceVector {
            scores: self.scores.iter().map(|s| s / m).collect(),
        }
    }
}

/// Global average pool of a feature gradient, one score per channel.
pub fn channel_importance(feature_grad: &Tensor3) -> Result<ImportanceVector> {
    ImportanceVector::new(global_avg_pool(feature_grad))
}

/// Sum of the two importance vectors after each is scaled by its own
/// largest magnitude.
pub fn combine_importances(a: &ImportanceVector, b: &ImportanceVector) -> Result<ImportanceVector> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "combining {} channel scores with {}",
            a.len(),
            b.len()
        )));
    }
    let (a, b) = (a.normalized(), b.normalized());
    ImportanceVector::new(a.scores.iter().zip(&b.scores).map(|(x, y)| x + y).collect())
}

/// Regression and ranking importances, each from its own gradient, merged.
pub fn combined_importance(reg_grad: &Tensor3, rank_grad: &Tensor3) -> Result<ImportanceVector> {
    if reg_grad.channels() != rank_grad.channels() {
        return Err(Error::Dimension(format!(
            "regression gradient {} and ranking gradient {} differ in channels",
            reg_grad.shape_str(),
            rank_grad.shape_str()
        )));
    }
    combine_importances(&channel_importance(reg_grad)?, &channel_importance(rank_grad)?)
}

/// Channel indices in strictly increasing order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChannelSelection {
    pub indices: Vec<usize>,
    pub k: usize,
}

impl ChannelSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, channel: usize) -> bool {
        self.indices.binary_search(&channel).is_ok()
    }
}

/// The `k` highest scores (clipped to the channel count); equal scores go to
/// the lower channel index. Returned indices are ascending.
pub fn select_channels(importance: &ImportanceVector, k: usize) -> ChannelSelection {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    // stable sort keeps lower indices first among ties
    order.sort_by(|&a, &b| importance.scores[b].total_cmp(&importance.scores[a]));
    order.truncate(k.min(importance.len()));
    order.sort_unstable();
    ChannelSelection { indices: order, k }
}

fn rescale_group(group: &mut Tensor3) {
    let max_sum = (0..group.channels())
        .map(|c| group.channel_sum(c))
        .fold(f64::NEG_INFINITY, f64::max);
    if max_sum > 0.0 && max_sum.is_finite() {
        group.scale((1.0 / max_sum) as f32);
    }
}

/// Stacks the selected conv4_3 channels over the selected conv4_1 channels.
/// Each group is divided by its largest per-channel sum; a group whose
/// largest sum is not positive is left as is.
pub fn compose_features(taps: &FeatureTaps, sel_43: &ChannelSelection, sel_41: &ChannelSelection) -> Result<Tensor3> {
    if sel_43.is_empty() || sel_41.is_empty() {
        return Err(Error::Empty("channel selection".into()));
    }
    let mut g43 = taps.conv4_3.select_channels(&sel_43.indices)?;
    let mut g41 = taps.conv4_1.select_channels(&sel_41.indices)?;
    if (g41.height(), g41.width()) != (g43.height(), g43.width()) {
        g41 = resize_bilinear(&g41, g43.height(), g43.width());
    }
    rescale_group(&mut g43);
    rescale_group(&mut g41);
    Tensor3::concat_channels(&[&g43, &g41])
}

/// Width of the Gaussian label for a target spanning `th x tw` cells.
pub fn label_sigma(th: usize, tw: usize, config: &TrackerConfig) -> f64 {
    (config.sigma_factor * ((th * tw) as f64).sqrt()).max(config.sigma_floor)
}

/// Scores and selections for both taps, plus training diagnostics.
#[derive(Clone, Debug)]
pub struct TargetAwareSelection {
    pub importance_43: ImportanceVector,
    pub importance_41: ImportanceVector,
    pub sel_43: ChannelSelection,
    pub sel_41: ChannelSelection,
    pub ridge_loss_43: Option<f64>,
    pub ridge_loss_41: Option<f64>,
    pub rank_loss: Option<f64>,
}

fn regression_grad(
    features: &Tensor3,
    th: usize,
    tw: usize,
    label_center: (usize, usize),
    config: &TrackerConfig,
) -> Result<(Tensor3, f64)> {
    let (rh, rw) = (features.height() + 1 - th, features.width() + 1 - tw);
    let label = gaussian_label(rh, rw, label_sigma(th, tw, config), label_center)?;
    let descent = Descent {
        learn_rate: config.ridge_lr / features.plane_len() as f64,
        max_iters: config.max_iters,
        loss_threshold: config.loss_threshold,
    };
    let head = RidgeHead::new(features.channels(), th, tw, config.lambda, descent)?;
    let trained = train_ridge_head(features, &label, head)?;
    Ok((
        regression_feature_grad(features, &trained.head, &label)?,
        trained.final_loss,
    ))
}

fn ranking_grad(features: &Tensor3, target: FeatBox, th: usize, tw: usize, config: &TrackerConfig) -> Result<(Tensor3, f64)> {
    let set = build_rank_pairs(features, target, &config.rank_scales, th, tw)?;
    let descent = Descent {
        learn_rate: config.rank_lr / features.plane_len() as f64,
        max_iters: config.max_iters,
        loss_threshold: config.loss_threshold,
    };
    let head = RankHead::new(features.channels(), th, tw, descent)?;
    let trained = train_rank_head(&set.samples, &set.pairs, head)?;
    let grads = rank_feature_grad(&set.samples, &trained.head, &set.pairs)?;
    Ok((sum_sample_grads(&grads)?, trained.final_loss))
}

/// Learns which channels of each tap describe the target.
///
/// `target` is the target box in the taps' cell coordinates and `(th, tw)`
/// its integer extent, which sets the head kernel size. The ridge label peaks
/// at the response cell where a target-sized window is aligned with the
/// target.
pub fn learn_selection(taps: &FeatureTaps, target: FeatBox, th: usize, tw: usize, config: &TrackerConfig) -> Result<TargetAwareSelection> {
    let (h, w) = (taps.conv4_3.height(), taps.conv4_3.width());
    if th == 0 || tw == 0 || th > h || tw > w {
        return Err(Error::Dimension(format!(
            "target extent {th}x{tw} does not fit feature map {}",
            taps.conv4_3.shape_str()
        )));
    }
    let (rh, rw) = (h + 1 - th, w + 1 - tw);
    let round_clamp = |v: f64, max: usize| (v.round().max(0.0) as usize).min(max - 1);
    let label_center = (
        round_clamp(target.cy - th as f64 / 2.0, rh),
        round_clamp(target.cx - tw as f64 / 2.0, rw),
    );

    let mut out = TargetAwareSelection {
        importance_43: ImportanceVector { scores: Vec::new() },
        importance_41: ImportanceVector { scores: Vec::new() },
        sel_43: ChannelSelection { indices: Vec::new(), k: 0 },
        sel_41: ChannelSelection { indices: Vec::new(), k: 0 },
        ridge_loss_43: None,
        ridge_loss_41: None,
        rank_loss: None,
    };
    match config.mode {
        AblationMode::Rand => {
            let seed = config
                .seed
                .ok_or_else(|| Error::Config("mode rand requires a seed".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |n: usize| ImportanceVector {
                scores: (0..n).map(|_| rng.random::<f64>()).collect(),
            };
            out.importance_43 = draw(taps.conv4_3.channels());
            out.importance_41 = draw(taps.conv4_1.channels());
        }
        AblationMode::Regress | AblationMode::RegressRank => {
            // The three heads are independent; each trains deterministically.
            let ((r43, r41), rank) = rayon::join(
                || {
                    rayon::join(
                        || regression_grad(&taps.conv4_3, th, tw, label_center, config),
                        || regression_grad(&taps.conv4_1, th, tw, label_center, config),
                    )
                },
                || (config.mode == AblationMode::RegressRank).then(|| ranking_grad(&taps.conv4_1, target, th, tw, config)),
            );
            let (g43, l43) = r43?;
            out.importance_43 = channel_importance(&g43)?.with_mode(config.importance_mode);
            out.ridge_loss_43 = Some(l43);
            let (g41, l41) = r41?;
            out.ridge_loss_41 = Some(l41);
            let reg41 = channel_importance(&g41)?.with_mode(config.importance_mode);
            out.importance_41 = match rank.transpose()? {
                Some((gr, lr)) => {
                    out.rank_loss = Some(lr);
                    let rank41 = channel_importance(&gr)?.with_mode(config.importance_mode);
                    combine_importances(&reg41, &rank41)?
                }
                None => reg41,
            };
        }
    }
    out.sel_43 = select_channels(&out.importance_43, config.k_conv43);
    out.sel_41 = select_channels(&out.importance_41, config.k_conv41);
    Ok(out)
}

#[derive(Serialize)]
pub struct ChannelScore {
    pub channel: usize,
    pub score: f64,
    pub selected: bool,
}

/// Importance dump: per-tap arrays of `{channel, score, selected}`.
pub fn importance_report(selection: &TargetAwareSelection) -> serde_json::Value {
    let entries = |imp: &ImportanceVector, sel: &ChannelSelection| -> Vec<ChannelScore> {
        imp.scores
            .iter()
            .enumerate()
            .map(|(channel, &score)| ChannelScore {
                channel,
                score,
                selected: sel.contains(channel),
            })
            .collect()
    };
    serde_json::json!({
        TAP_CONV4_3: entries(&selection.importance_43, &selection.sel_43),
        TAP_CONV4_1: entries(&selection.importance_41, &selection.sel_41),
    })
}
