//! Siamese tracking on target-aware features: the first frame fixes a
//! template, every later frame is searched by correlation over a three-scale
//! pyramid.

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneModel, ImagePatch, FEATURE_STRIDE};
use crate::config::TrackerConfig;
use crate::error::{Error, Result};
use crate::target_aware::{compose_features, learn_selection, FeatBox, TargetAwareSelection};
use crate::tensor::{cross_correlate, sample_window, upsample_corner, Tensor3};

/// Axis-aligned box in continuous pixel coordinates with a 0-indexed origin:
/// pixel `(r, c)` covers `[r, r + 1) x [c, c + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        if !b.is_valid() {
            return Err(Error::Invalid(format!("degenerate box {x},{y},{w},{h}")));
        }
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    /// `(cx, cy)`.
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Template and search extents in feature cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Extents {
    pub template: (usize, usize),
    pub search: (usize, usize),
}

/// Chooses the template size in cells. The box is rescaled isotropically so
/// that its short side reaches the lower bound and its long side stays under
/// the upper bound (the upper bound wins for extreme aspect ratios); each
/// side is then rounded and clipped. The search extent is `search_factor`
/// times larger, adjusted so the template sits exactly in its middle.
pub fn extents(h: f64, w: f64, config: &TrackerConfig) -> Extents {
    let stride = FEATURE_STRIDE as f64;
    let (lo, hi) = (config.template_feat_min, config.template_feat_max);
    let (short, long) = (h.min(w) / stride, h.max(w) / stride);
    let mut ratio = 1.0;
    if short < lo as f64 {
        ratio = lo as f64 / short;
    }
    if long * ratio > hi as f64 {
        ratio = hi as f64 / long;
    }
    let cells = |v: f64| ((v / stride * ratio).round() as usize).clamp(lo, hi);
    let search = |t: usize| {
        let s = ((t as f64 * config.search_factor).round() as usize).max(t);
        s + (s - t) % 2
    };
    let (th, tw) = (cells(h), cells(w));
    Extents {
        template: (th, tw),
        search: (search(th), search(tw)),
    }
}

/// Resamples the search region around `bbox` so the box covers exactly the
/// template extent. Returns the patch and the pixel-to-patch scale per axis.
fn search_patch(frame: &Tensor3, bbox: &BBox, ext: &Extents) -> Result<(ImagePatch, f64, f64)> {
    let stride = FEATURE_STRIDE as f64;
    let sy = ext.template.0 as f64 * stride / bbox.h;
    let sx = ext.template.1 as f64 * stride / bbox.w;
    let (ph, pw) = (ext.search.0 * FEATURE_STRIDE, ext.search.1 * FEATURE_STRIDE);
    let (cx, cy) = bbox.center();
    let pixels = sample_window(frame, cy, cx, ph as f64 / sy, pw as f64 / sx, ph, pw);
    Ok((ImagePatch::new(pixels)?, sy, sx))
}

fn check_frame(frame: &Tensor3) -> Result<()> {
    if frame.channels() != 3 || frame.height() == 0 || frame.width() == 0 {
        return Err(Error::Dimension(format!("frame must be 3xHxW, got {}", frame.shape_str())));
    }
    Ok(())
}

/// Removes each channel's spatial mean. Correlating with a zero-mean
/// template scores structure rather than activation energy, which otherwise
/// biases the pyramid toward whichever level shows the most active area.
pub fn center_channels(t: &mut Tensor3) {
    let n = t.plane_len() as f64;
    for c in 0..t.channels() {
        let mean = (t.channel_sum(c) / n) as f32;
        t.channel_mut(c).iter_mut().for_each(|v| *v -= mean);
    }
}

/// Outcome of evaluating one pyramid level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleScore {
    pub scale: f64,
    pub peak: f64,
    pub weighted: f64,
}

/// Index of the best penalised peak. Ties keep the earlier level.
pub fn pick_scale(peaks: &[f64], penalties: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..peaks.len() {
        if peaks[i] * penalties[i] > peaks[best] * penalties[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone)]
pub struct TrackState<'m> {
    model: &'m BackboneModel,
    config: TrackerConfig,
    extents: Extents,
    template: Tensor3,
    selection: TargetAwareSelection,
    bbox: BBox,
    last_scales: Vec<ScaleScore>,
    last_choice: Option<usize>,
}

impl<'m> TrackState<'m> {
    /// Learns the target-aware channels on the first frame and stores the
    /// composed template.
    pub fn init(frame: &Tensor3, gt: BBox, model: &'m BackboneModel, config: &TrackerConfig) -> Result<Self> {
        config.validate()?;
        check_frame(frame)?;
        let (cx, cy) = gt.center();
        let (fh, fw) = (frame.height() as f64, frame.width() as f64);
        if !gt.is_valid() || !(0.0..=fw).contains(&cx) || !(0.0..=fh).contains(&cy) {
            return Err(Error::Invalid(format!(
                "initial box {},{},{},{} is degenerate or centred outside the {}x{} frame",
                gt.x,
                gt.y,
                gt.w,
                gt.h,
                frame.width(),
                frame.height()
            )));
        }
        let ext = extents(gt.h, gt.w, config);
        let (patch, _, _) = search_patch(frame, &gt, &ext)?;
        let taps = model.forward_taps(&patch)?;
        let (th, tw) = ext.template;
        let (sh, sw) = ext.search;
        let target = FeatBox {
            cy: sh as f64 / 2.0,
            cx: sw as f64 / 2.0,
            h: th as f64,
            w: tw as f64,
        };
        let selection = learn_selection(&taps, target, th, tw, config)?;
        let features = compose_features(&taps, &selection.sel_43, &selection.sel_41)?;
        let mut template = features.crop((sh - th) / 2, (sw - tw) / 2, th, tw)?;
        if config.center_template {
            center_channels(&mut template);
        }
        Ok(TrackState {
            model,
            config: config.clone(),
            extents: ext,
            template,
            selection,
            bbox: gt,
            last_scales: Vec::new(),
            last_choice: None,
        })
    }

    /// Locates the target in the next frame and updates the current box.
    pub fn track_frame(&mut self, frame: &Tensor3) -> Result<BBox> {
        check_frame(frame)?;
        let (patch, sy, sx) = search_patch(frame, &self.bbox, &self.extents)?;
        let taps = self.model.forward_taps(&patch)?;
        let features = compose_features(&taps, &self.selection.sel_43, &self.selection.sel_41)?;
        let (sh, sw) = self.extents.search;
        let (th, tw) = self.extents.template;

        let mut responses = Vec::with_capacity(3);
        let mut scores = Vec::with_capacity(3);
        for (&s, &penalty) in self.config.scale_factors.iter().zip(&self.config.scale_penalties) {
            let view = sample_window(&features, sh as f64 / 2.0, sw as f64 / 2.0, sh as f64 * s, sw as f64 * s, sh, sw);
            let response = cross_correlate(&view, &self.template)?;
            let peak = response.argmax().2 as f64;
            scores.push(ScaleScore {
                scale: s,
                peak,
                weighted: peak * penalty,
            });
            responses.push(response);
        }
        let peaks: Vec<f64> = scores.iter().map(|s| s.peak).collect();
        let best = pick_scale(&peaks, &self.config.scale_penalties);
        let s = scores[best].scale;

        let up = self.config.response_upsample;
        let (qy, qx, _) = upsample_corner(&responses[best], up).argmax();
        // Offset of the matched template centre from the search centre, in
        // cells of the rescaled view; multiply by the level scale for cells of
        // the search features, then by the stride for patch pixels.
        let dy = qy as f64 / up as f64 + th as f64 / 2.0 - sh as f64 / 2.0;
        let dx = qx as f64 / up as f64 + tw as f64 / 2.0 - sw as f64 / 2.0;
        let stride = FEATURE_STRIDE as f64;
        let (cx, cy) = self.bbox.center();
        let cx = (cx + dx * s * stride / sx).clamp(0.0, frame.width() as f64);
        let cy = (cy + dy * s * stride / sy).clamp(0.0, frame.height() as f64);
        self.bbox = BBox::from_center(cx, cy, self.bbox.w * s, self.bbox.h * s);
        self.last_scales = scores;
        self.last_choice = Some(best);
        Ok(self.bbox)
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn template(&self) -> &Tensor3 {
        &self.template
    }

    pub fn selection(&self) -> &TargetAwareSelection {
        &self.selection
    }

    pub fn extents(&self) -> Extents {
        self.extents
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Per-level peaks from the most recent `track_frame`.
    pub fn last_scales(&self) -> &[ScaleScore] {
        &self.last_scales
    }

    /// Pyramid index chosen by the most recent `track_frame`.
    pub fn last_choice(&self) -> Option<usize> {
        self.last_choice
    }
}

/// Tracks through `frames`, initialising on the first one. The output starts
/// with `init` and has one box per frame.
pub fn track_sequence(model: &BackboneModel, config: &TrackerConfig, frames: &[Tensor3], init: BBox) -> Result<Vec<BBox>> {
    let (first, rest) = frames
        .split_first()
        .ok_or_else(|| Error::Empty("sequence has no frames".into()))?;
    let mut state = TrackState::init(first, init, model, config)?;
    let mut boxes = Vec::with_capacity(frames.len());
    boxes.push(init);
    for frame in rest {
        boxes.push(state.track_frame(frame)?);
    }
    Ok(boxes)
}
