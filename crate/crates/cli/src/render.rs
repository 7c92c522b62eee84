use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use tatrack_core::backbone::{BackboneModel, ImagePatch, FEATURE_STRIDE, MIN_PATCH_SIDE};
use tatrack_core::io::{image_to_tensor, list_frames, load_rgb, read_boxes, save_rgb, FRAME_DIR, GROUNDTRUTH_FILE};
use tatrack_core::tracker::BBox;

use crate::{CliError, CliResult};

const PRED_COLOR: Rgb<u8> = Rgb([255, 40, 40]);
const GT_COLOR: Rgb<u8> = Rgb([40, 255, 40]);

/// Two-pixel outline, clipped to the image.
pub fn draw_box(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = (b.x + b.w).round() as i64 - 1;
    let y1 = (b.y + b.h).round() as i64 - 1;
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for t in 0..2 {
        for x in x0..=x1 {
            put(x, y0 + t);
            put(x, y1 - t);
        }
        for y in y0..=y1 {
            put(x0 + t, y);
            put(x1 - t, y);
        }
    }
}

/// Mean over conv4_3 channels, stretched to `[0, 255]` and blown up to the
/// frame size.
fn feature_map_image(model: &BackboneModel, frame: &RgbImage) -> CliResult<RgbImage> {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    if w < MIN_PATCH_SIDE || h < MIN_PATCH_SIDE {
        return Err(CliError::Invalid(format!("frame {w}x{h} too small for feature maps")));
    }
    let taps = model.forward_taps(&ImagePatch::new(image_to_tensor(frame))?)?;
    let mean = taps.conv4_3.channel_mean();
    let plane = mean.channel(0);
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let fw = mean.width();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let cell = (y as usize / FEATURE_STRIDE).min(mean.height() - 1) * fw + (x as usize / FEATURE_STRIDE).min(fw - 1);
        let v = ((plane[cell] - lo) / span * 255.0).round() as u8;
        Rgb([v, v, v])
    }))
}

pub fn render(sequence: &Path, boxes_path: &Path, with_gt: bool, features: bool, weights: Option<&Path>, out: &Path) -> CliResult {
    let model = match (features, weights) {
        (true, Some(w)) => Some(BackboneModel::load_weights(w)?),
        (true, None) => return Err(CliError::Usage("--features needs --weights".into())),
        (false, _) => None,
    };
    let frames = list_frames(&sequence.join(FRAME_DIR))?;
    let boxes = read_boxes(boxes_path)?;
    if boxes.len() != frames.len() {
        return Err(CliError::Invalid(format!(
            "{} has {} boxes for {} frames",
            boxes_path.display(),
            boxes.len(),
            frames.len()
        )));
    }
    let gt = if with_gt {
        let gt = read_boxes(&sequence.join(GROUNDTRUTH_FILE))?;
        if gt.len() != frames.len() {
            return Err(CliError::Invalid(format!("{} ground-truth boxes for {} frames", gt.len(), frames.len())));
        }
        Some(gt)
    } else {
        None
    };
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    for (i, path) in frames.iter().enumerate() {
        let mut img = load_rgb(path)?;
        if let Some(model) = &model {
            save_rgb(&out.join(format!("feat_{:04}.png", i + 1)), &feature_map_image(model, &img)?)?;
        }
        if let Some(gt) = &gt {
            draw_box(&mut img, &gt[i], GT_COLOR);
        }
        draw_box(&mut img, &boxes[i], PRED_COLOR);
        save_rgb(&out.join(format!("{:04}.png", i + 1)), &img)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outline_is_clipped_and_hollow() {
        let mut img = RgbImage::new(10, 10);
        draw_box(&mut img, &BBox { x: 2.0, y: 2.0, w: 6.0, h: 6.0 }, PRED_COLOR);
        assert_eq!(*img.get_pixel(2, 2), PRED_COLOR);
        assert_eq!(*img.get_pixel(7, 7), PRED_COLOR);
        assert_eq!(*img.get_pixel(3, 5), PRED_COLOR);
        assert_eq!(*img.get_pixel(5, 5), Rgb([0, 0, 0]));
        // Partly outside: no panic, visible part drawn.
        draw_box(&mut img, &BBox { x: -3.0, y: 8.0, w: 6.0, h: 6.0 }, GT_COLOR);
        assert_eq!(*img.get_pixel(0, 8), GT_COLOR);
    }
}
