//! Frames, box files and the OTB sequence layout: `img/0001.jpg`-style
//! frames next to a `groundtruth_rect.txt` of `x,y,w,h` lines with a
//! 1-indexed origin.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use crate::tracker::BBox;

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const FRAME_DIR: &str = "img";

const FRAME_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn image_to_tensor(img: &RgbImage) -> Tensor3 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor3::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32)
}

/// Rounds and clamps to `[0, 255]`.
pub fn tensor_to_image(t: &Tensor3) -> Result<RgbImage> {
    if t.channels() != 3 {
        return Err(Error::Dimension(format!("expected 3 channels, got {}", t.shape_str())));
    }
    let (h, w) = (t.height(), t.width());
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| t.get(c, y as usize, x as usize).round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    }))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.into_rgb8())
}

pub fn load_frame(path: &Path) -> Result<Tensor3> {
    Ok(image_to_tensor(&load_rgb(path)?))
}

/// Writes PNG or JPEG depending on the extension.
pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses one box per non-empty line, fields separated by commas, tabs or
/// spaces, and converts from the 1-indexed file origin.
pub fn parse_boxes(text: &str, origin: &Path) -> Result<Vec<BBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0f64; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| parse_err(format!("not a number: {f:?}")))?;
        }
        let b = BBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).map_err(|e| parse_err(e.to_string()))?;
        out.push(b);
    }
    Ok(out)
}

pub fn read_boxes(path: &Path) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_boxes(&text, path)
}

/// One `x,y,w,h` line per box in the 1-indexed convention, two decimals.
pub fn format_boxes(boxes: &[BBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{:.2},{:.2},{:.2},{:.2}\n", b.x + 1.0, b.y + 1.0, b.w, b.h))
        .collect()
}

pub fn write_boxes(path: &Path, boxes: &[BBox]) -> Result<()> {
    fs::write(path, format_boxes(boxes)).map_err(|e| Error::io(path, e))
}

/// Frame image paths under `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_frame = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_frame && path.is_file() {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

/// A sequence on disk. Frames are read lazily.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub gt: Vec<BBox>,
}

impl Sequence {
    pub fn load(dir: &Path) -> Result<Self> {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let frames = list_frames(&dir.join(FRAME_DIR))?;
        if frames.is_empty() {
            return Err(Error::Empty(format!("no frames in {}", dir.join(FRAME_DIR).display())));
        }
        let gt = read_boxes(&dir.join(GROUNDTRUTH_FILE))?;
        if gt.len() != frames.len() {
            return Err(Error::Invalid(format!(
                "{}: {} frames but {} ground-truth boxes",
                name,
                frames.len(),
                gt.len()
            )));
        }
        Ok(Sequence { name, frames, gt })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Iterates over decoded frames, failing if a frame's size differs from
    /// the first one.
    pub fn frames(&self) -> impl Iterator<Item = Result<Tensor3>> + '_ {
        let mut size = None;
        self.frames.iter().map(move |p| {
            let t = load_frame(p)?;
            let dims = (t.height(), t.width());
            match size {
                None => size = Some(dims),
                Some(first) if first != dims => {
                    return Err(Error::Dimension(format!(
                        "{}: frame is {}x{}, first frame was {}x{}",
                        p.display(),
                        dims.0,
                        dims.1,
                        first.0,
                        first.1
                    )))
                }
                Some(_) => {}
            }
            Ok(t)
        })
    }
}

/// Subdirectories of `dataset` that contain a ground-truth file, sorted.
pub fn list_sequences(dataset: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dataset).map_err(|e| Error::io(dataset, e))? {
        let path = entry.map_err(|e| Error::io(dataset, e))?.path();
        if path.is_dir() && path.join(GROUNDTRUTH_FILE).exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Writes `frames` as `img/0001.png`... and the matching ground truth.
pub fn write_sequence(dir: &Path, frames: &[RgbImage], gt: &[BBox]) -> Result<()> {
    if frames.len() != gt.len() {
        return Err(Error::Invalid(format!("{} frames but {} boxes", frames.len(), gt.len())));
    }
    let img_dir = dir.join(FRAME_DIR);
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        save_rgb(&img_dir.join(format!("{:04}.png", i + 1)), f)?;
    }
    write_boxes(&dir.join(GROUNDTRUTH_FILE), gt)
}
