//! Synthetic sequences with exact ground truth: a textured square that moves
//! over a smooth background (`translate`), grows in place (`zoom`) or moves
//! over structured noise (`clutter`).

use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tracker::BBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Translate,
    Zoom,
    Clutter,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(SynthKind::Translate),
            "zoom" => Ok(SynthKind::Zoom),
            "clutter" => Ok(SynthKind::Clutter),
            _ => Err(Error::Invalid(format!("unknown synth kind {s:?} (translate, zoom, clutter)"))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Translate => "translate",
            SynthKind::Zoom => "zoom",
            SynthKind::Clutter => "clutter",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub frames: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Initial side of the square in pixels.
    pub side: f64,
    /// Pixels per frame for the moving kinds.
    pub speed: f64,
    /// Relative side growth per frame for `zoom`.
    pub growth: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, frames: usize, seed: u64) -> Self {
        SynthSpec {
            kind,
            frames,
            seed,
            width: 160,
            height: 160,
            side: 32.0,
            speed: 2.5,
            growth: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<RgbImage>,
    pub gt: Vec<BBox>,
}

/// Boxes are snapped to 0.01 px so the two-decimal ground-truth file is exact.
fn snap(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

struct Texture {
    cells: usize,
    colors: Vec<[f32; 3]>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, cells: usize) -> Self {
        let colors = (0..cells * cells)
            .map(|_| [0; 3].map(|_: i32| rng.random_range(0.0..255.0f32)))
            .collect();
        Texture { cells, colors }
    }

    /// Nearest-cell lookup at relative coordinates in `[0, 1)`.
    fn at(&self, u: f64, v: f64) -> [f32; 3] {
        let n = self.cells;
        let i = ((v * n as f64) as usize).min(n - 1);
        let j = ((u * n as f64) as usize).min(n - 1);
        self.colors[i * n + j]
    }
}

fn smooth_background(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<[f32; 3]> {
    let base: [f32; 3] = [0; 3].map(|_: i32| rng.random_range(70.0..150.0f32));
    let waves: Vec<(f64, f64, f64, usize)> = (0..4)
        .map(|i| {
            (
                rng.random_range(0.01..0.04),
                rng.random_range(0.01..0.04),
                rng.random_range(0.0..std::f64::consts::TAU),
                i % 3,
            )
        })
        .collect();
    let mut px = vec![base; w * h];
    for y in 0..h {
        for x in 0..w {
            for &(fy, fx, phase, c) in &waves {
                px[y * w + x][c] += (25.0 * (fy * y as f64 + fx * x as f64 + phase).sin()) as f32;
            }
        }
    }
    px
}

/// Multi-octave value noise plus scattered rectangles.
fn clutter_background(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<[f32; 3]> {
    let mut px = smooth_background(rng, w, h);
    for (cell, amp) in [(16usize, 45.0f32), (6, 30.0), (3, 15.0)] {
        let (gh, gw) = (h / cell + 2, w / cell + 2);
        let grid: Vec<[f32; 3]> = (0..gh * gw)
            .map(|_| [0; 3].map(|_: i32| rng.random_range(-amp..amp)))
            .collect();
        for y in 0..h {
            let gy = y as f32 / cell as f32;
            let (y0, fy) = (gy.floor() as usize, gy.fract());
            for x in 0..w {
                let gx = x as f32 / cell as f32;
                let (x0, fx) = (gx.floor() as usize, gx.fract());
                for c in 0..3 {
                    let g = |yy: usize, xx: usize| grid[yy * gw + xx][c];
                    let top = g(y0, x0) * (1.0 - fx) + g(y0, x0 + 1) * fx;
                    let bot = g(y0 + 1, x0) * (1.0 - fx) + g(y0 + 1, x0 + 1) * fx;
                    px[y * w + x][c] += top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    for _ in 0..(w * h / 400) {
        let (rw, rh) = (rng.random_range(3..14), rng.random_range(3..14));
        let (rx, ry) = (rng.random_range(0..w), rng.random_range(0..h));
        let color: [f32; 3] = [0; 3].map(|_: i32| rng.random_range(0.0..255.0f32));
        for y in ry..(ry + rh).min(h) {
            for x in rx..(rx + rw).min(w) {
                px[y * w + x] = color;
            }
        }
    }
    px
}

fn render(bg: &[[f32; 3]], w: usize, h: usize, tex: &Texture, b: &BBox) -> RgbImage {
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        // Pixel centres decide coverage.
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let (u, v) = ((px - b.x) / b.w, (py - b.y) / b.h);
        let c = if (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v) {
            tex.at(u, v)
        } else {
            bg[y as usize * w + x as usize]
        };
        Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

/// Generates a sequence. Everything derives from `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<SynthSequence> {
    if spec.frames == 0 {
        return Err(Error::Invalid("frames must be at least 1".into()));
    }
    let (w, h) = (spec.width, spec.height);
    let final_side = match spec.kind {
        SynthKind::Zoom => spec.side * (1.0 + spec.growth).powi(spec.frames as i32 - 1),
        _ => spec.side,
    };
    if !(spec.side >= 4.0) || final_side + 4.0 > w.min(h) as f64 || !(spec.growth > -1.0) {
        return Err(Error::Invalid(format!(
            "square of side {:.1}..{final_side:.1} does not fit a {w}x{h} frame",
            spec.side
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tex = Texture::random(&mut rng, 8);
    let bg = match spec.kind {
        SynthKind::Clutter => clutter_background(&mut rng, w, h),
        _ => smooth_background(&mut rng, w, h),
    };

    let mut gt = Vec::with_capacity(spec.frames);
    match spec.kind {
        SynthKind::Zoom => {
            let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
            for i in 0..spec.frames {
                let side = spec.side * (1.0 + spec.growth).powi(i as i32);
                gt.push(BBox::from_center(cx, cy, side, side));
            }
        }
        SynthKind::Translate | SynthKind::Clutter => {
            let side = spec.side;
            let (max_x, max_y) = (w as f64 - side, h as f64 - side);
            let (mut x, mut y) = (rng.random_range(0.25..0.5) * max_x, rng.random_range(0.25..0.5) * max_y);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (mut vx, mut vy) = (spec.speed * angle.cos(), spec.speed * angle.sin());
            for _ in 0..spec.frames {
                gt.push(BBox { x, y, w: side, h: side });
                // Reflect off the frame border.
                x += vx;
                y += vy;
                if x < 0.0 || x > max_x {
                    vx = -vx;
                    x = x.clamp(0.0, max_x);
                }
                if y < 0.0 || y > max_y {
                    vy = -vy;
                    y = y.clamp(0.0, max_y);
                }
            }
        }
    }
    let gt: Vec<BBox> = gt
        .into_iter()
        .map(|b| BBox {
            x: snap(b.x),
            y: snap(b.y),
            w: snap(b.w),
            h: snap(b.h),
        })
        .collect();
    let frames = gt.iter().map(|b| render(&bg, w, h, &tex, b)).collect();
    Ok(SynthSequence { frames, gt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::format_boxes;

    #[test]
    fn counts_and_determinism() {
        for kind in [SynthKind::Translate, SynthKind::Zoom, SynthKind::Clutter] {
            let spec = SynthSpec::new(kind, 30, 11);
            let a = generate(&spec).unwrap();
            assert_eq!(a.frames.len(), 30);
            assert_eq!(a.gt.len(), 30);
            assert_eq!(a, generate(&spec).unwrap());
            let b = generate(&SynthSpec { seed: 12, ..spec }).unwrap();
            assert_ne!(a.frames[0], b.frames[0]);
        }
    }

    #[test]
    fn zoom_grows() {
        let seq = generate(&SynthSpec::new(SynthKind::Zoom, 30, 1)).unwrap();
        for p in seq.gt.windows(2) {
            assert!(p[1].area() > p[0].area());
            assert!((p[1].w / p[0].w - 1.01).abs() < 1e-3);
        }
    }

    #[test]
    fn moving_square_stays_inside() {
        for kind in [SynthKind::Translate, SynthKind::Clutter] {
            let spec = SynthSpec { speed: 7.0, ..SynthSpec::new(kind, 120, 5) };
            let seq = generate(&spec).unwrap();
            for b in &seq.gt {
                assert!(b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= 160.0 && b.y + b.h <= 160.0, "{b:?}");
            }
            let moved = seq.gt.windows(2).all(|p| p[0] != p[1]);
            assert!(moved);
        }
    }

    #[test]
    fn ground_truth_is_exact_in_two_decimals() {
        let seq = generate(&SynthSpec::new(SynthKind::Translate, 10, 3)).unwrap();
        let text = format_boxes(&seq.gt);
        let back = crate::io::parse_boxes(&text, std::path::Path::new("t")).unwrap();
        for (a, b) in seq.gt.iter().zip(&back) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn square_is_painted_where_the_box_is() {
        let seq = generate(&SynthSpec::new(SynthKind::Clutter, 2, 8)).unwrap();
        let b = seq.gt[1];
        let (cx, cy) = b.center();
        let tex = {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            Texture::random(&mut rng, 8)
        };
        let want = tex.at(((cx.floor() + 0.5) - b.x) / b.w, ((cy.floor() + 0.5) - b.y) / b.h);
        let got = seq.frames[1].get_pixel(cx.floor() as u32, cy.floor() as u32).0;
        assert_eq!(got, want.map(|v| v.round() as u8));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&SynthSpec::new(SynthKind::Translate, 0, 1)).is_err());
        let huge = SynthSpec { growth: 0.5, ..SynthSpec::new(SynthKind::Zoom, 30, 1) };
        assert!(generate(&huge).is_err());
        assert!("spin".parse::<SynthKind>().is_err());
        assert_eq!("zoom".parse::<SynthKind>().unwrap().to_string(), "zoom");
    }
}
