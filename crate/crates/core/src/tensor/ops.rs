use super::Tensor3;

pub fn relu(input: &Tensor3) -> Tensor3 {
    input.map(|v| v.max(0.0))
}

/// 2x2 max pooling at stride 2. Odd heights or widths are first padded by
/// replicating the last row or column.
pub fn maxpool2(input: &Tensor3) -> Tensor3 {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor3::zeros(c, oh, ow);
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..oh {
            let (y0, y1) = (2 * y, (2 * y + 1).min(h - 1));
            for x in 0..ow {
                let (x0, x1) = (2 * x, (2 * x + 1).min(w - 1));
                dst[y * ow + x] = src[y0 * w + x0]
                    .max(src[y0 * w + x1])
                    .max(src[y1 * w + x0])
                    .max(src[y1 * w + x1]);
            }
        }
    }
    out
}

/// Per-channel mean over all spatial positions.
pub fn global_avg_pool(input: &Tensor3) -> Vec<f64> {
    let n = input.plane_len().max(1) as f64;
    (0..input.channels())
        .map(|c| input.channel_sum(c) / n)
        .collect()
}

#[inline]
fn lerp_axis(pos: f64, len: usize) -> (usize, usize, f64) {
    let pos = pos.clamp(0.0, (len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}

fn bilinear_with(
    input: &Tensor3,
    out_h: usize,
    out_w: usize,
    map_y: impl Fn(usize) -> f64,
    map_x: impl Fn(usize) -> f64,
) -> Tensor3 {
    let (c, h, w) = input.shape();
    let ys: Vec<_> = (0..out_h).map(|i| lerp_axis(map_y(i), h)).collect();
    let xs: Vec<_> = (0..out_w).map(|j| lerp_axis(map_x(j), w)).collect();
    let mut out = Tensor3::zeros(c, out_h, out_w);
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = out.channel_mut(ch);
        for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] as f64 * (1.0 - fx) + src[y0 * w + x1] as f64 * fx;
                let bot = src[y1 * w + x0] as f64 * (1.0 - fx) + src[y1 * w + x1] as f64 * fx;
                dst[i * out_w + j] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    out
}

/// Channelwise bilinear resize with corner-aligned sampling: output index
/// `i` reads source position `i * (h - 1) / (new_h - 1)`. A one-cell output
/// axis samples the source midpoint. Unchanged sizes return an exact copy.
pub fn resize_bilinear(input: &Tensor3, new_h: usize, new_w: usize) -> Tensor3 {
    assert!(new_h >= 1 && new_w >= 1, "resize target must be non-empty");
    let (_, h, w) = input.shape();
    if (h, w) == (new_h, new_w) {
        return input.clone();
    }
    let axis = |len: usize, new: usize| {
        move |i: usize| {
            if new == 1 {
                (len - 1) as f64 / 2.0
            } else {
                i as f64 * (len - 1) as f64 / (new - 1) as f64
            }
        }
    };
    bilinear_with(input, new_h, new_w, axis(h, new_h), axis(w, new_w))
}

/// Corner-aligned upsampling by an integer factor: `n` cells become
/// `(n - 1) * factor + 1`, so upsampled index `q` sits at source `q / factor`.
pub fn upsample_corner(input: &Tensor3, factor: usize) -> Tensor3 {
    let (_, h, w) = input.shape();
    resize_bilinear(input, (h - 1) * factor + 1, (w - 1) * factor + 1)
}

/// Resamples the continuous window of size `win_h x win_w` centred at
/// `(center_y, center_x)` onto an `out_h x out_w` grid. Coordinates are
/// continuous, with cell `r` spanning `[r, r + 1)`; reads outside the tensor
/// replicate the nearest edge.
pub fn sample_window(
    input: &Tensor3,
    center_y: f64,
    center_x: f64,
    win_h: f64,
    win_w: f64,
    out_h: usize,
    out_w: usize,
) -> Tensor3 {
    assert!(out_h >= 1 && out_w >= 1, "window output must be non-empty");
    let (top, left) = (center_y - win_h / 2.0, center_x - win_w / 2.0);
    let (sy, sx) = (win_h / out_h as f64, win_w / out_w as f64);
    bilinear_with(
        input,
        out_h,
        out_w,
        |i| top + (i as f64 + 0.5) * sy - 0.5,
        |j| left + (j as f64 + 0.5) * sx - 0.5,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, c: usize, h: usize, w: usize) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn relu_examples() {
        let t = Tensor3::from_vec(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&Tensor3::filled(2, 3, 3, -4.0)).data().iter().all(|&v| v == 0.0));
        let t = random(1, 3, 4, 5);
        let r = relu(&t);
        for (a, b) in t.data().iter().zip(r.data()) {
            assert_eq!(*b, if *a > 0.0 { *a } else { 0.0 });
        }
    }

    #[test]
    fn maxpool_examples() {
        let t = Tensor3::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2(&t).data(), &[4.0]);
        let c = maxpool2(&Tensor3::filled(2, 6, 4, 3.5));
        assert_eq!(c.shape(), (2, 3, 2));
        assert!(c.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn maxpool_matches_window_loop() {
        for (h, w) in [(6, 8), (5, 7), (1, 1), (3, 2)] {
            let t = random(h as u64 * 31 + w as u64, 2, h, w);
            let p = maxpool2(&t);
            assert_eq!(p.shape(), (2, h.div_ceil(2), w.div_ceil(2)));
            for c in 0..2 {
                for y in 0..p.height() {
                    for x in 0..p.width() {
                        let mut m = f32::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                // replicate padding: clamp to the last row/column
                                let yy = (2 * y + dy).min(h - 1);
                                let xx = (2 * x + dx).min(w - 1);
                                m = m.max(t.get(c, yy, xx));
                            }
                        }
                        assert_eq!(p.get(c, y, x), m);
                    }
                }
            }
        }
    }

    #[test]
    fn gap_examples() {
        assert_eq!(global_avg_pool(&Tensor3::filled(2, 3, 3, 1.25)), vec![1.25, 1.25]);
        let t = Tensor3::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&t), vec![2.5]);
        let t = random(4, 3, 5, 4);
        let g = global_avg_pool(&t);
        for c in 0..3 {
            let s: f64 = t.channel(c).iter().map(|&v| v as f64).sum();
            assert!((g[c] - s / 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let t = random(2, 3, 5, 7);
        assert_eq!(resize_bilinear(&t, 5, 7), t);
        let c = resize_bilinear(&Tensor3::filled(2, 4, 4, 0.3), 9, 3);
        assert!(c.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn upsampled_ramp_stays_linear() {
        // ramp value = x along columns; corner aligned resize from 4 to 7
        // columns samples positions j * 3 / 6 = j / 2.
        let ramp = Tensor3::from_fn(1, 2, 4, |_, _, x| x as f32);
        let up = resize_bilinear(&ramp, 3, 7);
        for y in 0..3 {
            for x in 0..7 {
                assert!((up.get(0, y, x) - x as f32 * 0.5).abs() < 1e-6);
            }
        }
        let up = upsample_corner(&ramp, 8);
        assert_eq!(up.shape(), (1, 9, 25));
        for x in 0..25 {
            assert!((up.get(0, 4, x) - x as f32 / 8.0).abs() < 1e-6);
        }
    }

    #[test]
    fn window_of_full_extent_is_identity() {
        let t = random(8, 2, 6, 5);
        let s = sample_window(&t, 3.0, 2.5, 6.0, 5.0, 6, 5);
        for (a, b) in t.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn window_zoom_on_ramp() {
        // A ramp sampled through a window half as wide is twice as shallow.
        let ramp = Tensor3::from_fn(1, 1, 9, |_, _, x| x as f32);
        let s = sample_window(&ramp, 0.5, 4.5, 1.0, 4.5, 1, 9);
        for x in 1..9 {
            let d = s.get(0, 0, x) - s.get(0, 0, x - 1);
            assert!((d - 0.5).abs() < 1e-6);
        }
        assert!((s.get(0, 0, 4) - 4.0).abs() < 1e-6);
    }
}
