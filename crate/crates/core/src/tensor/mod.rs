//! Dense rank-3 tensors and the kernels the tracker is built from.
//!
//! Layout is channel-major, then row, then column. Every operation is a pure
//! function of its inputs; reductions accumulate in `f64`.

mod conv;
mod ops;

pub use conv::{ConvKernel, conv2d_input_grad, conv2d_kernel_grad, conv2d_same, conv2d_valid, cross_correlate};
pub use ops::{global_avg_pool, maxpool2, relu, resize_bilinear, sample_window, upsample_corner};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "buffer of {} values cannot hold a {}x{}x{} tensor",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a tensor by evaluating `f(c, y, x)` at every position.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Tensor3 {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.shape() == other.shape()
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    /// Inner product over all entries.
    pub fn dot(&self, other: &Tensor3) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "dot of {} with {}",
                self.shape_str(),
                other.shape_str()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| v as f64 * v as f64).sum()
    }

    /// Sum of every value in channel `c`.
    pub fn channel_sum(&self, c: usize) -> f64 {
        self.channel(c).iter().map(|&v| v as f64).sum()
    }

    pub fn scale(&mut self, factor: f32) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor3 {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f32, other: &Tensor3) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "add of {} to {}",
                other.shape_str(),
                self.shape_str()
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += alpha * b);
        Ok(())
    }

    /// Copies the listed channels, in the given order, into a new tensor.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Tensor3> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.channels) {
            return Err(Error::Dimension(format!(
                "channel {} out of range for {}",
                bad,
                self.shape_str()
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.plane_len());
        for &c in indices {
            data.extend_from_slice(self.channel(c));
        }
        Tensor3::from_vec(indices.len(), self.height, self.width, data)
    }

    /// Stacks tensors of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Tensor3]) -> Result<Tensor3> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("no tensors to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(bad) = parts.iter().find(|t| t.height != h || t.width != w) {
            return Err(Error::Dimension(format!(
                "cannot stack {} with {}",
                first.shape_str(),
                bad.shape_str()
            )));
        }
        let channels = parts.iter().map(|t| t.channels).sum();
        let mut data = Vec::with_capacity(channels * h * w);
        for t in parts {
            data.extend_from_slice(&t.data);
        }
        Tensor3::from_vec(channels, h, w, data)
    }

    /// Integer window `[top, top+h) x [left, left+w)`; must lie inside the tensor.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor3> {
        if top + h > self.height || left + w > self.width || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "crop {}x{} at ({}, {}) outside {}",
                h,
                w,
                top,
                left,
                self.shape_str()
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for y in top..top + h {
                let start = self.index(c, y, left);
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Tensor3::from_vec(self.channels, h, w, data)
    }

    /// Zero border of `pad` cells on every side.
    pub fn pad_zero(&self, pad: usize) -> Tensor3 {
        let (h, w) = (self.height + 2 * pad, self.width + 2 * pad);
        let mut out = Tensor3::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = self.index(c, y, 0);
                let dst = out.index(c, y + pad, pad);
                out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
            }
        }
        out
    }

    /// Channel-wise mean, as a single-channel tensor.
    pub fn channel_mean(&self) -> Tensor3 {
        let n = self.plane_len();
        let mut acc = vec![0f64; n];
        for c in 0..self.channels {
            for (a, &v) in acc.iter_mut().zip(self.channel(c)) {
                *a += v as f64;
            }
        }
        let denom = self.channels.max(1) as f64;
        Tensor3 {
            channels: 1,
            height: self.height,
            width: self.width,
            data: acc.into_iter().map(|v| (v / denom) as f32).collect(),
        }
    }

    /// Position and value of the largest entry of channel 0. Ties go to the
    /// first position in row-major order.
    pub fn argmax(&self) -> (usize, usize, f32) {
        let plane = self.channel(0);
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width, plane[best])
    }
}
