//! VGG-16 feature extractor up to `conv4_3`, driven by a TADTW1 weight file.
//!
//! Convolutions use a one-cell zero border; pooling is 2x2 at stride 2 with
//! replication padding on odd sizes, so the conv4 taps sit at stride 8 and
//! have `ceil(input / 8)` cells per side.

pub mod fixture;
pub mod weights;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_same, maxpool2, relu, ConvKernel, Tensor3};
use weights::StoredLayer;

/// Per-channel RGB means subtracted before the first convolution.
pub const PIXEL_MEANS: [f32; 3] = [123.68, 116.779, 103.939];

/// Cumulative downsampling at the conv4 taps.
pub const FEATURE_STRIDE: usize = 8;

/// Smallest patch side the three pooling stages accept.
pub const MIN_PATCH_SIDE: usize = 16;

pub const TAP_CONV4_1: &str = "conv4_1";
pub const TAP_CONV4_3: &str = "conv4_3";

/// `(name, in_channels, out_channels)` for every 3x3 convolution, in order.
pub const VGG16_CONVS: [(&str, usize, usize); 10] = [
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv4_1", 256, 512),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3 { in_channels: usize, out_channels: usize },
    Relu,
    MaxPool2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

/// The fixed VGG-16 prefix: every conv is followed by a ReLU, and each of
/// the first three blocks ends in a pool.
pub fn vgg16_layers() -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for (idx, &(name, in_channels, out_channels)) in VGG16_CONVS.iter().enumerate() {
        layers.push(LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv3x3 {
                in_channels,
                out_channels,
            },
        });
        layers.push(LayerSpec {
            name: format!("relu{}", &name[4..]),
            kind: LayerKind::Relu,
        });
        if matches!(idx, 1 | 3 | 6) {
            layers.push(LayerSpec {
                name: format!("pool{}", &name[4..5]),
                kind: LayerKind::MaxPool2,
            });
        }
    }
    layers
}

/// RGB pixels in `[0, 255]`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch(Tensor3);

impl ImagePatch {
    pub fn new(pixels: Tensor3) -> Result<Self> {
        if pixels.channels() != 3 {
            return Err(Error::Dimension(format!(
                "image patch must have 3 channels, got {}",
                pixels.shape_str()
            )));
        }
        Ok(ImagePatch(pixels))
    }

    pub fn pixels(&self) -> &Tensor3 {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    /// The per-channel mean image of the given size.
    pub fn mean_image(height: usize, width: usize) -> Self {
        ImagePatch(Tensor3::from_fn(3, height, width, |c, _, _| PIXEL_MEANS[c]))
    }
}

/// Post-ReLU activations at the two conv4 taps.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTaps {
    pub conv4_1: Tensor3,
    pub conv4_3: Tensor3,
}

impl FeatureTaps {
    pub fn get(&self, name: &str) -> Option<&Tensor3> {
        match name {
            TAP_CONV4_1 => Some(&self.conv4_1),
            TAP_CONV4_3 => Some(&self.conv4_3),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BackboneModel {
    layers: Vec<LayerSpec>,
    kernels: Vec<ConvKernel>,
}

impl BackboneModel {
    /// Validates `kernels` (one per conv, in network order) against the
    /// VGG-16 layer table.
    pub fn from_kernels(kernels: Vec<ConvKernel>) -> Result<Self> {
        let stored: Vec<StoredLayer> = VGG16_CONVS
            .iter()
            .zip(kernels)
            .map(|(&(name, _, _), kernel)| StoredLayer {
                name: name.to_string(),
                kernel,
            })
            .collect();
        Self::from_stored(stored)
    }

    fn from_stored(stored: Vec<StoredLayer>) -> Result<Self> {
        if stored.len() != VGG16_CONVS.len() {
            let names: Vec<_> = stored.iter().map(|l| l.name.as_str()).collect();
            return Err(Error::LayerOrder {
                expected: VGG16_CONVS.map(|c| c.0).join(","),
                found: names.join(","),
            });
        }
        let mut kernels = Vec::with_capacity(stored.len());
        for (layer, &(name, cin, cout)) in stored.into_iter().zip(VGG16_CONVS.iter()) {
            if layer.name != name {
                return Err(Error::LayerOrder {
                    expected: name.to_string(),
                    found: layer.name,
                });
            }
            let expected = [cout as u32, cin as u32, 3, 3];
            let found = layer.kernel.dims().map(|d| d as u32);
            if found != expected {
                return Err(Error::LayerShape {
                    layer: layer.name,
                    expected,
                    found,
                });
            }
            if !layer.kernel.is_finite() {
                return Err(Error::NonFinite(layer.name));
            }
            kernels.push(layer.kernel);
        }
        Ok(BackboneModel {
            layers: vgg16_layers(),
            kernels,
        })
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_stored(weights::read_file(path.as_ref())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        weights::encode(&self.stored_layers())
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        weights::write_file(path.as_ref(), &self.stored_layers())
    }

    fn stored_layers(&self) -> Vec<StoredLayer> {
        VGG16_CONVS
            .iter()
            .zip(&self.kernels)
            .map(|(&(name, _, _), k)| StoredLayer {
                name: name.to_string(),
                kernel: k.clone(),
            })
            .collect()
    }

    pub fn zeros() -> Self {
        let kernels = VGG16_CONVS
            .iter()
            .map(|&(_, cin, cout)| ConvKernel::zeros(cout, cin, 3, 3))
            .collect();
        Self::from_kernels(kernels).expect("zero kernels have VGG-16 shapes")
    }

    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`) with zero
    /// bias, drawn from a ChaCha8 stream seeded by `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = VGG16_CONVS
            .iter()
            .map(|&(_, cin, cout)| {
                let bound = (6.0 / (cin * 9) as f64).sqrt() as f32;
                let weights = (0..cout * cin * 9)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                ConvKernel::new(cout, cin, 3, 3, weights, vec![0.0; cout]).unwrap()
            })
            .collect();
        Self::from_kernels(kernels).expect("random kernels have VGG-16 shapes")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn kernel(&self, name: &str) -> Option<&ConvKernel> {
        VGG16_CONVS
            .iter()
            .position(|c| c.0 == name)
            .map(|i| &self.kernels[i])
    }

    /// Runs the network and returns the post-ReLU conv4_1 and conv4_3
    /// activations. Means are subtracted here, once.
    pub fn forward_taps(&self, patch: &ImagePatch) -> Result<FeatureTaps> {
        if patch.height() < MIN_PATCH_SIDE || patch.width() < MIN_PATCH_SIDE {
            return Err(Error::Dimension(format!(
                "patch {}x{} is smaller than the {}x{} minimum",
                patch.height(),
                patch.width(),
                MIN_PATCH_SIDE,
                MIN_PATCH_SIDE
            )));
        }
        let mut x = patch.pixels().clone();
        for (c, mean) in PIXEL_MEANS.iter().enumerate() {
            x.channel_mut(c).iter_mut().for_each(|v| *v -= mean);
        }
        let mut conv_idx = 0;
        let mut conv4_1 = None;
        for layer in &self.layers {
            x = match layer.kind {
                LayerKind::Conv3x3 { .. } => {
                    let y = conv2d_same(&x, &self.kernels[conv_idx])?;
                    conv_idx += 1;
                    y
                }
                LayerKind::Relu => {
                    let y = relu(&x);
                    if layer.name == "relu4_1" {
                        conv4_1 = Some(y.clone());
                    }
                    y
                }
                LayerKind::MaxPool2 => maxpool2(&x),
            };
        }
        let conv4_1 = conv4_1.expect("layer table contains relu4_1");
        Ok(FeatureTaps { conv4_1, conv4_3: x })
    }
}
