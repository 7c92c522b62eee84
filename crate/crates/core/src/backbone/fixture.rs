//! Parity fixtures from the weight exporter.
//!
//! A fixture directory holds `manifest.json`, one RGB image per fixture and
//! the reference post-ReLU activations at both taps as raw little-endian
//! `f32` tensors in channel-major order:
//!
//! ```json
//! {
//!   "pixel_means": [123.68, 116.779, 103.939],
//!   "weights_crc64": 12345,
//!   "layers": [{"name": "conv1_1", "dims": [64, 3, 3, 3]}],
//!   "fixtures": [{
//!     "id": "fixture0",
//!     "image": "fixture0.png",
//!     "activations": {
//!       "conv4_1": {"file": "fixture0.conv4_1.f32", "shape": [512, 8, 8], "crc64": 1},
//!       "conv4_3": {"file": "fixture0.conv4_3.f32", "shape": [512, 8, 8], "crc64": 2}
//!     }
//!   }]
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{weights::crc64, BackboneModel, FeatureTaps, ImagePatch, PIXEL_MEANS, TAP_CONV4_1, TAP_CONV4_3};
use crate::error::{Error, Result};
use crate::io::{load_frame, save_rgb, tensor_to_image};
use crate::tensor::Tensor3;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub dims: [u32; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationRef {
    pub file: String,
    pub shape: [usize; 3],
    /// CRC-64/XZ of the raw file bytes.
    pub crc64: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub id: String,
    pub image: String,
    pub activations: BTreeMap<String, ActivationRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub pixel_means: [f32; 3],
    pub weights_crc64: u64,
    pub layers: Vec<LayerEntry>,
    pub fixtures: Vec<FixtureEntry>,
}

impl ExportManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks the manifest against the engine's preprocessing and layer table.
    pub fn check_against(&self, model: &BackboneModel) -> Result<()> {
        if self.pixel_means != PIXEL_MEANS {
            return Err(Error::Invalid(format!(
                "fixture pixel means {:?} differ from engine means {PIXEL_MEANS:?}",
                self.pixel_means
            )));
        }
        let engine: Vec<LayerEntry> = layer_entries(model);
        if self.layers != engine {
            let names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
            return Err(Error::LayerOrder {
                expected: engine.iter().map(|l| l.name.as_str()).collect::<Vec<_>>().join(","),
                found: names.join(","),
            });
        }
        Ok(())
    }
}

fn layer_entries(model: &BackboneModel) -> Vec<LayerEntry> {
    model
        .layers()
        .iter()
        .filter_map(|l| {
            model.kernel(&l.name).map(|k| LayerEntry {
                name: l.name.clone(),
                dims: k.dims().map(|d| d as u32),
            })
        })
        .collect()
}

fn tensor_bytes(t: &Tensor3) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_activation(dir: &Path, r: &ActivationRef) -> Result<Tensor3> {
    let path = dir.join(&r.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let computed = crc64(&bytes);
    if computed != r.crc64 {
        return Err(Error::Checksum {
            stored: r.crc64,
            computed,
        });
    }
    if bytes.len() % 4 != 0 {
        return Err(Error::Truncated(r.file.clone()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let [c, h, w] = r.shape;
    Tensor3::from_vec(c, h, w, data)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParityResult {
    pub fixture: String,
    pub tap: String,
    pub max_abs: f64,
}

fn max_abs_diff(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!("activation {} vs reference {}", a.shape_str(), b.shape_str())));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max))
}

/// Runs every fixture image through `model` and reports the max-abs
/// deviation from the recorded activations, per fixture and tap.
pub fn check_parity(model: &BackboneModel, dir: &Path) -> Result<Vec<ParityResult>> {
    let manifest = ExportManifest::read(dir)?;
    manifest.check_against(model)?;
    let mut out = Vec::new();
    for fx in &manifest.fixtures {
        let patch = ImagePatch::new(load_frame(&dir.join(&fx.image))?)?;
        let taps = model.forward_taps(&patch)?;
        for (tap, r) in &fx.activations {
            let ours = taps
                .get(tap)
                .ok_or_else(|| Error::Invalid(format!("fixture {} names unknown tap {tap}", fx.id)))?;
            out.push(ParityResult {
                fixture: fx.id.clone(),
                tap: tap.clone(),
                max_abs: max_abs_diff(ours, &read_activation(dir, r)?)?,
            });
        }
    }
    Ok(out)
}

/// Records `model`'s own activations on `images` as a fixture set. Used to
/// pin regressions when no exporter output is at hand.
pub fn write_fixtures(model: &BackboneModel, dir: &Path, images: &[(String, Tensor3)]) -> Result<ExportManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut fixtures = Vec::new();
    for (id, pixels) in images {
        let img = tensor_to_image(pixels)?;
        let image = format!("{id}.png");
        save_rgb(&dir.join(&image), &img)?;
        // Activations come from the quantised image that was written.
        let patch = ImagePatch::new(crate::io::image_to_tensor(&img))?;
        let taps: FeatureTaps = model.forward_taps(&patch)?;
        let mut activations = BTreeMap::new();
        for tap in [TAP_CONV4_1, TAP_CONV4_3] {
            let t = taps.get(tap).expect("known tap");
            let bytes = tensor_bytes(t);
            let file = format!("{id}.{tap}.f32");
            let path = dir.join(&file);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            let (c, h, w) = t.shape();
            activations.insert(
                tap.to_string(),
                ActivationRef {
                    file,
                    shape: [c, h, w],
                    crc64: crc64(&bytes),
                },
            );
        }
        fixtures.push(FixtureEntry {
            id: id.clone(),
            image,
            activations,
        });
    }
    let manifest = ExportManifest {
        pixel_means: PIXEL_MEANS,
        weights_crc64: crc64(&model.to_bytes()),
        layers: layer_entries(model),
        fixtures,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
