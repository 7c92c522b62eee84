//! Tracker settings and their flat `key = value` text form.
//!
//! One setting per line; `#` starts a comment; list values are comma
//! separated. Keys are the [`TrackerConfig`] field names.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Which scores drive channel selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Uniformly random channels (needs a seed).
    Rand,
    /// Regression importance on both taps.
    Regress,
    /// Regression on conv4_3, regression plus ranking on conv4_1.
    RegressRank,
}

impl FromStr for AblationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rand" => Ok(AblationMode::Rand),
            "regress" => Ok(AblationMode::Regress),
            "regress_rank" => Ok(AblationMode::RegressRank),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected rand, regress or regress_rank)"
            ))),
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Rand => "rand",
            AblationMode::Regress => "regress",
            AblationMode::RegressRank => "regress_rank",
        })
    }
}

/// How gradient-pooled scores are ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    /// Largest signed score first.
    Signed,
    /// Largest magnitude first.
    Absolute,
}

impl FromStr for ImportanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(ImportanceMode::Signed),
            "absolute" => Ok(ImportanceMode::Absolute),
            other => Err(Error::Config(format!(
                "unknown importance mode {other:?} (expected signed or absolute)"
            ))),
        }
    }
}

impl fmt::Display for ImportanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImportanceMode::Signed => "signed",
            ImportanceMode::Absolute => "absolute",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackerConfig {
    /// Channels kept from conv4_3.
    pub k_conv43: usize,
    /// Channels kept from conv4_1.
    pub k_conv41: usize,
    /// Search region side as a multiple of the target side.
    pub search_factor: f64,
    pub scale_factors: [f64; 3],
    /// Multipliers applied to each scale's response peak.
    pub scale_penalties: [f64; 3],
    /// Bounds on the template side, in feature cells.
    pub template_feat_min: usize,
    pub template_feat_max: usize,
    pub lambda: f64,
    /// Ridge step size before division by the number of feature cells.
    pub ridge_lr: f64,
    /// Ranking step size before division by the number of feature cells.
    pub rank_lr: f64,
    pub max_iters: usize,
    pub loss_threshold: f64,
    pub sigma_factor: f64,
    pub sigma_floor: f64,
    pub rank_scales: Vec<f64>,
    pub importance_mode: ImportanceMode,
    pub mode: AblationMode,
    pub seed: Option<u64>,
    /// Bilinear upsampling of the response map before the argmax.
    pub response_upsample: usize,
    /// Subtract each template channel's spatial mean before correlation.
    pub center_template: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            k_conv43: 250,
            k_conv41: 80,
            search_factor: 3.0,
            scale_factors: [45.0 / 47.0, 1.0, 45.0 / 43.0],
            scale_penalties: [0.990, 1.0, 1.005],
            template_feat_min: 4,
            template_feat_max: 16,
            lambda: 1e-4,
            ridge_lr: 5e-7,
            rank_lr: 5e-7,
            max_iters: 50,
            loss_threshold: 0.02,
            sigma_factor: 0.1,
            sigma_floor: 0.5,
            rank_scales: vec![0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3],
            importance_mode: ImportanceMode::Signed,
            mode: AblationMode::RegressRank,
            seed: None,
            response_upsample: 8,
            center_template: true,
        }
    }
}

pub const CONFIG_KEYS: [&str; 21] = [
    "k_conv43",
    "k_conv41",
    "search_factor",
    "scale_factors",
    "scale_penalties",
    "template_feat_min",
    "template_feat_max",
    "lambda",
    "ridge_lr",
    "rank_lr",
    "max_iters",
    "loss_threshold",
    "sigma_factor",
    "sigma_floor",
    "rank_scales",
    "importance_mode",
    "mode",
    "seed",
    "response_upsample",
    "center_template",
    "template_feat_bounds",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let v = parse_list(key, value)?;
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Config(format!("{key}: expected 3 values, got {}", v.len())))
}

impl TrackerConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "k_conv43" => self.k_conv43 = parse(key, value)?,
            "k_conv41" => self.k_conv41 = parse(key, value)?,
            "search_factor" => self.search_factor = parse(key, value)?,
            "scale_factors" => self.scale_factors = parse_triple(key, value)?,
            "scale_penalties" => self.scale_penalties = parse_triple(key, value)?,
            "template_feat_min" => self.template_feat_min = parse(key, value)?,
            "template_feat_max" => self.template_feat_max = parse(key, value)?,
            "template_feat_bounds" => {
                let v = parse_list(key, value)?;
                if v.len() != 2 {
                    return Err(Error::Config(format!("{key}: expected min,max")));
                }
                self.template_feat_min = v[0] as usize;
                self.template_feat_max = v[1] as usize;
            }
            "lambda" => self.lambda = parse(key, value)?,
            "ridge_lr" => self.ridge_lr = parse(key, value)?,
            "rank_lr" => self.rank_lr = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "loss_threshold" => self.loss_threshold = parse(key, value)?,
            "sigma_factor" => self.sigma_factor = parse(key, value)?,
            "sigma_floor" => self.sigma_floor = parse(key, value)?,
            "rank_scales" => self.rank_scales = parse_list(key, value)?,
            "importance_mode" => self.importance_mode = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "seed" => self.seed = Some(parse(key, value)?),
            "response_upsample" => self.response_upsample = parse(key, value)?,
            "center_template" => self.center_template = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (line, (key, value)) in parse_kv(text, origin)? {
            self.set(&key, &value).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k_conv43 == 0 || self.k_conv41 == 0 {
            return fail("k_conv43 and k_conv41 must be >= 1".into());
        }
        if !(self.search_factor >= 1.0) {
            return fail(format!("search_factor must be >= 1, got {}", self.search_factor));
        }
        let s = self.scale_factors;
        if !(s[0] > 0.0 && s[0] < s[1] && s[1] < s[2]) {
            return fail(format!("scale_factors must be positive and strictly increasing, got {s:?}"));
        }
        if self.scale_penalties.iter().any(|p| !(*p > 0.0)) {
            return fail(format!("scale_penalties must be positive, got {:?}", self.scale_penalties));
        }
        if self.template_feat_min == 0 || self.template_feat_min > self.template_feat_max {
            return fail(format!(
                "template bounds {}..{} are invalid",
                self.template_feat_min, self.template_feat_max
            ));
        }
        if !(self.lambda >= 0.0) || !(self.ridge_lr > 0.0) || !(self.rank_lr > 0.0) {
            return fail("lambda must be >= 0 and learning rates > 0".into());
        }
        if self.max_iters == 0 {
            return fail("max_iters must be >= 1".into());
        }
        if !(self.sigma_factor > 0.0) || !(self.sigma_floor > 0.0) {
            return fail("sigma_factor and sigma_floor must be positive".into());
        }
        if self.rank_scales.iter().any(|s| !(*s > 0.0)) {
            return fail("rank_scales must be positive".into());
        }
        if self.response_upsample == 0 {
            return fail("response_upsample must be >= 1".into());
        }
        if self.mode == AblationMode::Rand && self.seed.is_none() {
            return fail("mode rand requires a seed".into());
        }
        Ok(())
    }

    /// Text form that [`TrackerConfig::apply_text`] reads back to the same value.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("k_conv43", self.k_conv43.to_string());
        line("k_conv41", self.k_conv41.to_string());
        line("search_factor", format!("{:?}", self.search_factor));
        line("scale_factors", list(&self.scale_factors));
        line("scale_penalties", list(&self.scale_penalties));
        line("template_feat_min", self.template_feat_min.to_string());
        line("template_feat_max", self.template_feat_max.to_string());
        line("lambda", format!("{:?}", self.lambda));
        line("ridge_lr", format!("{:?}", self.ridge_lr));
        line("rank_lr", format!("{:?}", self.rank_lr));
        line("max_iters", self.max_iters.to_string());
        line("loss_threshold", format!("{:?}", self.loss_threshold));
        line("sigma_factor", format!("{:?}", self.sigma_factor));
        line("sigma_floor", format!("{:?}", self.sigma_floor));
        line("rank_scales", list(&self.rank_scales));
        line("importance_mode", self.importance_mode.to_string());
        line("mode", self.mode.to_string());
        if let Some(seed) = self.seed {
            line("seed", seed.to_string());
        }
        line("response_upsample", self.response_upsample.to_string());
        line("center_template", self.center_template.to_string());
        out
    }
}

/// Splits `key = value` text into `(line_number, (key, value))` entries.
pub fn parse_kv(text: &str, origin: &Path) -> Result<Vec<(usize, (String, String))>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        out.push((idx + 1, (k.trim().to_string(), v.trim().to_string())));
    }
    Ok(out)
}
