use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::equivariant::ScaleSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plain CNN.
    Standard,
    /// Scale-pooled convolutions keeping magnitudes only.
    Invariant,
    /// Scale-pooled convolutions with vector-field feature maps.
    Equivariant,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Standard, Variant::Invariant, Variant::Equivariant];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Invariant => "invariant",
            Variant::Equivariant => "equivariant",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "invariant" => Ok(Variant::Invariant),
            "equivariant" => Ok(Variant::Equivariant),
            other => Err(Error::Usage(format!(
                "unknown variant '{other}' (expected standard, invariant or equivariant)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Filters per convolutional layer.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub hidden: usize,
    pub classes: usize,
    pub input_side: usize,
    /// Pyramid settings; ignored by the standard variant.
    pub scale_spec: Option<ScaleSpec>,
    /// Phase-compensate pyramid copies of vector fields.
    pub shift_angles: bool,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        let (channels, scale_spec) = match variant {
            Variant::Standard => (vec![36, 96, 144], None),
            Variant::Invariant | Variant::Equivariant => {
                (vec![12, 32, 48], Some(ScaleSpec::default()))
            }
        };
        ModelConfig {
            variant,
            channels,
            kernel: 7,
            hidden: 256,
            classes: 10,
            input_side: 28,
            scale_spec,
            shift_angles: true,
        }
    }

    /// Checks the configuration; returns notes about settings that will be
    /// ignored.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut notes = Vec::new();
        if self.channels.len() != 3 {
            return Err(Error::config(format!(
                "expected three convolutional layers, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) || self.hidden == 0 || self.classes < 2 {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.input_side < 4 {
            return Err(Error::config("input side must be at least 4"));
        }
        match self.variant {
            Variant::Standard => {
                if self.scale_spec.is_some() {
                    notes.push("scale_spec is ignored by the standard variant".to_string());
                }
            }
            _ => match &self.scale_spec {
                Some(s) => s.validate()?,
                None => {
                    return Err(Error::config(format!(
                        "the {} variant needs a scale_spec",
                        self.variant
                    )))
                }
            },
        }
        Ok(notes)
    }

    pub fn spec(&self) -> ScaleSpec {
        self.scale_spec.unwrap_or_default()
    }

    /// Spatial side after the two 2×2 pools.
    pub fn final_side(&self) -> usize {
        self.input_side.div_ceil(2).div_ceil(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::Usage(format!("unknown precision '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Epochs (1-based) after which the learning rate is halved.
    pub halve_at: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the scale regression term.
    pub lambda: f64,
    pub seed: u64,
    pub precision: Precision,
    pub deterministic: bool,
    /// Gradient shards per batch; 0 picks one per worker thread (or a
    /// fixed count in deterministic mode).
    pub shards: usize,
    /// Use only the first `n` training records.
    pub limit_train: Option<usize>,
    pub limit_val: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch: 128,
            lr: 1e-3,
            halve_at: vec![40],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda: 1.0,
            seed: 0,
            precision: Precision::F32,
            deterministic: true,
            shards: 0,
            limit_train: None,
            limit_val: None,
        }
    }
}

/// Shard count used in deterministic mode regardless of thread count.
pub const DETERMINISTIC_SHARDS: usize = 4;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        Ok(())
    }

    pub fn shard_count(&self) -> usize {
        match (self.shards, self.deterministic) {
            (0, true) => DETERMINISTIC_SHARDS,
            (0, false) => rayon::current_num_threads().max(1),
            (n, _) => n,
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = self.halve_at.iter().filter(|&&e| epoch >= e).count();
        self.lr * 0.5f64.powi(halvings as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_architecture() {
        assert_eq!(ModelConfig::new(Variant::Standard).channels, vec![36, 96, 144]);
        assert_eq!(ModelConfig::new(Variant::Equivariant).channels, vec![12, 32, 48]);
        assert_eq!(ModelConfig::new(Variant::Invariant).final_side(), 7);
    }

    #[test]
    fn standard_flags_ignored_scale_spec() {
        let mut cfg = ModelConfig::new(Variant::Standard);
        assert!(cfg.validate().unwrap().is_empty());
        cfg.scale_spec = Some(ScaleSpec::default());
        let notes = cfg.validate().unwrap();
        assert_eq!(notes.len(), 1);
        assert!(notes[0].contains("ignored"));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ModelConfig::new(Variant::Equivariant);
        cfg.kernel = 6;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(Variant::Invariant);
        cfg.scale_spec = None;
        assert!(cfg.validate().is_err());
        assert!(matches!("resnet".parse::<Variant>(), Err(Error::Usage(_))));
        let t = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(t.validate().is_err());
        let t = TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn schedule_halves_at_epoch_forty() {
        let t = TrainConfig::default();
        assert_eq!(t.lr_at(0), 1e-3);
        assert_eq!(t.lr_at(39), 1e-3);
        assert_eq!(t.lr_at(40), 5e-4);
        assert_eq!(t.lr_at(59), 5e-4);
    }
}
