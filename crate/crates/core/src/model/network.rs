//! The three network variants.
//!
//! * standard: conv→ReLU→pool, conv→ReLU→pool, conv→ReLU, flatten, FC→ReLU,
//!   then a class head and a scale head on the hidden layer.
//! * invariant: the same stack with scale-pooled convolutions whose angle
//!   output is dropped after every layer.
//! * equivariant: scale-pooled convolutions passing vector fields between
//!   layers, global magnitude pooling, a class head fed by magnitudes only
//!   and a scale head that is a single affine map of the pooled angles.

use std::sync::Arc;

use rand_pcg::Pcg32;

use super::config::{ModelConfig, Variant};
use crate::data::mnist_scale::{unit_f64, PCG_STREAM};
use crate::equivariant::graph::{self, BankVars, FieldVars};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub params: Vec<Param<T>>,
}

/// Handles of one forward pass.
pub struct Forward<T> {
    pub params: Vec<Var>,
    pub logits: Var,
    pub scale: Var,
    /// Pooled angles fed to the equivariant scale head.
    pub angles: Option<Tensor<T>>,
}

/// Parameter shapes and fan-in, in registration order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let k = cfg.kernel;
    let kk = k * k;
    let [c1, c2, c3] = [cfg.channels[0], cfg.channels[1], cfg.channels[2]];
    let flat = c3 * cfg.final_side() * cfg.final_side();
    let mut out: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, fan_in: usize| out.push((name.to_string(), shape, fan_in));
    match cfg.variant {
        Variant::Standard | Variant::Invariant => {
            push("conv1.w", vec![c1, 1, k, k], kk);
            push("conv1.b", vec![c1], kk);
            push("conv2.w", vec![c2, c1, k, k], c1 * kk);
            push("conv2.b", vec![c2], c1 * kk);
            push("conv3.w", vec![c3, c2, k, k], c2 * kk);
            push("conv3.b", vec![c3], c2 * kk);
            push("fc.w", vec![cfg.hidden, flat], flat);
            push("fc.b", vec![cfg.hidden], flat);
            push("cls.w", vec![cfg.classes, cfg.hidden], cfg.hidden);
            push("cls.b", vec![cfg.classes], cfg.hidden);
            push("scale.w", vec![1, cfg.hidden], cfg.hidden);
            push("scale.b", vec![1], cfg.hidden);
        }
        Variant::Equivariant => {
            push("conv1.w", vec![c1, 1, k, k], kk);
            push("conv1.b", vec![c1], kk);
            push("conv2.wu", vec![c2, c1, k, k], 2 * c1 * kk);
            push("conv2.wv", vec![c2, c1, k, k], 2 * c1 * kk);
            push("conv2.b", vec![c2], 2 * c1 * kk);
            push("conv3.wu", vec![c3, c2, k, k], 2 * c2 * kk);
            push("conv3.wv", vec![c3, c2, k, k], 2 * c2 * kk);
            push("conv3.b", vec![c3], 2 * c2 * kk);
            push("fc.w", vec![cfg.hidden, c3], c3);
            push("fc.b", vec![cfg.hidden], c3);
            push("cls.w", vec![cfg.classes, cfg.hidden], cfg.hidden);
            push("cls.b", vec![cfg.classes], cfg.hidden);
            push("scale.w", vec![1, c3], c3);
            push("scale.b", vec![1], c3);
        }
    }
    out
}

impl<T: Scalar> Network<T> {
    /// Builds a network with hidden weights drawn uniformly from
    /// `±sqrt(6 / fan_in)`, output heads from `±1 / sqrt(fan_in)` and zero
    /// biases. The equivariant angle head
    /// starts at zero: its inputs are angles in degrees, tens of times larger
    /// than unit-scale activations.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Pcg32::new(seed, PCG_STREAM);
        let params = layout(&config)
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let is_bias = name.ends_with(".b");
                let zero = is_bias || (config.variant == Variant::Equivariant && name == "scale.w");
                let head = name.starts_with("cls.") || name.starts_with("scale.");
                let bound = if head { 1.0 / (fan_in as f64).sqrt() } else { (6.0 / fan_in as f64).sqrt() };
                let value = if zero {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::from_fn(&shape, |_| T::of(bound * (2.0 * unit_f64(&mut rng) - 1.0)))
                };
                Param {
                    name,
                    value: Arc::new(value),
                }
            })
            .collect();
        Ok(Network { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::config(format!(
                "{} variant needs {} parameters, got {}",
                config.variant,
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in expected.iter().zip(&params) {
            if name != &p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::config(format!(
                    "parameter mismatch: expected {name} {shape:?}, got {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Network { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                })
                .collect(),
        }
    }

    /// Records one sample's forward pass. `image` is `1×H×W`.
    pub fn forward(&self, tape: &mut Tape<T>, image: Var) -> Result<Forward<T>> {
        let p: Vec<Var> = self.params.iter().map(|p| tape.param(Arc::clone(&p.value))).collect();
        self.forward_with(tape, p, image)
    }

    /// Like [`Network::forward`] with parameters already on the tape, in
    /// registration order. Lets several samples share one set of leaves.
    pub fn forward_with(&self, tape: &mut Tape<T>, p: Vec<Var>, image: Var) -> Result<Forward<T>> {
        if p.len() != self.params.len() {
            return Err(Error::config(format!(
                "expected {} parameter handles, got {}",
                self.params.len(),
                p.len()
            )));
        }
        let pad = self.config.kernel / 2;
        match self.config.variant {
            Variant::Standard => {
                let mut x = image;
                for layer in 0..3 {
                    let c = tape.conv2d(x, p[2 * layer], Some(p[2 * layer + 1]), pad)?;
                    x = tape.relu(c);
                    if layer < 2 {
                        x = tape.maxpool2x2(x)?;
                    }
                }
                self.dense_heads(tape, p, x)
            }
            Variant::Invariant => {
                let spec = self.config.spec();
                let mut x = image;
                for layer in 0..3 {
                    let pooled = graph::se_conv_scalar_pooled(tape, x, p[2 * layer], p[2 * layer + 1], &spec)?;
                    x = pooled.rho;
                    if layer < 2 {
                        x = tape.maxpool2x2(x)?;
                    }
                }
                self.dense_heads(tape, p, x)
            }
            Variant::Equivariant => {
                let spec = self.config.spec();
                let shift = self.config.shift_angles;
                let (field, _) = graph::se_conv_scalar(tape, image, p[0], p[1], &spec)?;
                let field = graph::vec_maxpool2x2(tape, field)?;
                let bank2 = BankVars {
                    wu: p[2],
                    wv: p[3],
                    bias: p[4],
                };
                let (field, _) = graph::se_conv_vector(tape, field, bank2, &spec, shift)?;
                let field: FieldVars = graph::vec_maxpool2x2(tape, field)?;
                let bank3 = BankVars {
                    wu: p[5],
                    wv: p[6],
                    bias: p[7],
                };
                let (field, _) = graph::se_conv_vector(tape, field, bank3, &spec, shift)?;
                let pooled = graph::global_magnitude_pool(tape, field)?;
                let fc = tape.linear(pooled.rho, p[8], p[9])?;
                let hidden = tape.relu(fc);
                let logits = tape.linear(hidden, p[10], p[11])?;
                let angles = tape.constant(pooled.theta.clone());
                let scale = tape.linear(angles, p[12], p[13])?;
                Ok(Forward {
                    params: p,
                    logits,
                    scale,
                    angles: Some(pooled.theta),
                })
            }
        }
    }

    fn dense_heads(&self, tape: &mut Tape<T>, p: Vec<Var>, features: Var) -> Result<Forward<T>> {
        let fc = tape.linear(features, p[6], p[7])?;
        let hidden = tape.relu(fc);
        let logits = tape.linear(hidden, p[8], p[9])?;
        let scale = tape.linear(hidden, p[10], p[11])?;
        Ok(Forward {
            params: p,
            logits,
            scale,
            angles: None,
        })
    }

    /// Class logits and predicted scale for one 28×28 image.
    pub fn predict(&self, image: &[f32]) -> Result<(Vec<T>, T)> {
        let side = self.config.input_side;
        let mut tape = Tape::new();
        let x = tape.constant(image_tensor(image, side)?);
        let out = self.forward(&mut tape, x)?;
        Ok((tape.value(out.logits).data().to_vec(), tape.value(out.scale).data()[0]))
    }
}

pub fn image_tensor<T: Scalar>(image: &[f32], side: usize) -> Result<Tensor<T>> {
    Tensor::new(vec![1, side, side], image.iter().map(|&p| T::of(p as f64)).collect())
}

/// Index of the largest logit, ties to the smallest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivariant_parameter_counts() {
        let net = Network::<f32>::new(ModelConfig::new(Variant::Equivariant), 1).unwrap();
        let count = |prefix: &str| -> usize {
            net.params
                .iter()
                .filter(|p| p.name.starts_with(prefix))
                .map(|p| p.value.len())
                .sum()
        };
        assert_eq!(count("conv1."), 12 * 7 * 7 + 12);
        assert_eq!(count("conv2."), 2 * (32 * 12 * 7 * 7) + 32);
        assert_eq!(count("scale."), 48 + 1);
    }

    #[test]
    fn every_variant_runs_forward() {
        for v in Variant::ALL {
            let net = Network::<f32>::new(ModelConfig::new(v), 3).unwrap();
            let img: Vec<f32> = (0..784).map(|i| ((i * 13) % 255) as f32 / 255.0).collect();
            let (logits, scale) = net.predict(&img).unwrap();
            assert_eq!(logits.len(), 10, "{v}");
            assert!(scale.is_finite());
        }
    }

    #[test]
    fn from_params_rejects_wrong_layout() {
        let net = Network::<f32>::new(ModelConfig::new(Variant::Invariant), 0).unwrap();
        let mut params = net.params.clone();
        params.swap(0, 2);
        assert!(Network::from_params(net.config.clone(), params).is_err());
        assert!(Network::from_params(ModelConfig::new(Variant::Standard), net.params).is_err());
    }
}
