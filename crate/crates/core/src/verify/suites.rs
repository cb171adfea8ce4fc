//! Self-contained check suites shared by the CLI and the acceptance tests.

use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use super::equivariance::{check_equivariance_many, EquivarianceReport, ScalarLayer};
use super::gradcheck::{grad_check, GradCheckReport};
use super::oracle::{brute_conv_oracle, brute_vec_conv_oracle};
use crate::data::mnist_scale::{below, unit_f64, PCG_STREAM};
use crate::data::{SampleRecord, SIDE};
use crate::equivariant::{vec_conv, ScaleSpec, VectorField, VectorFilterBank};
use crate::error::Result;
use crate::model::network::image_tensor;
use crate::model::{ModelConfig, Network, Variant};
use crate::nn::conv::conv2d;
use crate::tensor::Tensor;

pub const ORACLE_TOLERANCE: f64 = 1e-12;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_MIN_STABLE: usize = 500;
pub const GRAD_STEP: f64 = 1e-5;
pub const MIN_ARGMAX_AGREEMENT: f64 = 0.8;
pub const MAX_MEDIAN_RHO_ERR: f64 = 0.15;

fn uniform(rng: &mut Pcg32, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| 2.0 * unit_f64(rng) - 1.0)
}

fn pick(rng: &mut Pcg32, lo: usize, hi: usize) -> usize {
    lo + below(rng, (hi - lo + 1) as u32) as usize
}

/// `max |a − b| / max |b|`, with `0/0 = 0`.
pub fn normwise_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.max_abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub cases: usize,
    pub conv2d_max_rel_err: f64,
    pub vec_conv_max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random shapes with every extent at most 9.
pub fn oracle_suite(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = Pcg32::new(seed, PCG_STREAM);
    let (mut conv_err, mut vec_err) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let c = pick(&mut rng, 1, 4);
        let o = pick(&mut rng, 1, 4);
        let h = pick(&mut rng, 1, 9);
        let w = pick(&mut rng, 1, 9);
        let k = 2 * pick(&mut rng, 0, 4) + 1;
        let min_pad = k.saturating_sub(h.min(w)).div_ceil(2);
        let pad = pick(&mut rng, min_pad, (k / 2).max(min_pad));
        let x = uniform(&mut rng, &[c, h, w]);
        let wt = uniform(&mut rng, &[o, c, k, k]);
        let b = uniform(&mut rng, &[o]);
        let fast = conv2d(&x, &wt, Some(&b), pad)?;
        conv_err = conv_err.max(normwise_rel_err(&fast, &brute_conv_oracle(&x, &wt, Some(&b), pad)?));

        let field = VectorField::new(x, uniform(&mut rng, &[c, h, w]))?;
        let bank = VectorFilterBank::new(wt, uniform(&mut rng, &[o, c, k, k]), b)?;
        let fast = vec_conv(&field, &bank, pad)?;
        vec_err = vec_err.max(normwise_rel_err(&fast, &brute_vec_conv_oracle(&field, &bank, pad)?));
    }
    Ok(OracleReport {
        cases,
        conv2d_max_rel_err: conv_err,
        vec_conv_max_rel_err: vec_err,
        tolerance: ORACLE_TOLERANCE,
        passed: conv_err <= ORACLE_TOLERANCE && vec_err <= ORACLE_TOLERANCE,
    })
}

/// A smooth stroke pattern: an elliptic ring plus a bar, randomly placed
/// and sized, values in `[0, 1]`.
pub fn synthetic_digit(rng: &mut Pcg32) -> Vec<f32> {
    let c = SIDE as f64 / 2.0;
    let cy = c + 3.0 * (unit_f64(rng) - 0.5);
    let cx = c + 3.0 * (unit_f64(rng) - 0.5);
    let ry = 3.0 + 6.0 * unit_f64(rng);
    let rx = 2.5 + 4.0 * unit_f64(rng);
    let tilt = unit_f64(rng) - 0.5;
    let width = 1.0 + unit_f64(rng);
    (0..SIDE * SIDE)
        .map(|i| {
            let (y, x) = ((i / SIDE) as f64 + 0.5 - cy, (i % SIDE) as f64 + 0.5 - cx);
            let ring = ((y / ry).hypot(x / rx) - 1.0).abs() * ry.min(rx);
            let bar = (x - tilt * y - rx).abs() + (y.abs() - ry).max(0.0);
            let d = ring.min(bar);
            (-(d * d) / (2.0 * width * width)).exp() as f32
        })
        .collect()
}

pub fn synthetic_records(n: usize, seed: u64) -> Vec<SampleRecord> {
    let mut rng = Pcg32::new(seed, PCG_STREAM);
    (0..n)
        .map(|i| SampleRecord {
            image: synthetic_digit(&mut rng),
            label: (i % 10) as u8,
            scale: (0.3 + 0.7 * unit_f64(&mut rng)) as f32,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    #[serde(flatten)]
    pub check: GradCheckReport,
    pub batch: usize,
    pub tolerance: f64,
    pub min_stable: usize,
    pub passed: bool,
}

/// Finite differences through the whole equivariant network and the joint
/// loss, averaged over a batch.
pub fn grad_suite(records: &[SampleRecord], n_coords: usize, seed: u64) -> Result<GradSuiteReport> {
    grad_suite_for(Variant::Equivariant, records, n_coords, seed)
}

pub fn grad_suite_for(variant: Variant, records: &[SampleRecord], n_coords: usize, seed: u64) -> Result<GradSuiteReport> {
    let net = Network::<f64>::new(ModelConfig::new(variant), seed)?;
    let mut params: Vec<Tensor<f64>> = net.params.iter().map(|p| (*p.value).clone()).collect();
    if variant == Variant::Equivariant {
        // a nonzero angle head so its gradient path is exercised too
        let mut rng = Pcg32::new(seed ^ 0x5eed, PCG_STREAM);
        let head = net.params.iter().position(|p| p.name == "scale.w").expect("angle head");
        let shape = params[head].shape().to_vec();
        params[head] = Tensor::from_fn(&shape, |_| 0.002 * (2.0 * unit_f64(&mut rng) - 1.0));
    }
    let images: Vec<Tensor<f64>> = records
        .iter()
        .map(|r| image_tensor(&r.image, SIDE))
        .collect::<Result<_>>()?;
    let n = records.len() as f64;
    let check = grad_check(
        |tape, vars| {
            let mut total = None;
            for (r, img) in records.iter().zip(&images) {
                let x = tape.constant(img.clone());
                let out = net.forward_with(tape, vars.to_vec(), x)?;
                let ce = tape.softmax_cross_entropy(out.logits, r.label as usize)?;
                let se = tape.squared_error(out.scale, r.scale as f64)?;
                let l = tape.add(ce, se)?;
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l)?,
                });
            }
            Ok(tape.scale(total.expect("non-empty batch"), 1.0 / n))
        },
        &params,
        n_coords,
        GRAD_STEP,
        seed,
    )?;
    let passed = check.n_stable >= n_coords.min(GRAD_MIN_STABLE) && check.max_rel_err < GRAD_TOLERANCE;
    Ok(GradSuiteReport {
        check,
        batch: records.len(),
        tolerance: GRAD_TOLERANCE,
        min_stable: GRAD_MIN_STABLE,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceSuiteReport {
    #[serde(flatten)]
    pub report: EquivarianceReport,
    pub steps: Vec<i32>,
    pub n_inputs: usize,
    pub passed: bool,
}

/// Layer 1 of `trained`, or of a freshly initialised equivariant network
/// when none is given, on `images`.
pub fn equivariance_suite(
    images: &[Vec<f32>],
    steps: &[i32],
    spec: &ScaleSpec,
    seed: u64,
    trained: Option<&Network<f64>>,
) -> Result<EquivarianceSuiteReport> {
    let fresh;
    let net = match trained {
        Some(n) => n,
        None => {
            let mut cfg = ModelConfig::new(Variant::Equivariant);
            cfg.scale_spec = Some(*spec);
            fresh = Network::<f64>::new(cfg, seed)?;
            &fresh
        }
    };
    let spec = &net.config.scale_spec.unwrap_or(*spec);
    let weights = net.param("conv1.w").expect("layer 1").value.as_ref().clone();
    let bias = net.param("conv1.b").expect("layer 1").value.as_ref().clone();
    let inputs: Vec<Tensor<f64>> = images
        .iter()
        .map(|im| image_tensor(im, SIDE))
        .collect::<Result<_>>()?;
    let layer = ScalarLayer {
        weights: &weights,
        bias: &bias,
        magnitudes_only: false,
    };
    let report = check_equivariance_many(layer, &inputs, steps, spec)?;
    let passed = report.fraction_argmax_shifted.unwrap_or(0.0) >= MIN_ARGMAX_AGREEMENT
        && report.magnitude_rel_err_median <= MAX_MEDIAN_RHO_ERR;
    Ok(EquivarianceSuiteReport {
        report,
        steps: steps.to_vec(),
        n_inputs: images.len(),
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_suite_passes_on_a_few_cases() {
        let r = oracle_suite(20, 3).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn synthetic_digits_are_bounded() {
        let recs = synthetic_records(5, 1);
        for r in &recs {
            assert!(r.image.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert!(r.image.iter().any(|&p| p > 0.5));
        }
    }
}
