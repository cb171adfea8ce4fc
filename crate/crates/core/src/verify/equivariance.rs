//! Empirical equivariance of a scale-pooling layer.
//!
//! The layer is run on `x` and on `T x`. The first output is transported
//! with the output action of `T`; at every tested location the winning
//! level of the second output is compared with the level encoded by the
//! transported angle, and the two magnitudes are compared.

use serde::{Deserialize, Serialize};

use super::transform::{apply_input_transform, apply_output_transform, ScaleTransform};
use crate::equivariant::{se_conv_scalar, ScaleSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Locations whose reference magnitude is below this fraction of the
/// maximum are not tested.
pub const RHO_THRESHOLD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    /// Share of tested locations whose winning level moved exactly as the
    /// transform predicts; `None` when only magnitudes are compared.
    pub fraction_argmax_shifted: Option<f64>,
    pub magnitude_rel_err_median: f64,
    pub n_locations_tested: usize,
}

/// First layer of a scale-pooling network. With `magnitudes_only` the angle
/// output is ignored, as in the invariant variant.
#[derive(Clone, Copy, Debug)]
pub struct ScalarLayer<'a> {
    pub weights: &'a Tensor<f64>,
    pub bias: &'a Tensor<f64>,
    pub magnitudes_only: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Tally {
    agree: usize,
    errors: Vec<f64>,
}

fn tally(layer: ScalarLayer<'_>, x: &Tensor<f64>, steps: i32, spec: &ScaleSpec, out: &mut Tally) -> Result<()> {
    let t = if steps == 0 {
        ScaleTransform::identity()
    } else {
        ScaleTransform::from_steps(steps as f64, spec)?
    };
    let base = se_conv_scalar(x, layer.weights, layer.bias, spec)?;
    let moved = se_conv_scalar(&apply_input_transform(x, t)?, layer.weights, layer.bias, spec)?;
    let transported = apply_output_transform(&base.field, t, spec)?;

    let reference = transported.rho();
    let observed = moved.field.rho();
    let theta = transported.theta_degrees();
    let (c, h, w) = base.field.chw();
    let border = layer.weights.shape()[2];
    let cutoff = RHO_THRESHOLD * reference.max_abs();
    let step = spec.angle_step();
    let last = spec.n_scales as i64 - 1;

    for ch in 0..c {
        for r in border..h.saturating_sub(border) {
            for col in border..w.saturating_sub(border) {
                let j = (ch * h + r) * w + col;
                let rho_ref = reference.data()[j];
                if rho_ref.is_nan() || rho_ref <= cutoff {
                    continue;
                }
                if !layer.magnitudes_only {
                    let predicted = (theta.data()[j] / step).round() as i64;
                    let origin = predicted + steps as i64;
                    // levels at the ends of the pyramid may be clipped optima
                    if origin <= 0 || origin >= last || predicted < 0 || predicted > last {
                        continue;
                    }
                    out.agree += (moved.argmax[j] as i64 == predicted) as usize;
                }
                out.errors.push((observed.data()[j] - rho_ref).abs() / rho_ref);
            }
        }
    }
    Ok(())
}

/// Pools the comparison over several inputs and step counts.
pub fn check_equivariance_many(
    layer: ScalarLayer<'_>,
    inputs: &[Tensor<f64>],
    steps: &[i32],
    spec: &ScaleSpec,
) -> Result<EquivarianceReport> {
    spec.validate()?;
    let reach = spec.n_up.min(spec.n_down);
    if let Some(s) = steps.iter().find(|s| s.unsigned_abs() as usize > reach) {
        return Err(Error::config(format!(
            "steps {s} would clip the pyramid (n_up {}, n_down {})",
            spec.n_up, spec.n_down
        )));
    }
    let mut t = Tally {
        agree: 0,
        errors: Vec::new(),
    };
    for x in inputs {
        for &s in steps {
            tally(layer, x, s, spec, &mut t)?;
        }
    }
    if t.errors.is_empty() {
        return Err(Error::Input(
            "no location passed the magnitude and border filters".into(),
        ));
    }
    let n = t.errors.len();
    Ok(EquivarianceReport {
        fraction_argmax_shifted: (!layer.magnitudes_only).then(|| t.agree as f64 / n as f64),
        magnitude_rel_err_median: median(t.errors),
        n_locations_tested: n,
    })
}

pub fn check_equivariance(
    layer: ScalarLayer<'_>,
    x: &Tensor<f64>,
    steps: i32,
    spec: &ScaleSpec,
) -> Result<EquivarianceReport> {
    check_equivariance_many(layer, std::slice::from_ref(x), &[steps], spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
