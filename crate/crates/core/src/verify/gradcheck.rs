//! Central finite differences against reverse-mode gradients.

use std::sync::Arc;

use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::data::mnist_scale::{below, PCG_STREAM};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so coordinates whose gradient
/// is numerically zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinates compared (routing unchanged under ±step).
    pub n_stable: usize,
    /// Coordinates skipped because a max, argmax or ReLU decision flipped.
    pub n_flipped: usize,
    pub step: f64,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Value, decision signature, tape, parameter handles and output handle.
type Evaluation = (f64, u64, Tape<f64>, Vec<Var>, Var);

fn evaluate<F>(f: &F, params: &[Arc<Tensor<f64>>]) -> Result<Evaluation>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::tracking_decisions();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(Arc::clone(p))).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::Usage("grad_check needs a scalar function".into()));
    }
    let value = tape.value(loss).data()[0];
    let sig = tape.decision_signature().expect("tracking tape");
    Ok((value, sig, tape, vars, loss))
}

/// Checks `n_coords` stable coordinates drawn uniformly over all entries of
/// `params`. Flipped coordinates are redrawn until `n_coords` stable ones
/// are found or `4·n_coords` draws have been spent.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], n_coords: usize, step: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if params.is_empty() || step.is_nan() || step <= 0.0 {
        return Err(Error::config("grad_check needs parameters and a positive step"));
    }
    let base: Vec<Arc<Tensor<f64>>> = params.iter().map(|p| Arc::new(p.clone())).collect();
    let (_, sig0, tape, vars, loss) = evaluate(&f, &base)?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = Pcg32::new(seed, PCG_STREAM);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        n_stable: 0,
        n_flipped: 0,
        step,
        worst: None,
    };
    let mut draws = 0;
    while report.n_stable < n_coords && draws < 4 * n_coords {
        draws += 1;
        let mut flat = below(&mut rng, total as u32) as usize;
        let mut p = 0;
        while flat >= sizes[p] {
            flat -= sizes[p];
            p += 1;
        }
        let shifted = |delta: f64| -> Result<(f64, u64)> {
            let mut ps = base.clone();
            Arc::make_mut(&mut ps[p]).data_mut()[flat] += delta;
            let (v, s, ..) = evaluate(&f, &ps)?;
            Ok((v, s))
        };
        let (lp, sp) = shifted(step)?;
        let (lm, sm) = shifted(-step)?;
        if sp != sig0 || sm != sig0 {
            report.n_flipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * step);
        let analytic = grads.get(vars[p]).map_or(0.0, |g| g.data()[flat]);
        let err = relative_error(analytic, numeric);
        report.n_stable += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = err.max(report.max_rel_err);
            report.worst = Some((p, flat, analytic, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_agrees_to_machine_precision() {
        let w = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
        let b = Tensor::from_fn(&[3], |i| i as f64);
        let x = Tensor::from_fn(&[4], |i| 1.0 - i as f64 * 0.5);
        let report = grad_check(
            |tape, p| {
                let xv = tape.constant(x.clone());
                let y = tape.linear(xv, p[0], p[1])?;
                Ok(tape.sum(y))
            },
            &[w, b],
            15,
            1e-3,
            1,
        )
        .unwrap();
        assert_eq!(report.n_stable, 15);
        assert_eq!(report.n_flipped, 0);
        assert!(report.max_rel_err < 1e-9, "{report:?}");
    }

    #[test]
    fn relu_kink_is_reported_as_flipped() {
        // one input exactly on the kink: ±step always flips it
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        let report = grad_check(
            |tape, p| {
                let r = tape.relu(p[0]);
                Ok(tape.sum(r))
            },
            &[x],
            3,
            1e-4,
            0,
        )
        .unwrap();
        assert_eq!(report.n_stable, 0);
        assert_eq!(report.n_flipped, 12);
    }
}
