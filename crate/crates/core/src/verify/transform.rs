//! Group actions of image rescaling on inputs and on vector-field outputs.

use serde::{Deserialize, Serialize};

use crate::equivariant::{ScaleSpec, VectorField};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A rescaling about the image center by `ratio` (> 1 enlarges).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleTransform {
    pub ratio: f64,
}

impl ScaleTransform {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::config(format!("scale ratio must be positive, got {ratio}")));
        }
        Ok(ScaleTransform { ratio })
    }

    pub fn identity() -> Self {
        ScaleTransform { ratio: 1.0 }
    }

    /// `steps` pyramid steps: ratio `factor^steps`.
    pub fn from_steps(steps: f64, spec: &ScaleSpec) -> Result<Self> {
        Self::new(spec.factor.powf(steps))
    }

    /// Log-scale parameter in pyramid units.
    pub fn steps(&self, spec: &ScaleSpec) -> f64 {
        self.ratio.ln() / spec.factor.ln()
    }

    pub fn compose(self, other: ScaleTransform) -> ScaleTransform {
        ScaleTransform {
            ratio: self.ratio * other.ratio,
        }
    }

    pub fn inverse(self) -> ScaleTransform {
        ScaleTransform {
            ratio: 1.0 / self.ratio,
        }
    }
}

/// Output pixel `(r, c)` samples source `((r + ½ − H/2)/ratio + H/2 − ½, …)`
/// bilinearly; samples outside the canvas read zero.
fn rescale_plane<T: Scalar>(plane: &[T], h: usize, w: usize, ratio: f64, out: &mut [T]) {
    let src = |i: usize, n: usize| (i as f64 + 0.5 - n as f64 / 2.0) / ratio + n as f64 / 2.0 - 0.5;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            plane[r as usize * w + c as usize].as_f64()
        }
    };
    for r in 0..h {
        let y = src(r, h);
        let (y0, ty) = (y.floor(), y - y.floor());
        for c in 0..w {
            let x = src(c, w);
            let (x0, tx) = (x.floor(), x - x.floor());
            let (y0, x0) = (y0 as isize, x0 as isize);
            let top = at(y0, x0) + tx * (at(y0, x0 + 1) - at(y0, x0));
            let bottom = at(y0 + 1, x0) + tx * (at(y0 + 1, x0 + 1) - at(y0 + 1, x0));
            out[r * w + c] = T::of(top + ty * (bottom - top));
        }
    }
}

/// Bilinear rescale of every channel about the center, zero background,
/// same canvas size. The identity transform returns the input unchanged.
pub fn apply_input_transform<T: Scalar>(x: &Tensor<T>, t: ScaleTransform) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if t.ratio == 1.0 {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(x.shape());
    let hw = h * w;
    for ch in 0..c {
        rescale_plane(
            &x.data()[ch * hw..(ch + 1) * hw],
            h,
            w,
            t.ratio,
            &mut out.data_mut()[ch * hw..(ch + 1) * hw],
        );
    }
    Ok(out)
}

/// Action on output fields: both Cartesian planes are rescaled spatially and
/// every vector is rotated by `−steps·Δθ`, since enlarging the input moves
/// the best-matching pyramid level towards smaller copies.
pub fn apply_output_transform<T: Scalar>(
    y: &VectorField<T>,
    t: ScaleTransform,
    spec: &ScaleSpec,
) -> Result<VectorField<T>> {
    if t.ratio == 1.0 {
        return Ok(y.clone());
    }
    let moved = VectorField {
        u: apply_input_transform(&y.u, t)?,
        v: apply_input_transform(&y.v, t)?,
    };
    Ok(moved.rotated(-t.steps(spec) * spec.angle_step()))
}
