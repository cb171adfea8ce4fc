//! Scale-equivariant layers recorded on a [`Tape`].
//!
//! Every layer follows the same recipe: resample the input to each pyramid
//! level, apply the shared filters, rectify, resample the activation back to
//! the input size, then keep the per-location maximum over levels together
//! with the index of the level that produced it.

use crate::equivariant::field::vector_angle_degrees;
use crate::equivariant::ScaleSpec;
use crate::error::{Error, Result};
use crate::nn::pool::argmax_pool2x2;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Cartesian planes of a vector field living on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldVars {
    pub u: Var,
    pub v: Var,
}

/// Result of pooling over scales.
#[derive(Clone, Debug)]
pub struct ScalePooled {
    /// Per-location maximum over levels, `O×H×W`.
    pub rho: Var,
    /// Winning level per location (ties go to the smaller index).
    pub argmax: Vec<u8>,
}

/// Filters of a vector-field layer on the tape.
#[derive(Clone, Copy, Debug)]
pub struct BankVars {
    pub wu: Var,
    pub wv: Var,
    pub bias: Var,
}

/// Index of the first maximum across `stack` at every element.
pub fn first_argmax<T: Scalar>(stack: &[&Tensor<T>]) -> Vec<u8> {
    let n = stack[0].len();
    (0..n)
        .map(|j| {
            let mut best = 0usize;
            for (i, t) in stack.iter().enumerate().skip(1) {
                if t.data()[j] > stack[best].data()[j] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}

/// Runs `branch` at every pyramid level, brings the responses back to
/// `h × w` and pools over scales.
pub fn scale_pool<T: Scalar>(
    tape: &mut Tape<T>,
    spec: &ScaleSpec,
    h: usize,
    w: usize,
    mut branch: impl FnMut(&mut Tape<T>, usize, (usize, usize)) -> Result<Var>,
) -> Result<ScalePooled> {
    spec.validate()?;
    let mut aligned = Vec::with_capacity(spec.n_scales);
    for (i, size) in spec.level_sizes(h, w).into_iter().enumerate() {
        let response = branch(tape, i, size)?;
        aligned.push(tape.resize(response, h, w)?);
    }
    let argmax = {
        let stack: Vec<&Tensor<T>> = aligned.iter().map(|&v| tape.value(v)).collect();
        first_argmax(&stack)
    };
    let rho = tape.select(&aligned, argmax.clone())?;
    Ok(ScalePooled { rho, argmax })
}

/// Attaches codec angles to pooled magnitudes: `u = ρ·cos θ_i`,
/// `v = ρ·sin θ_i`. Angles are constants of the forward pass.
pub fn encode<T: Scalar>(tape: &mut Tape<T>, pooled: &ScalePooled, spec: &ScaleSpec) -> Result<FieldVars> {
    let shape = tape.value(pooled.rho).shape().to_vec();
    let trig: Vec<(T, T)> = (0..spec.n_scales)
        .map(|i| {
            let (s, c) = spec.angle_of_index(i).expect("index in range").to_radians().sin_cos();
            (T::of(c), T::of(s))
        })
        .collect();
    let cos = Tensor::new(
        shape.clone(),
        pooled.argmax.iter().map(|&i| trig[i as usize].0).collect(),
    )?;
    let sin = Tensor::new(
        shape,
        pooled.argmax.iter().map(|&i| trig[i as usize].1).collect(),
    )?;
    let u = tape.mul_const(pooled.rho, cos)?;
    let v = tape.mul_const(pooled.rho, sin)?;
    Ok(FieldVars { u, v })
}

fn same_padding(tape: &Tape<impl Scalar>, weights: Var) -> Result<usize> {
    match *tape.value(weights).shape() {
        [_, _, k, k2] if k == k2 && k % 2 == 1 => Ok(k / 2),
        ref s => Err(Error::config(format!(
            "expected O×C×k×k weights with odd k, got {s:?}"
        ))),
    }
}

/// Scale-pooled convolution of a scalar map: magnitudes and argmax only.
pub fn se_conv_scalar_pooled<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weights: Var,
    bias: Var,
    spec: &ScaleSpec,
) -> Result<ScalePooled> {
    let (_, h, w) = tape.value(x).chw()?;
    let pad = same_padding(tape, weights)?;
    scale_pool(tape, spec, h, w, |tape, _, (lh, lw)| {
        let xs = tape.resize(x, lh, lw)?;
        let c = tape.conv2d(xs, weights, Some(bias), pad)?;
        Ok(tape.relu(c))
    })
}

/// Scale-pooled convolution of a scalar map, returning a vector field.
pub fn se_conv_scalar<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weights: Var,
    bias: Var,
    spec: &ScaleSpec,
) -> Result<(FieldVars, ScalePooled)> {
    let pooled = se_conv_scalar_pooled(tape, x, weights, bias, spec)?;
    let field = encode(tape, &pooled, spec)?;
    Ok((field, pooled))
}

/// `conv(u, wu) + conv(v, wv) + bias`.
pub fn vec_conv<T: Scalar>(tape: &mut Tape<T>, field: FieldVars, bank: BankVars, pad: usize) -> Result<Var> {
    tape.value(bank.wu).expect_same_shape(tape.value(bank.wv))?;
    tape.conv(&[(field.u, bank.wu), (field.v, bank.wv)], Some(bank.bias), pad)
}

/// Rotates every vector of a tape field by `degrees`.
pub fn rotate<T: Scalar>(tape: &mut Tape<T>, field: FieldVars, degrees: f64) -> Result<FieldVars> {
    if degrees == 0.0 {
        return Ok(field);
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let cu = tape.scale(field.u, T::of(c));
    let sv = tape.scale(field.v, T::of(-s));
    let su = tape.scale(field.u, T::of(s));
    let cv = tape.scale(field.v, T::of(c));
    Ok(FieldVars {
        u: tape.add(cu, sv)?,
        v: tape.add(su, cv)?,
    })
}

/// Scale-pooled vector-field convolution. With `shift_angles`, the copy at
/// pyramid exponent `k` is rotated by `−k·Δθ` before filtering so that the
/// shared filter sees phases aligned to the identity scale.
pub fn se_conv_vector_pooled<T: Scalar>(
    tape: &mut Tape<T>,
    field: FieldVars,
    bank: BankVars,
    spec: &ScaleSpec,
    shift_angles: bool,
) -> Result<ScalePooled> {
    let (_, h, w) = tape.value(field.u).chw()?;
    let pad = same_padding(tape, bank.wu)?;
    let step = spec.angle_step();
    scale_pool(tape, spec, h, w, |tape, i, (lh, lw)| {
        let level = FieldVars {
            u: tape.resize(field.u, lh, lw)?,
            v: tape.resize(field.v, lh, lw)?,
        };
        let level = if shift_angles {
            rotate(tape, level, -(spec.exponent(i) as f64) * step)?
        } else {
            level
        };
        let c = vec_conv(tape, level, bank, pad)?;
        Ok(tape.relu(c))
    })
}

pub fn se_conv_vector<T: Scalar>(
    tape: &mut Tape<T>,
    field: FieldVars,
    bank: BankVars,
    spec: &ScaleSpec,
    shift_angles: bool,
) -> Result<(FieldVars, ScalePooled)> {
    let pooled = se_conv_vector_pooled(tape, field, bank, spec, shift_angles)?;
    let out = encode(tape, &pooled, spec)?;
    Ok((out, pooled))
}

fn magnitudes<T: Scalar>(tape: &Tape<T>, field: FieldVars) -> Tensor<T> {
    tape.value(field.u)
        .zip_map(tape.value(field.v), |a, b| a.hypot(b))
        .expect("planes share a shape")
}

/// 2×2 spatial pooling that keeps, per window, the vector with the largest
/// magnitude.
pub fn vec_maxpool2x2<T: Scalar>(tape: &mut Tape<T>, field: FieldVars) -> Result<FieldVars> {
    let rho = magnitudes(tape, field);
    let (c, h, w) = rho.chw()?;
    let index = argmax_pool2x2(&rho)?;
    let shape = [c, h.div_ceil(2), w.div_ceil(2)];
    Ok(FieldVars {
        u: tape.gather(field.u, index.clone(), &shape)?,
        v: tape.gather(field.v, index, &shape)?,
    })
}

/// Per-channel vector of largest magnitude over the whole map.
pub struct GlobalPooled<T> {
    /// Differentiable magnitudes, length `O`.
    pub rho: Var,
    /// Angles in degrees, constant in the backward pass.
    pub theta: Tensor<T>,
    /// Flat spatial index chosen per channel.
    pub location: Vec<usize>,
}

pub fn global_magnitude_pool<T: Scalar>(tape: &mut Tape<T>, field: FieldVars) -> Result<GlobalPooled<T>> {
    let rho = magnitudes(tape, field);
    let (c, h, w) = rho.chw()?;
    let hw = h * w;
    let mut location = Vec::with_capacity(c);
    let mut index = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = &rho.data()[ch * hw..(ch + 1) * hw];
        let mut best = 0;
        for (j, &r) in plane.iter().enumerate().skip(1) {
            if r > plane[best] {
                best = j;
            }
        }
        location.push(best);
        index.push((ch * hw + best) as u32);
    }
    let gu = tape.gather(field.u, index.clone(), &[c])?;
    let gv = tape.gather(field.v, index, &[c])?;
    let theta = tape
        .value(gu)
        .zip_map(tape.value(gv), vector_angle_degrees)?;
    let rho = tape.magnitude(gu, gv)?;
    Ok(GlobalPooled {
        rho,
        theta,
        location,
    })
}
