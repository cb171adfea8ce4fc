//! Scale-equivariant convolution with vector-field feature maps.
//!
//! Each filter is applied to a bilinear pyramid of the input. The per-pixel
//! maximum over levels becomes the vector magnitude and the index of the
//! winning level becomes its angle, so rescaling the input rotates the
//! output vectors while (approximately) preserving their length.
//!
//! The functions here evaluate eagerly on plain tensors. [`graph`] holds the
//! same layers recorded on a [`Tape`](crate::tape::Tape) for training.

pub mod field;
pub mod graph;
mod scale_spec;

pub use field::{VectorField, VectorFilterBank};
pub use scale_spec::ScaleSpec;

use crate::error::Result;
use crate::nn::resize::bilinear_resize;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};
use graph::{BankVars, FieldVars};

/// Output of a scale-pooling layer.
#[derive(Clone, Debug)]
pub struct ScaleConvOutput<T> {
    pub field: VectorField<T>,
    /// Pooled magnitudes, identical to `field.rho()` up to rounding.
    pub rho: Tensor<T>,
    /// Index of the winning pyramid level per location.
    pub argmax: Vec<u8>,
}

/// Bilinear copies of `x` at every pyramid level, smallest first.
pub fn build_pyramid<T: Scalar>(x: &Tensor<T>, spec: &ScaleSpec) -> Result<Vec<Tensor<T>>> {
    spec.validate()?;
    let (_, h, w) = x.chw()?;
    spec.level_sizes(h, w)
        .into_iter()
        .map(|(lh, lw)| bilinear_resize(x, lh, lw))
        .collect()
}

fn constants<T: Scalar>(tape: &mut Tape<T>, ts: &[&Tensor<T>]) -> Vec<crate::tape::Var> {
    ts.iter().map(|t| tape.constant((*t).clone())).collect()
}

fn read_field<T: Scalar>(tape: &Tape<T>, f: FieldVars) -> VectorField<T> {
    VectorField {
        u: tape.value(f.u).clone(),
        v: tape.value(f.v).clone(),
    }
}

pub fn se_conv_scalar<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ScaleSpec,
) -> Result<ScaleConvOutput<T>> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[x, weights, bias]);
    let (field, pooled) = graph::se_conv_scalar(&mut tape, v[0], v[1], v[2], spec)?;
    Ok(ScaleConvOutput {
        field: read_field(&tape, field),
        rho: tape.value(pooled.rho).clone(),
        argmax: pooled.argmax,
    })
}

pub fn vec_conv<T: Scalar>(field: &VectorField<T>, bank: &VectorFilterBank<T>, pad: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[&field.u, &field.v, &bank.wu, &bank.wv, &bank.bias]);
    let out = graph::vec_conv(
        &mut tape,
        FieldVars { u: v[0], v: v[1] },
        BankVars {
            wu: v[2],
            wv: v[3],
            bias: v[4],
        },
        pad,
    )?;
    Ok(tape.value(out).clone())
}

pub fn se_conv_vector<T: Scalar>(
    field: &VectorField<T>,
    bank: &VectorFilterBank<T>,
    spec: &ScaleSpec,
    shift_angles: bool,
) -> Result<ScaleConvOutput<T>> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[&field.u, &field.v, &bank.wu, &bank.wv, &bank.bias]);
    let (out, pooled) = graph::se_conv_vector(
        &mut tape,
        FieldVars { u: v[0], v: v[1] },
        BankVars {
            wu: v[2],
            wv: v[3],
            bias: v[4],
        },
        spec,
        shift_angles,
    )?;
    Ok(ScaleConvOutput {
        field: read_field(&tape, out),
        rho: tape.value(pooled.rho).clone(),
        argmax: pooled.argmax,
    })
}

pub fn vec_maxpool2x2<T: Scalar>(field: &VectorField<T>) -> Result<VectorField<T>> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[&field.u, &field.v]);
    let out = graph::vec_maxpool2x2(&mut tape, FieldVars { u: v[0], v: v[1] })?;
    Ok(read_field(&tape, out))
}

/// Per channel, the magnitude and angle (degrees) of the strongest vector.
pub fn global_magnitude_pool<T: Scalar>(field: &VectorField<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[&field.u, &field.v]);
    let pooled = graph::global_magnitude_pool(&mut tape, FieldVars { u: v[0], v: v[1] })?;
    Ok((tape.value(pooled.rho).clone(), pooled.theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(o: usize, c: usize, k: usize) -> Tensor<f64> {
        Tensor::from_fn(&[o, c, k, k], |i| if i % (k * k) == k * k / 2 { 1.0 } else { 0.0 })
    }

    #[test]
    fn pyramid_identity_level_and_constant_input() {
        let spec = ScaleSpec::default();
        let x = Tensor::from_fn(&[1, 28, 28], |i| (i % 17) as f64 / 17.0);
        let pyr = build_pyramid(&x, &spec).unwrap();
        assert_eq!(pyr.len(), 8);
        assert_eq!(pyr[spec.identity_index()], x);
        let sizes: Vec<usize> = pyr.iter().map(|t| t.shape()[1]).collect();
        assert_eq!(sizes, vec![11, 14, 18, 22, 28, 35, 44, 55]);

        let c = Tensor::full(&[1, 28, 28], 0.37);
        for level in build_pyramid(&c, &spec).unwrap() {
            assert!(level.data().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn zero_input_gives_zero_field_at_index_zero() {
        let spec = ScaleSpec::default();
        let x = Tensor::<f64>::zeros(&[1, 12, 12]);
        let w = Tensor::from_fn(&[3, 1, 3, 3], |i| (i as f64 * 0.37).sin());
        let out = se_conv_scalar(&x, &w, &Tensor::zeros(&[3]), &spec).unwrap();
        assert!(out.rho.data().iter().all(|&r| r == 0.0));
        assert!(out.argmax.iter().all(|&i| i == 0));
        assert!(out.field.u.data().iter().all(|&r| r == 0.0));
        assert!(out.field.v.data().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn constant_input_ties_resolve_to_smallest_scale() {
        // every level of a constant plane is the same constant
        let spec = ScaleSpec::default();
        let x = Tensor::full(&[1, 6, 6], 1.0f64);
        let w = Tensor::full(&[1, 1, 1, 1], 2.0);
        let out = se_conv_scalar(&x, &w, &Tensor::zeros(&[1]), &spec).unwrap();
        assert!(out.argmax.iter().all(|&i| i == 0));
        assert!(out.rho.data().iter().all(|&r| r == 2.0));
        assert!(out.field.theta_degrees().data().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn vec_conv_component_projector() {
        let u = Tensor::from_fn(&[2, 5, 5], |i| (i as f64).cos());
        let v = Tensor::from_fn(&[2, 5, 5], |i| (i as f64).sin());
        let field = VectorField::new(u.clone(), v).unwrap();
        // output channel o picks input channel o of u
        let wu = Tensor::from_fn(&[2, 2, 3, 3], |i| {
            let (o, c, r) = (i / 18, (i / 9) % 2, i % 9);
            if o == c && r == 4 {
                1.0
            } else {
                0.0
            }
        });
        let bank = VectorFilterBank::new(wu, Tensor::zeros(&[2, 2, 3, 3]), Tensor::zeros(&[2])).unwrap();
        assert_eq!(vec_conv(&field, &bank, 1).unwrap(), u);
    }

    #[test]
    fn vec_conv_of_unit_vectors_is_cosine_of_angle_difference() {
        let spec = ScaleSpec::default();
        let unit = |deg: f64| {
            VectorField::from_polar(&Tensor::full(&[1, 1, 1], 1.0), &Tensor::full(&[1, 1, 1], deg))
                .unwrap()
        };
        let a = unit(spec.angle_of_index(0).unwrap());
        let b = unit(spec.angle_of_index(7).unwrap());
        let bank = VectorFilterBank::new(
            b.u.clone().reshape(&[1, 1, 1, 1]).unwrap(),
            b.v.clone().reshape(&[1, 1, 1, 1]).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let out = vec_conv(&a, &bank, 0).unwrap();
        assert!((out.data()[0] + 0.5).abs() <= 1e-12);
    }

    #[test]
    fn vector_layer_without_shift_and_zero_wv_reduces_to_scalar_layer() {
        let spec = ScaleSpec::new(1, 2, 1.3, 90.0).unwrap();
        let u = Tensor::from_fn(&[2, 9, 9], |i| ((i * 7) % 13) as f64 / 13.0 - 0.3);
        let v = Tensor::from_fn(&[2, 9, 9], |i| ((i * 5) % 11) as f64 / 11.0);
        let field = VectorField::new(u.clone(), v).unwrap();
        let wu = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 3) % 7) as f64 / 7.0 - 0.4);
        let bias = Tensor::new(vec![3], vec![0.1, -0.2, 0.0]).unwrap();
        let bank = VectorFilterBank::new(wu.clone(), Tensor::zeros(&[3, 2, 3, 3]), bias.clone()).unwrap();
        let a = se_conv_vector(&field, &bank, &spec, false).unwrap();
        let b = se_conv_scalar(&u, &wu, &bias, &spec).unwrap();
        assert_eq!(a.argmax, b.argmax);
        assert_eq!(a.rho, b.rho);
    }

    #[test]
    fn zero_field_in_gives_zero_rho() {
        let spec = ScaleSpec::default();
        let field = VectorField::<f64>::zeros(&[2, 7, 7]);
        let bank = VectorFilterBank::new(delta(3, 2, 3), delta(3, 2, 3), Tensor::zeros(&[3])).unwrap();
        let out = se_conv_vector(&field, &bank, &spec, true).unwrap();
        assert!(out.rho.data().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn vec_maxpool_keeps_strongest_vector() {
        let mut u = Tensor::<f64>::zeros(&[1, 2, 2]);
        let mut v = Tensor::<f64>::zeros(&[1, 2, 2]);
        u.data_mut()[2] = -0.3;
        v.data_mut()[2] = 0.4;
        let out = vec_maxpool2x2(&VectorField::new(u, v).unwrap()).unwrap();
        assert_eq!(out.u.data(), &[-0.3]);
        assert_eq!(out.v.data(), &[0.4]);

        // equal magnitudes: first index wins
        let u = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        let v = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let out = vec_maxpool2x2(&VectorField::new(u, v).unwrap()).unwrap();
        assert_eq!((out.u.data()[0], out.v.data()[0]), (0.0, 1.0));
    }

    #[test]
    fn global_pool_single_pixel_and_constant_field() {
        let mut u = Tensor::<f64>::zeros(&[2, 3, 3]);
        let mut v = Tensor::<f64>::zeros(&[2, 3, 3]);
        u.data_mut()[4] = 0.0;
        v.data_mut()[4] = 2.0;
        u.data_mut()[9 + 7] = 1.0;
        let (rho, theta) = global_magnitude_pool(&VectorField::new(u, v).unwrap()).unwrap();
        assert_eq!(rho.data(), &[2.0, 1.0]);
        assert!((theta.data()[0] - 90.0).abs() < 1e-12);
        assert_eq!(theta.data()[1], 0.0);

        let mut tape = Tape::<f64>::new();
        let cu = tape.constant(Tensor::full(&[1, 4, 4], 0.5));
        let cv = tape.constant(Tensor::full(&[1, 4, 4], 0.5));
        let pooled = graph::global_magnitude_pool(&mut tape, FieldVars { u: cu, v: cv }).unwrap();
        assert_eq!(pooled.location, vec![0]);
    }
}
