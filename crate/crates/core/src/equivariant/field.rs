use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel 2D vectors stored as two Cartesian planes. The magnitude
/// carries response strength; the angle encodes the winning scale.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    pub u: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> VectorField<T> {
    pub fn new(u: Tensor<T>, v: Tensor<T>) -> Result<Self> {
        u.chw()?;
        u.expect_same_shape(&v)?;
        Ok(VectorField { u, v })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        VectorField {
            u: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }

    /// Builds a field from magnitudes and angles in degrees.
    pub fn from_polar(rho: &Tensor<T>, theta_deg: &Tensor<T>) -> Result<Self> {
        rho.expect_same_shape(theta_deg)?;
        let u = rho.zip_map(theta_deg, |r, t| r * t.to_radians().cos())?;
        let v = rho.zip_map(theta_deg, |r, t| r * t.to_radians().sin())?;
        Self::new(u, v)
    }

    pub fn shape(&self) -> &[usize] {
        self.u.shape()
    }

    pub fn chw(&self) -> (usize, usize, usize) {
        self.u.chw().expect("vector field planes are C×H×W")
    }

    pub fn rho(&self) -> Tensor<T> {
        self.u
            .zip_map(&self.v, |a, b| a.hypot(b))
            .expect("planes share a shape")
    }

    /// Angle in degrees; zero vectors report 0°.
    pub fn theta_degrees(&self) -> Tensor<T> {
        self.u
            .zip_map(&self.v, vector_angle_degrees)
            .expect("planes share a shape")
    }

    /// Rotates every vector by `degrees`.
    pub fn rotated(&self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let (s, c) = (T::of(s), T::of(c));
        let u = self
            .u
            .zip_map(&self.v, |a, b| c * a - s * b)
            .expect("planes share a shape");
        let v = self
            .u
            .zip_map(&self.v, |a, b| s * a + c * b)
            .expect("planes share a shape");
        VectorField { u, v }
    }

    pub fn cast<U: Scalar>(&self) -> VectorField<U> {
        VectorField {
            u: self.u.cast(),
            v: self.v.cast(),
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        Ok(VectorField {
            u: self.u.zip_map(&other.u, |x, y| a * x + b * y)?,
            v: self.v.zip_map(&other.v, |x, y| a * x + b * y)?,
        })
    }
}

pub(crate) fn vector_angle_degrees<T: Scalar>(u: T, v: T) -> T {
    if u == T::zero() && v == T::zero() {
        T::zero()
    } else {
        v.atan2(u).to_degrees()
    }
}

/// Learned filters for a vector-field convolution: one bank per Cartesian
/// component plus a shared bias.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFilterBank<T> {
    pub wu: Tensor<T>,
    pub wv: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> VectorFilterBank<T> {
    pub fn new(wu: Tensor<T>, wv: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        wu.expect_same_shape(&wv)?;
        match *wu.shape() {
            [o, _, k, k2] if k == k2 && k % 2 == 1 && bias.shape() == [o] => {
                Ok(VectorFilterBank { wu, wv, bias })
            }
            _ => Err(Error::config(format!(
                "filter bank needs O×C×k×k weights with odd k and an O-length bias, got {:?} / {:?}",
                wu.shape(),
                bias.shape()
            ))),
        }
    }

    pub fn kernel(&self) -> usize {
        self.wu.shape()[2]
    }
}
