//! Bilinear resizing with half-pixel centers and edge clamping.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Interpolation taps along one axis.
#[derive(Clone, Debug)]
pub struct AxisTaps<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub t: Vec<T>,
}

impl<T: Scalar> AxisTaps<T> {
    /// Source coordinate of output sample `i` is `(i + 0.5)·n_in/n_out − 0.5`,
    /// clamped to `[0, n_in − 1]`.
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let mut lo = Vec::with_capacity(n_out);
        let mut hi = Vec::with_capacity(n_out);
        let mut t = Vec::with_capacity(n_out);
        for i in 0..n_out {
            // (2i + 1)·n_in / (2·n_out) − 0.5, exact when n_in == n_out
            let src = ((2 * i + 1) * n_in) as f64 / (2 * n_out) as f64 - 0.5;
            let src = src.clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            lo.push(i0);
            hi.push(i1);
            t.push(T::of(src - i0 as f64));
        }
        AxisTaps { lo, hi, t }
    }
}

#[derive(Clone, Debug)]
pub struct ResizePlan<T> {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    rows: AxisTaps<T>,
    cols: AxisTaps<T>,
}

impl<T: Scalar> ResizePlan<T> {
    pub fn new(channels: usize, in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 || in_h == 0 || in_w == 0 {
            return Err(Error::config(format!(
                "cannot resize {in_h}×{in_w} to {out_h}×{out_w}"
            )));
        }
        Ok(ResizePlan {
            channels,
            in_h,
            in_w,
            out_h,
            out_w,
            rows: AxisTaps::new(in_h, out_h),
            cols: AxisTaps::new(in_w, out_w),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.in_h == self.out_h && self.in_w == self.out_w
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        let mut out = Vec::with_capacity(self.channels * oh * ow);
        for c in 0..self.channels {
            let plane = &x[c * ih * iw..(c + 1) * ih * iw];
            for y in 0..oh {
                let (r0, r1, ty) = (self.rows.lo[y], self.rows.hi[y], self.rows.t[y]);
                let top = &plane[r0 * iw..(r0 + 1) * iw];
                let bot = &plane[r1 * iw..(r1 + 1) * iw];
                for xo in 0..ow {
                    let (c0, c1, tx) = (self.cols.lo[xo], self.cols.hi[xo], self.cols.t[xo]);
                    // lerp as a + t·(b − a) keeps constant planes exact
                    let a = top[c0] + tx * (top[c1] - top[c0]);
                    let b = bot[c0] + tx * (bot[c1] - bot[c0]);
                    out.push(a + ty * (b - a));
                }
            }
        }
        out
    }

    /// Scatters output gradients back through the four bilinear weights.
    pub fn backward(&self, grad: &[T]) -> Vec<T> {
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        let mut dx = vec![T::zero(); self.channels * ih * iw];
        let one = T::one();
        for c in 0..self.channels {
            let plane = &mut dx[c * ih * iw..(c + 1) * ih * iw];
            let g = &grad[c * oh * ow..(c + 1) * oh * ow];
            for y in 0..oh {
                let (r0, r1, ty) = (self.rows.lo[y], self.rows.hi[y], self.rows.t[y]);
                for xo in 0..ow {
                    let (c0, c1, tx) = (self.cols.lo[xo], self.cols.hi[xo], self.cols.t[xo]);
                    let gv = g[y * ow + xo];
                    let g_top = (one - ty) * gv;
                    let g_bot = ty * gv;
                    plane[r0 * iw + c0] = plane[r0 * iw + c0] + (one - tx) * g_top;
                    plane[r0 * iw + c1] = plane[r0 * iw + c1] + tx * g_top;
                    plane[r1 * iw + c0] = plane[r1 * iw + c0] + (one - tx) * g_bot;
                    plane[r1 * iw + c1] = plane[r1 * iw + c1] + tx * g_bot;
                }
            }
        }
        dx
    }
}

pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    let plan = ResizePlan::new(c, h, w, out_h, out_w)?;
    Tensor::new(vec![c, out_h, out_w], plan.forward(input.data()))
}
