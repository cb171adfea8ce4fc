//! Reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! immutable once recorded; [`Tape::backward`] walks the nodes in exact
//! reverse order of construction and accumulates gradients by summation
//! in that fixed order.
//!
//! Operations that make discrete choices (ReLU masks, max/argmax routing)
//! can optionally fold those choices into a running hash. Gradient checks
//! compare the hash before and after a perturbation to detect coordinates
//! where a finite difference straddles a kink.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::conv::{conv_backward, conv_forward, ConvSaved, ConvTerm};
use crate::nn::loss::{softmax, softmax_cross_entropy};
use crate::nn::pool::maxpool2x2;
use crate::nn::resize::ResizePlan;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        terms: Vec<(Var, Var)>,
        bias: Option<Var>,
        saved: ConvSaved<T>,
    },
    Resize {
        x: Var,
        plan: ResizePlan<T>,
    },
    Relu {
        x: Var,
    },
    Gather {
        x: Var,
        index: Vec<u32>,
    },
    Select {
        xs: Vec<Var>,
        choice: Vec<u8>,
    },
    Scale {
        x: Var,
        c: T,
    },
    MulConst {
        x: Var,
        m: Tensor<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Magnitude {
        u: Var,
        v: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    SoftmaxCe {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    SquaredError {
        pred: Var,
        target: T,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    decisions: Option<DefaultHasher>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            decisions: None,
        }
    }

    /// A tape that hashes every discrete routing decision it records.
    pub fn tracking_decisions() -> Self {
        Tape {
            nodes: Vec::new(),
            decisions: Some(DefaultHasher::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of all discrete decisions so far, if tracking is enabled.
    pub fn decision_signature(&self) -> Option<u64> {
        self.decisions.as_ref().map(|h| h.finish())
    }

    fn note(&mut self, bytes: impl FnOnce() -> Vec<u8>) {
        if let Some(h) = self.decisions.as_mut() {
            h.write(&bytes());
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shared_value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    /// Records a trainable leaf without copying its data.
    pub fn param(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input leaf; `requires_grad` controls whether
    /// [`Tape::backward`] reports a gradient for it.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// `Σ_j conv2d(x_j, w_j) + bias` over terms sharing spatial geometry.
    pub fn conv(&mut self, terms: &[(Var, Var)], bias: Option<Var>, pad: usize) -> Result<Var> {
        let conv_terms: Vec<ConvTerm<'_, T>> = terms
            .iter()
            .map(|&(x, w)| ConvTerm {
                input: self.value(x),
                weights: self.value(w),
            })
            .collect();
        let (out, saved) = conv_forward(&conv_terms, bias.map(|b| self.value(b)), pad)?;
        let needs = terms.iter().any(|&(x, w)| self.needs(x) || self.needs(w))
            || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv {
                terms: terms.to_vec(),
                bias,
                saved,
            },
            needs,
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, pad: usize) -> Result<Var> {
        self.conv(&[(x, w)], bias, pad)
    }

    /// Bilinear resize. A same-size resize is the identity and records
    /// nothing.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if (h, w) == (out_h, out_w) {
            return Ok(x);
        }
        let plan = ResizePlan::new(c, h, w, out_h, out_w)?;
        let out = Tensor::new(vec![c, out_h, out_w], plan.forward(self.value(x).data()))?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Resize { x, plan }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        if self.decisions.is_some() {
            let mask: Vec<u8> = self.value(x).data().iter().map(|&v| (v > T::zero()) as u8).collect();
            self.note(|| mask);
        }
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    /// `out[j] = x[index[j]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<u32>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= src.len()) {
            return Err(Error::config(format!(
                "gather index {bad} out of range for {} values",
                src.len()
            )));
        }
        let data: Vec<T> = index.iter().map(|&i| src[i as usize]).collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        self.note(|| index.iter().flat_map(|i| i.to_le_bytes()).collect());
        let needs = self.needs(x);
        Ok(self.push(out, Op::Gather { x, index }, needs))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (values, argmax) = maxpool2x2(self.value(x))?;
        let shape = values.shape().to_vec();
        self.gather(x, argmax, &shape)
    }

    /// Elementwise choice between same-shaped inputs:
    /// `out[j] = xs[choice[j]][j]`.
    pub fn select(&mut self, xs: &[Var], choice: Vec<u8>) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::config("select needs at least one input"))?;
        let shape = self.value(*first).shape().to_vec();
        for &x in xs {
            self.value(x).expect_same_shape(self.value(*first))?;
        }
        if choice.len() != self.value(*first).len() {
            return Err(Error::config("select choice length mismatch"));
        }
        if choice.iter().any(|&c| c as usize >= xs.len()) {
            return Err(Error::config("select choice out of range"));
        }
        let data: Vec<T> = choice
            .iter()
            .enumerate()
            .map(|(j, &c)| self.value(xs[c as usize]).data()[j])
            .collect();
        let out = Tensor::new(shape, data)?;
        self.note(|| choice.clone());
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(
            out,
            Op::Select {
                xs: xs.to_vec(),
                choice,
            },
            needs,
        ))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, c }, needs)
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, m: Tensor<T>) -> Result<Var> {
        let out = self.value(x).zip_map(&m, |a, b| a * b)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::MulConst { x, m }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul { a, b }, needs))
    }

    /// `sqrt(u² + v²)` elementwise.
    pub fn magnitude(&mut self, u: Var, v: Var) -> Result<Var> {
        let out = self.value(u).zip_map(self.value(v), |a, b| a.hypot(b))?;
        let needs = self.needs(u) || self.needs(v);
        Ok(self.push(out, Op::Magnitude { u, v }, needs))
    }

    /// Fully connected layer `W·x + b` on the flattened input;
    /// `W` is `out × in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n_out, n_in) = match *self.value(w).shape() {
            [o, i] => (o, i),
            ref s => return Err(Error::config(format!("linear weights must be 2-D, got {s:?}"))),
        };
        if self.value(x).len() != n_in {
            return Err(Error::config(format!(
                "linear layer expects {n_in} inputs, got {}",
                self.value(x).len()
            )));
        }
        if self.value(b).shape() != [n_out] {
            return Err(Error::config(format!(
                "linear bias must have shape [{n_out}], got {:?}",
                self.value(b).shape()
            )));
        }
        let mut out = self.value(b).data().to_vec();
        T::gemm(
            n_out,
            n_in,
            1,
            T::one(),
            self.value(w).data(),
            n_in as isize,
            1,
            self.value(x).data(),
            1,
            1,
            T::one(),
            &mut out,
            1,
            1,
        );
        let out = Tensor::new(vec![n_out], out)?;
        out.ensure_finite("linear")?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Linear { x, w, b }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = (*self.nodes[x.0].value).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape { x }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(out, Op::Sum { x }, needs)
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        let loss = softmax_cross_entropy(z, label)?;
        let probs = softmax(z);
        let out = Tensor::scalar(loss);
        out.ensure_finite("cross-entropy")?;
        let needs = self.needs(logits);
        Ok(self.push(
            out,
            Op::SoftmaxCe {
                logits,
                label,
                probs,
            },
            needs,
        ))
    }

    /// `(pred − target)²` for a single-element prediction.
    pub fn squared_error(&mut self, pred: Var, target: T) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != 1 {
            return Err(Error::config(format!(
                "squared error expects a scalar prediction, got shape {:?}",
                p.shape()
            )));
        }
        let d = p.data()[0] - target;
        let out = Tensor::scalar(d * d);
        out.ensure_finite("squared error")?;
        let needs = self.needs(pred);
        Ok(self.push(out, Op::SquaredError { pred, target }, needs))
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one. Leaves off the loss path get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&node.op, &g, &mut grads);
        }

        let mut leaves = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let is_grad_leaf = matches!(node.op, Op::Leaf) && node.needs_grad;
            leaves.push(if is_grad_leaf {
                Some(
                    grads[id]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape())),
                )
            } else {
                None
            });
        }
        Ok(Gradients { grads: leaves })
    }

    fn propagate(&self, op: &Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let acc = |grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Conv { terms, bias, saved } => {
                let want: Vec<bool> = terms.iter().map(|&(x, _)| self.needs(x)).collect();
                let cg = conv_backward(saved, g.data(), &want);
                for ((&(x, w), dx), dw) in terms.iter().zip(cg.inputs).zip(cg.weights) {
                    if let Some(dx) = dx {
                        acc(grads, x, dx);
                    }
                    acc(grads, w, dw);
                }
                if let Some(b) = bias {
                    acc(grads, *b, cg.bias);
                }
            }
            Op::Resize { x, plan } => {
                let dx = plan.backward(g.data());
                let shape = self.value(*x).shape().to_vec();
                acc(grads, *x, Tensor::new(shape, dx).expect("resize grad shape"));
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let dx = xv
                    .zip_map(g, |a, gv| if a > T::zero() { gv } else { T::zero() })
                    .expect("relu grad shape");
                acc(grads, *x, dx);
            }
            Op::Gather { x, index } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (&i, &gv) in index.iter().zip(g.data()) {
                    d[i as usize] = d[i as usize] + gv;
                }
                acc(grads, *x, dx);
            }
            Op::Select { xs, choice } => {
                for (k, &x) in xs.iter().enumerate() {
                    if !self.needs(x) {
                        continue;
                    }
                    let dx = Tensor::from_fn(g.shape(), |j| {
                        if choice[j] as usize == k {
                            g.data()[j]
                        } else {
                            T::zero()
                        }
                    });
                    acc(grads, x, dx);
                }
            }
            Op::Scale { x, c } => acc(grads, *x, g.map(|v| v * *c)),
            Op::MulConst { x, m } => {
                acc(grads, *x, g.zip_map(m, |a, b| a * b).expect("mul grad shape"))
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, *a, g.zip_map(bv, |x, y| x * y).expect("mul grad shape"));
                acc(grads, *b, g.zip_map(av, |x, y| x * y).expect("mul grad shape"));
            }
            Op::Magnitude { u, v } => {
                let (uv, vv) = (self.value(*u), self.value(*v));
                let rho = |i: usize| uv.data()[i].hypot(vv.data()[i]);
                let du = Tensor::from_fn(g.shape(), |i| {
                    let r = rho(i);
                    if r > T::zero() {
                        g.data()[i] * uv.data()[i] / r
                    } else {
                        T::zero()
                    }
                });
                let dv = Tensor::from_fn(g.shape(), |i| {
                    let r = rho(i);
                    if r > T::zero() {
                        g.data()[i] * vv.data()[i] / r
                    } else {
                        T::zero()
                    }
                });
                acc(grads, *u, du);
                acc(grads, *v, dv);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n_out, n_in) = (wv.shape()[0], wv.shape()[1]);
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); n_out * n_in];
                    for (o, row) in dw.chunks_mut(n_in).enumerate() {
                        let go = g.data()[o];
                        if go == T::zero() {
                            continue;
                        }
                        for (d, &xi) in row.iter_mut().zip(xv.data()) {
                            *d = go * xi;
                        }
                    }
                    acc(grads, *w, Tensor::new(vec![n_out, n_in], dw).expect("linear dW"));
                }
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); n_in];
                    T::gemm(
                        n_in,
                        n_out,
                        1,
                        T::one(),
                        wv.data(),
                        1,
                        n_in as isize,
                        g.data(),
                        1,
                        1,
                        T::zero(),
                        &mut dx,
                        1,
                        1,
                    );
                    let shape = xv.shape().to_vec();
                    acc(grads, *x, Tensor::new(shape, dx).expect("linear dx"));
                }
                acc(grads, *b, g.clone());
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                acc(grads, *x, g.clone().reshape(&shape).expect("reshape grad"));
            }
            Op::Sum { x } => {
                let gv = g.data()[0];
                acc(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::SoftmaxCe {
                logits,
                label,
                probs,
            } => {
                let gv = g.data()[0];
                let d = Tensor::from_fn(&[probs.len()], |i| {
                    let onehot = if i == *label { T::one() } else { T::zero() };
                    (probs[i] - onehot) * gv
                });
                let shape = self.value(*logits).shape().to_vec();
                acc(grads, *logits, d.reshape(&shape).expect("ce grad shape"));
            }
            Op::SquaredError { pred, target } => {
                let p = self.value(*pred);
                let d = (p.data()[0] - *target) * T::of(2.0) * g.data()[0];
                acc(grads, *pred, Tensor::full(p.shape(), d));
            }
        }
    }
}

/// Gradients of one backward pass, indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf that requires one.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_product_gives_other_factor() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let w = tape.param(Arc::new(Tensor::from_fn(&[2, 3], |i| (i * i) as f64)));
        let xv = tape.constant(x.clone());
        let p = tape.mul(w, xv).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &x);
        assert!(grads.get(xv).is_none());
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let used = tape.param(Arc::new(Tensor::full(&[3], 2.0)));
        let unused = tape.param(Arc::new(Tensor::full(&[4], 1.0)));
        let loss = tape.sum(used);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(used).unwrap().data(), &[1.0; 3]);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Arc::new(Tensor::full(&[3], 2.0)));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn reused_value_accumulates_both_paths() {
        // loss = sum(x + x) -> d/dx = 2
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Arc::new(Tensor::full(&[2], 1.5)));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn decision_signature_tracks_relu_masks() {
        let run = |shift: f64| {
            let mut tape = Tape::<f64>::tracking_decisions();
            let x = tape.input(Tensor::from_fn(&[4], |i| i as f64 - 1.5 + shift), true);
            tape.relu(x);
            tape.decision_signature().unwrap()
        };
        assert_eq!(run(0.0), run(0.1));
        assert_ne!(run(0.0), run(1.0));
        assert!(Tape::<f64>::new().decision_signature().is_none());
    }
}
