//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: each operation appends a node holding the forward
//! value and, when any input requires gradients, a closure that maps the
//! node's output gradient to contributions on its parents. Nodes are created
//! in topological order by construction, so [`Graph::backward`] is a single
//! reverse sweep that visits every node exactly once and *accumulates* into
//! parents (a value used twice receives the sum of both paths).
//!
//! Tensors are immutable once recorded; the tape never mutates a value.

use std::cell::RefCell;

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &mut GradSink<T>)>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Gradient accumulator indexed by node id.
pub struct GradSink<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradSink<T> {
    fn accumulate(&mut self, id: usize, grad: Tensor<T>) {
        match &mut self.grads[id] {
            Some(existing) => existing.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Accumulate into a [`Var`]'s slot; used by op impls in sibling modules.
    pub(crate) fn accumulate_pub(&mut self, var: Var, grad: Tensor<T>) {
        self.accumulate(var.0, grad);
    }
}

/// Gradients of a scalar loss with respect to every node that required them.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or a zero tensor of the given shape when the loss
    /// did not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// The autodiff tape.
pub struct Graph<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. `trainable` marks it as a gradient target.
    pub fn leaf(&self, value: Tensor<T>, trainable: bool) -> Var {
        self.push(value, trainable, None)
    }

    /// Records a constant (never receives gradients).
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, false, None)
    }

    pub fn value(&self, var: Var) -> Tensor<T> {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.shape().to_vec()
    }

    fn requires_grad(&self, var: Var) -> bool {
        self.nodes.borrow()[var.0].requires_grad
    }

    pub(crate) fn requires_grad_of(&self, var: Var) -> bool {
        self.requires_grad(var)
    }

    pub(crate) fn push_with_backward(&self, value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        self.push(value, true, Some(backward))
    }

    pub(crate) fn unary_impl(
        &self,
        input: Var,
        value: Tensor<T>,
        back: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var {
        self.unary(input, value, back)
    }

    pub(crate) fn binary_impl(
        &self,
        a: Var,
        b: Var,
        value: Tensor<T>,
        back_a: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
        back_b: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var {
        self.binary(a, b, value, back_a, back_b)
    }

    fn push(&self, value: Tensor<T>, requires_grad: bool, backward: Option<BackwardFn<T>>) -> Var {
        debug_assert!(value.is_finite(), "non-finite value recorded on tape");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            backward,
        });
        Var(nodes.len() - 1)
    }

    fn unary(
        &self,
        input: Var,
        value: Tensor<T>,
        back: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var {
        let requires = self.requires_grad(input);
        let backward: Option<BackwardFn<T>> = if requires {
            Some(Box::new(move |grad, sink| {
                sink.accumulate(input.0, back(grad));
            }))
        } else {
            None
        };
        self.push(value, requires, backward)
    }

    /// Reverse sweep from a scalar-valued node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut sink = GradSink {
            grads: (0..nodes.len()).map(|_| None).collect(),
        };
        sink.grads[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));
        for id in (0..=loss.0).rev() {
            if sink.grads[id].is_none() {
                continue;
            }
            if let Some(back) = nodes[id].backward.as_ref() {
                let grad = sink.grads[id].clone().unwrap();
                back(&grad, &mut sink);
            }
        }
        Ok(Gradients { grads: sink.grads })
    }

    // ---- elementwise arithmetic ----

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = va.add(&vb)?;
        Ok(self.binary(a, b, value, |g| g.clone(), |g| g.clone()))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = va.sub(&vb)?;
        Ok(self.binary(a, b, value, |g| g.clone(), |g| g.scale(-T::ONE)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = va.mul(&vb)?;
        let (ca, cb) = (va.clone(), vb.clone());
        Ok(self.binary(
            a,
            b,
            value,
            move |g| g.mul(&cb).expect("shape checked"),
            move |g| g.mul(&ca).expect("shape checked"),
        ))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        value: Tensor<T>,
        back_a: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
        back_b: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var {
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let requires = ra || rb;
        let backward: Option<BackwardFn<T>> = if requires {
            Some(Box::new(move |grad, sink| {
                if ra {
                    sink.accumulate(a.0, back_a(grad));
                }
                if rb {
                    sink.accumulate(b.0, back_b(grad));
                }
            }))
        } else {
            None
        };
        self.push(value, requires, backward)
    }

    pub fn neg(&self, a: Var) -> Var {
        let value = self.value(a).scale(-T::ONE);
        self.unary(a, value, |g| g.scale(-T::ONE))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&self, a: Var, c: T) -> Var {
        let value = self.value(a).scale(c);
        self.unary(a, value, move |g| g.scale(c))
    }

    /// Broadcast add: `b`'s shape must be a suffix of `a`'s shape. The
    /// gradient of `b` sums over the broadcast (leading) axes.
    pub fn add_bcast(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        if sa.len() < sb.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::ShapeMismatch {
                op: "add_bcast",
                lhs: sa,
                rhs: sb,
            });
        }
        let block = vb.len().max(1);
        let reps = va.len() / block;
        let mut out = va.to_vec();
        for r in 0..reps {
            let base = r * block;
            for (i, &bv) in vb.data().iter().enumerate() {
                out[base + i] += bv;
            }
        }
        let value = Tensor::from_vec_unchecked(&sa, out);
        let sb_for_back = sb.clone();
        Ok(self.binary(
            a,
            b,
            value,
            |g| g.clone(),
            move |g| {
                let mut acc = vec![T::ZERO; block];
                for r in 0..reps {
                    let base = r * block;
                    for (i, slot) in acc.iter_mut().enumerate() {
                        *slot += g.data()[base + i];
                    }
                }
                Tensor::from_vec_unchecked(&sb_for_back, acc)
            },
        ))
    }

    /// Multiply every element of `a` by the single-element node `s`.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let (va, vs) = (self.value(a), self.value(s));
        if vs.len() != 1 {
            return Err(Error::InvalidShape {
                op: "mul_scalar",
                shape: vs.shape().to_vec(),
                reason: "scalar node must hold exactly one element".into(),
            });
        }
        let sval = vs.item();
        let value = va.scale(sval);
        let ca = va.clone();
        Ok(self.binary(
            a,
            s,
            value,
            move |g| g.scale(sval),
            move |g| {
                let mut acc = T::ZERO;
                for (gi, ai) in g.data().iter().zip(ca.data().iter()) {
                    acc += *gi * *ai;
                }
                Tensor::scalar(acc)
            },
        ))
    }

    /// Elementwise reciprocal.
    pub fn recip(&self, a: Var) -> Var {
        let va = self.value(a);
        let value = va.map(|x| T::ONE / x);
        let cv = value.clone();
        self.unary(a, value, move |g| {
            g.zip(&cv, "recip_back", |gi, yi| -gi * yi * yi).expect("same shape")
        })
    }

    // ---- structure ----

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let value = va.reshape(shape)?;
        let orig = va.shape().to_vec();
        Ok(self.unary(a, value, move |g| g.reshape(&orig).expect("same length")))
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose_last2(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let value = transpose_last2_raw(&va)?;
        Ok(self.unary(a, value, move |g| {
            transpose_last2_raw(g).expect("gradient shape mirrors output")
        }))
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let values: Vec<Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let first_shape = values[0].shape().to_vec();
        if axis >= first_shape.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first_shape,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total_axis = 0usize;
        for v in &values {
            let s = v.shape();
            if s.len() != first_shape.len()
                || s.iter()
                    .zip(first_shape.iter())
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first_shape,
                    rhs: s.to_vec(),
                });
            }
            total_axis += s[axis];
        }
        let mut out_shape = first_shape.clone();
        out_shape[axis] = total_axis;

        let outer: usize = first_shape[..axis].iter().product();
        let inner: usize = first_shape[axis + 1..].iter().product();
        let mut data = vec![T::ZERO; outer * total_axis * inner];
        let mut offset = 0usize;
        let mut spans = Vec::with_capacity(values.len());
        for v in &values {
            let extent = v.shape()[axis];
            for o in 0..outer {
                let src = &v.data()[o * extent * inner..(o + 1) * extent * inner];
                let dst_base = (o * total_axis + offset) * inner;
                data[dst_base..dst_base + extent * inner].copy_from_slice(src);
            }
            spans.push((offset, extent));
            offset += extent;
        }
        let value = Tensor::from_vec_unchecked(&out_shape, data);

        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let reqs: Vec<bool> = parts.iter().map(|&v| self.requires_grad(v)).collect();
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        let requires = reqs.iter().any(|&r| r);
        let backward: Option<BackwardFn<T>> = if requires {
            Some(Box::new(move |grad, sink| {
                for (((&id, &req), (off, extent)), shape) in
                    ids.iter().zip(&reqs).zip(&spans).zip(&shapes)
                {
                    if !req {
                        continue;
                    }
                    let mut part = vec![T::ZERO; outer * extent * inner];
                    for o in 0..outer {
                        let src_base = (o * total_axis + off) * inner;
                        part[o * extent * inner..(o + 1) * extent * inner]
                            .copy_from_slice(&grad.data()[src_base..src_base + extent * inner]);
                    }
                    sink.accumulate(id, Tensor::from_vec_unchecked(shape, part));
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, requires, backward))
    }

    /// Contiguous sub-range along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "narrow",
                shape,
                reason: format!("range {}..{} on axis {}", start, start + len, axis),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![T::ZERO; outer * len * inner];
        for o in 0..outer {
            let src_base = (o * extent + start) * inner;
            data[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&va.data()[src_base..src_base + len * inner]);
        }
        let value = Tensor::from_vec_unchecked(&out_shape, data);
        Ok(self.unary(a, value, move |g| {
            let mut full = vec![T::ZERO; outer * extent * inner];
            for o in 0..outer {
                let dst_base = (o * extent + start) * inner;
                full[dst_base..dst_base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            Tensor::from_vec_unchecked(&shape, full)
        }))
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let value = Tensor::scalar(va.sum());
        self.unary(a, value, move |g| Tensor::full(&shape, g.item()))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, T::ONE / T::from_f64(n as f64))
    }

    /// Mean squared error between same-shape tensors, averaged over elements.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }
}

pub(crate) fn transpose_last2_raw<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = t.shape();
    if shape.len() < 2 {
        return Err(Error::InvalidShape {
            op: "transpose_last2",
            shape: shape.to_vec(),
            reason: "rank ≥ 2 required".into(),
        });
    }
    let (m, n) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let batch: usize = shape[..shape.len() - 2].iter().product();
    let mut out = vec![T::ZERO; t.len()];
    for b in 0..batch {
        let src = &t.data()[b * m * n..(b + 1) * m * n];
        let dst = &mut out[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape.swap(r - 2, r - 1);
    Ok(Tensor::from_vec_unchecked(&out_shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_sum_is_ones() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64), true);
        let loss = g.sum_all(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().to_vec(), vec![1.0; 6]);
    }

    #[test]
    fn backward_squared_norm_is_2x() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_fn(&[4], |i| i as f64 - 1.5), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq);
        let grads = g.backward(loss).unwrap();
        let expected: Vec<f64> = (0..4).map(|i| 2.0 * (i as f64 - 1.5)).collect();
        assert_eq!(grads.get(x).unwrap().to_vec(), expected);
    }

    #[test]
    fn reused_node_accumulates() {
        // loss = sum(x + x) -> grad = 2.
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_fn(&[3], |i| i as f64), true);
        let s = g.add(x, x).unwrap();
        let loss = g.sum_all(s);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().to_vec(), vec![2.0; 3]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[2]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn concat_narrow_roundtrip_gradients() {
        let g = Graph::<f64>::new();
        let a = g.leaf(Tensor::from_fn(&[2, 2], |i| i as f64), true);
        let b = g.leaf(Tensor::from_fn(&[2, 3], |i| -(i as f64)), true);
        let cat = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(cat), vec![2, 5]);
        let right = g.narrow(cat, 1, 2, 3).unwrap();
        let loss = g.sum_all(right);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(b).unwrap().to_vec(), vec![1.0; 6]);
        assert_eq!(grads.get(a).unwrap().to_vec(), vec![0.0; 4]);
    }
}
