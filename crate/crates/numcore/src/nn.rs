//! Neural-network operations on the autodiff graph: matrix products,
//! activations, normalizations, attention head reshuffles and the
//! cross-entropy used by the contrastive objective.

use rayon::prelude::*;

use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// `c += a @ b` for row-major slices, optionally transposing either side.
fn gemm_acc<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    beta: T,
) {
    // When transposed, `a` is stored as [k, m] and `b` as [n, k].
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    T::gemm_strided(m, k, n, T::ONE, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

impl<T: Scalar> Graph<T> {
    /// Matrix product. Supported shapes:
    /// `[m,k]@[k,n]`, `[B,m,k]@[k,n]` (shared right operand) and
    /// `[B,m,k]@[B,k,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };

        match (sa.len(), sb.len()) {
            (2, 2) => {
                let (m, k) = (sa[0], sa[1]);
                let n = sb[1];
                if sb[0] != k {
                    return Err(mismatch());
                }
                let mut out = vec![T::ZERO; m * n];
                gemm_acc(m, k, n, va.data(), false, vb.data(), false, &mut out, T::ZERO);
                let value = Tensor::from_vec_unchecked(&[m, n], out);
                let (ca, cb) = (va.clone(), vb.clone());
                Ok(self.binary_matmul(a, b, value, move |g| {
                    // dA = dC @ Bᵀ, with the transpose folded into strides.
                    let mut da = vec![T::ZERO; m * k];
                    T::gemm_strided(
                        m, n, k, T::ONE, g.data(), n as isize, 1,
                        cb.data(), 1, n as isize, T::ZERO, &mut da, k as isize, 1,
                    );
                    Tensor::from_vec_unchecked(&[m, k], da)
                }, move |g| {
                    // dB = Aᵀ @ dC
                    let mut db = vec![T::ZERO; k * n];
                    T::gemm_strided(
                        k, m, n, T::ONE, ca.data(), 1, k as isize,
                        g.data(), n as isize, 1, T::ZERO, &mut db, n as isize, 1,
                    );
                    Tensor::from_vec_unchecked(&[k, n], db)
                }))
            }
            (3, 2) => {
                // Shared right operand: [B,m,k] @ [k,n] is one flat
                // [B·m,k] @ [k,n] product, much friendlier to the gemm
                // kernel than per-batch calls.
                let (bt, m, k) = (sa[0], sa[1], sa[2]);
                let n = sb[1];
                if sb[0] != k {
                    return Err(mismatch());
                }
                let mut out = vec![T::ZERO; bt * m * n];
                gemm_acc(bt * m, k, n, va.data(), false, vb.data(), false, &mut out, T::ZERO);
                let value = Tensor::from_vec_unchecked(&[bt, m, n], out);
                let (ca, cb) = (va.clone(), vb.clone());
                Ok(self.binary_matmul(a, b, value, move |g| {
                    let mut da = vec![T::ZERO; bt * m * k];
                    T::gemm_strided(
                        bt * m, n, k, T::ONE, g.data(), n as isize, 1,
                        cb.data(), 1, n as isize, T::ZERO, &mut da, k as isize, 1,
                    );
                    Tensor::from_vec_unchecked(&[bt, m, k], da)
                }, move |g| {
                    // dB = A_flatᵀ @ dC_flat
                    let mut db = vec![T::ZERO; k * n];
                    T::gemm_strided(
                        k, bt * m, n, T::ONE, ca.data(), 1, k as isize,
                        g.data(), n as isize, 1, T::ZERO, &mut db, n as isize, 1,
                    );
                    Tensor::from_vec_unchecked(&[k, n], db)
                }))
            }
            (3, 3) => {
                let (bt, m, k) = (sa[0], sa[1], sa[2]);
                let n = sb[2];
                if sb[0] != bt || sb[1] != k {
                    return Err(mismatch());
                }
                let mut out = vec![T::ZERO; bt * m * n];
                out.par_chunks_mut(m * n).enumerate().for_each(|(i, chunk)| {
                    gemm_acc(
                        m, k, n,
                        &va.data()[i * m * k..(i + 1) * m * k], false,
                        &vb.data()[i * k * n..(i + 1) * k * n], false,
                        chunk, T::ZERO,
                    );
                });
                let value = Tensor::from_vec_unchecked(&[bt, m, n], out);
                let (ca, cb) = (va.clone(), vb.clone());
                Ok(self.binary_matmul(a, b, value, move |g| {
                    let mut da = vec![T::ZERO; bt * m * k];
                    da.par_chunks_mut(m * k).enumerate().for_each(|(i, chunk)| {
                        T::gemm_strided(
                            m, n, k, T::ONE, &g.data()[i * m * n..(i + 1) * m * n], n as isize, 1,
                            &cb.data()[i * k * n..(i + 1) * k * n], 1, n as isize, T::ZERO, chunk, k as isize, 1,
                        );
                    });
                    Tensor::from_vec_unchecked(&[bt, m, k], da)
                }, move |g| {
                    let mut db = vec![T::ZERO; bt * k * n];
                    db.par_chunks_mut(k * n).enumerate().for_each(|(i, chunk)| {
                        T::gemm_strided(
                            k, m, n, T::ONE, &ca.data()[i * m * k..(i + 1) * m * k], 1, k as isize,
                            &g.data()[i * m * n..(i + 1) * m * n], n as isize, 1, T::ZERO, chunk, n as isize, 1,
                        );
                    });
                    Tensor::from_vec_unchecked(&[bt, k, n], db)
                }))
            }
            _ => Err(mismatch()),
        }
    }

    fn binary_matmul(
        &self,
        a: Var,
        b: Var,
        value: Tensor<T>,
        back_a: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
        back_b: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var {
        // Same accumulation contract as `binary`; kept separate so matmul
        // closures can capture sized locals without boxing twice.
        self.binary_impl(a, b, value, back_a, back_b)
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        let va = self.value(a);
        let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = T::from_f64(0.044_715);
        let half = T::from_f64(0.5);
        let three = T::from_f64(3.0);
        let value = va.map(|x| {
            let u = c * (x + k * x * x * x);
            half * x * (T::ONE + u.tanh())
        });
        let ca = va.clone();
        self.unary_nn(a, value, move |g| {
            g.zip(&ca, "gelu_back", |gi, x| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                let du = c * (T::ONE + three * k * x * x);
                let d = half * (T::ONE + t) + half * x * (T::ONE - t * t) * du;
                gi * d
            })
            .expect("same shape")
        })
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let width = *shape.last().expect("rank >= 1");
        let rows = va.len() / width;
        let mut out = va.to_vec();
        for r in 0..rows {
            softmax_row(&mut out[r * width..(r + 1) * width]);
        }
        let value = Tensor::from_vec_unchecked(&shape, out);
        let y = value.clone();
        self.unary_nn(a, value, move |g| {
            let mut dx = vec![T::ZERO; g.len()];
            for r in 0..rows {
                let ys = &y.data()[r * width..(r + 1) * width];
                let gs = &g.data()[r * width..(r + 1) * width];
                let mut dot = T::ZERO;
                for (yi, gi) in ys.iter().zip(gs.iter()) {
                    dot += *yi * *gi;
                }
                for ((d, yi), gi) in dx[r * width..(r + 1) * width].iter_mut().zip(ys).zip(gs) {
                    *d = *yi * (*gi - dot);
                }
            }
            Tensor::from_vec_unchecked(g.shape(), dx)
        })
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&self, a: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let va = self.value(a);
        let (vg, vb) = (self.value(gain), self.value(bias));
        let shape = va.shape().to_vec();
        let width = *shape.last().ok_or_else(|| Error::InvalidShape {
            op: "layer_norm",
            shape: shape.clone(),
            reason: "rank ≥ 1 required".into(),
        })?;
        if vg.shape() != [width] || vb.shape() != [width] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![width],
                rhs: vg.shape().to_vec(),
            });
        }
        let rows = va.len() / width;
        let inv_w = T::ONE / T::from_f64(width as f64);
        let mut out = vec![T::ZERO; va.len()];
        let mut normed = vec![T::ZERO; va.len()];
        let mut inv_std = vec![T::ZERO; rows];
        for r in 0..rows {
            let xs = &va.data()[r * width..(r + 1) * width];
            let mut mean = T::ZERO;
            for &x in xs {
                mean += x;
            }
            mean = mean * inv_w;
            let mut var = T::ZERO;
            for &x in xs {
                let d = x - mean;
                var += d * d;
            }
            var = var * inv_w;
            let istd = T::ONE / (var + eps).sqrt();
            inv_std[r] = istd;
            for i in 0..width {
                let yhat = (xs[i] - mean) * istd;
                normed[r * width + i] = yhat;
                out[r * width + i] = yhat * vg.data()[i] + vb.data()[i];
            }
        }
        let value = Tensor::from_vec_unchecked(&shape, out);
        let normed = Tensor::from_vec_unchecked(&shape, normed);

        let reqs = (
            self.requires_grad_of(a),
            self.requires_grad_of(gain),
            self.requires_grad_of(bias),
        );
        let requires = reqs.0 || reqs.1 || reqs.2;
        if !requires {
            return Ok(self.constant(value));
        }
        let (aid, gid, bid) = (a, gain, bias);
        let vg_c = vg.clone();
        Ok(self.push_nn(
            value,
            Box::new(move |grad: &Tensor<T>, sink: &mut crate::graph::GradSink<T>| {
                if reqs.0 {
                    let mut dx = vec![T::ZERO; grad.len()];
                    for r in 0..rows {
                        let gs = &grad.data()[r * width..(r + 1) * width];
                        let ys = &normed.data()[r * width..(r + 1) * width];
                        // dy = grad * gain
                        let mut mean_dy = T::ZERO;
                        let mut mean_dy_y = T::ZERO;
                        for i in 0..width {
                            let dy = gs[i] * vg_c.data()[i];
                            mean_dy += dy;
                            mean_dy_y += dy * ys[i];
                        }
                        mean_dy = mean_dy * inv_w;
                        mean_dy_y = mean_dy_y * inv_w;
                        for i in 0..width {
                            let dy = gs[i] * vg_c.data()[i];
                            dx[r * width + i] = (dy - mean_dy - ys[i] * mean_dy_y) * inv_std[r];
                        }
                    }
                    sink.accumulate_pub(aid, Tensor::from_vec_unchecked(grad.shape(), dx));
                }
                if reqs.1 {
                    let mut dg = vec![T::ZERO; width];
                    for r in 0..rows {
                        for i in 0..width {
                            dg[i] += grad.data()[r * width + i] * normed.data()[r * width + i];
                        }
                    }
                    sink.accumulate_pub(gid, Tensor::from_vec_unchecked(&[width], dg));
                }
                if reqs.2 {
                    let mut db = vec![T::ZERO; width];
                    for r in 0..rows {
                        for i in 0..width {
                            db[i] += grad.data()[r * width + i];
                        }
                    }
                    sink.accumulate_pub(bid, Tensor::from_vec_unchecked(&[width], db));
                }
            }),
        ))
    }

    /// Rows of the last axis scaled to unit L2 norm.
    pub fn l2_normalize_last(&self, a: Var) -> Var {
        let eps = T::from_f64(1e-12);
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let width = *shape.last().expect("rank >= 1");
        let rows = va.len() / width;
        let mut out = vec![T::ZERO; va.len()];
        let mut inv_norm = vec![T::ZERO; rows];
        for r in 0..rows {
            let xs = &va.data()[r * width..(r + 1) * width];
            let mut sq = T::ZERO;
            for &x in xs {
                sq += x * x;
            }
            let inv = T::ONE / (sq + eps).sqrt();
            inv_norm[r] = inv;
            for i in 0..width {
                out[r * width + i] = xs[i] * inv;
            }
        }
        let value = Tensor::from_vec_unchecked(&shape, out);
        let y = value.clone();
        self.unary_nn(a, value, move |g| {
            let mut dx = vec![T::ZERO; g.len()];
            for r in 0..rows {
                let ys = &y.data()[r * width..(r + 1) * width];
                let gs = &g.data()[r * width..(r + 1) * width];
                let mut dot = T::ZERO;
                for (yi, gi) in ys.iter().zip(gs.iter()) {
                    dot += *yi * *gi;
                }
                for i in 0..width {
                    dx[r * width + i] = (gs[i] - ys[i] * dot) * inv_norm[r];
                }
            }
            Tensor::from_vec_unchecked(g.shape(), dx)
        })
    }

    /// Mean cross-entropy of row-wise softmax against integer targets.
    pub fn softmax_xent_rows(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let shape = vl.shape().to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::InvalidShape {
                op: "softmax_xent_rows",
                shape,
                reason: format!("want [n,c] logits with n == {} targets", targets.len()),
            });
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Contract(format!("target {t} out of range for {c} classes")));
        }
        let mut probs = vl.to_vec();
        let mut loss = T::ZERO;
        for r in 0..n {
            let row = &mut probs[r * c..(r + 1) * c];
            let lse = log_softmax_row(row);
            loss += -(row[targets[r]] - lse);
            // convert in place to probabilities
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        loss = loss / T::from_f64(n as f64);
        let value = Tensor::scalar(loss);
        let probs = Tensor::from_vec_unchecked(&[n, c], probs);
        let targets = targets.to_vec();
        Ok(self.unary_nn(logits, value, move |g| {
            let scale = g.item() / T::from_f64(n as f64);
            let mut dx = probs.to_vec();
            for (r, &t) in targets.iter().enumerate() {
                dx[r * c + t] = dx[r * c + t] - T::ONE;
            }
            for x in dx.iter_mut() {
                *x = *x * scale;
            }
            Tensor::from_vec_unchecked(&[n, c], dx)
        }))
    }

    /// `[B, n, w] + [B, w]`: adds one vector per batch row across all
    /// tokens (timestep embeddings). Gradient of `b` sums over tokens.
    pub fn add_bcast_rows(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        if sa.len() != 3 || sb.len() != 2 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "add_bcast_rows",
                lhs: sa,
                rhs: sb,
            });
        }
        let (bt, n, w) = (sa[0], sa[1], sa[2]);
        let mut out = va.to_vec();
        for i in 0..bt {
            for t in 0..n {
                let base = (i * n + t) * w;
                for j in 0..w {
                    out[base + j] += vb.data()[i * w + j];
                }
            }
        }
        let value = Tensor::from_vec_unchecked(&sa, out);
        Ok(self.binary_impl(
            a,
            b,
            value,
            |g| g.clone(),
            move |g| {
                let mut acc = vec![T::ZERO; bt * w];
                for i in 0..bt {
                    for t in 0..n {
                        let base = (i * n + t) * w;
                        for j in 0..w {
                            acc[i * w + j] += g.data()[base + j];
                        }
                    }
                }
                Tensor::from_vec_unchecked(&[bt, w], acc)
            },
        ))
    }

    /// `[B, n, w] * [B, w]`: scales every token by its batch row's vector
    /// (adaptive layer-norm modulation).
    pub fn mul_bcast_rows(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        if sa.len() != 3 || sb.len() != 2 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "mul_bcast_rows",
                lhs: sa,
                rhs: sb,
            });
        }
        let (bt, n, w) = (sa[0], sa[1], sa[2]);
        let mut out = va.to_vec();
        for i in 0..bt {
            for t in 0..n {
                let base = (i * n + t) * w;
                for j in 0..w {
                    out[base + j] = out[base + j] * vb.data()[i * w + j];
                }
            }
        }
        let value = Tensor::from_vec_unchecked(&sa, out);
        let (ca, cb) = (va.clone(), vb.clone());
        Ok(self.binary_impl(
            a,
            b,
            value,
            move |g| {
                let mut da = g.to_vec();
                for i in 0..bt {
                    for t in 0..n {
                        let base = (i * n + t) * w;
                        for j in 0..w {
                            da[base + j] = da[base + j] * cb.data()[i * w + j];
                        }
                    }
                }
                Tensor::from_vec_unchecked(g.shape(), da)
            },
            move |g| {
                let mut db = vec![T::ZERO; bt * w];
                for i in 0..bt {
                    for t in 0..n {
                        let base = (i * n + t) * w;
                        for j in 0..w {
                            db[i * w + j] += g.data()[base + j] * ca.data()[base + j];
                        }
                    }
                }
                Tensor::from_vec_unchecked(&[bt, w], db)
            },
        ))
    }

    /// `[B, n, h*dh]` → `[B*h, n, dh]` for multi-head attention.
    pub fn split_heads(&self, a: Var, heads: usize) -> Result<Var> {
        let va = self.value(a);
        let s = va.shape().to_vec();
        if s.len() != 3 || s[2] % heads != 0 {
            return Err(Error::InvalidShape {
                op: "split_heads",
                shape: s,
                reason: format!("rank-3 with width divisible by {heads} required"),
            });
        }
        let (b, n, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let value = split_heads_raw(&va, b, n, heads, dh);
        Ok(self.unary_nn(a, value, move |g| merge_heads_raw(g, b, n, heads, dh)))
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&self, a: Var, heads: usize) -> Result<Var> {
        let va = self.value(a);
        let s = va.shape().to_vec();
        if s.len() != 3 || s[0] % heads != 0 {
            return Err(Error::InvalidShape {
                op: "merge_heads",
                shape: s,
                reason: format!("leading extent divisible by {heads} required"),
            });
        }
        let (bh, n, dh) = (s[0], s[1], s[2]);
        let b = bh / heads;
        let value = merge_heads_raw(&va, b, n, heads, dh);
        Ok(self.unary_nn(a, value, move |g| split_heads_raw(g, b, n, heads, dh)))
    }

    /// Scaled dot-product attention over batched heads:
    /// `q,k,v: [B, n|m, d]` → `[B, n, d]` with softmax over keys.
    pub fn attention(&self, q: Var, k: Var, v: Var, scale: T) -> Result<Var> {
        let kt = self.transpose_last2(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, scale);
        let weights = self.softmax_last(scaled);
        self.matmul(weights, v)
    }

    // small private helpers bridging to graph internals
    fn unary_nn(&self, input: Var, value: Tensor<T>, back: impl Fn(&Tensor<T>) -> Tensor<T> + 'static) -> Var {
        self.unary_impl(input, value, back)
    }

    fn push_nn(
        &self,
        value: Tensor<T>,
        backward: Box<dyn Fn(&Tensor<T>, &mut crate::graph::GradSink<T>)>,
    ) -> Var {
        self.push_with_backward(value, backward)
    }
}

fn softmax_row<T: Scalar>(row: &mut [T]) {
    let mut max = row[0];
    for &x in row.iter() {
        max = max.maximum(x);
    }
    let mut sum = T::ZERO;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::ONE / sum;
    for x in row.iter_mut() {
        *x = *x * inv;
    }
}

/// Log-sum-exp of a row, with max subtraction; leaves the row unchanged.
fn log_softmax_row<T: Scalar>(row: &[T]) -> T {
    let mut max = row[0];
    for &x in row.iter() {
        max = max.maximum(x);
    }
    let mut sum = T::ZERO;
    for &x in row.iter() {
        sum += (x - max).exp();
    }
    max + sum.ln()
}

fn split_heads_raw<T: Scalar>(t: &Tensor<T>, b: usize, n: usize, h: usize, dh: usize) -> Tensor<T> {
    let mut out = vec![T::ZERO; t.len()];
    let src = t.data();
    for bi in 0..b {
        for ni in 0..n {
            for hi in 0..h {
                let s = (bi * n + ni) * h * dh + hi * dh;
                let d = ((bi * h + hi) * n + ni) * dh;
                out[d..d + dh].copy_from_slice(&src[s..s + dh]);
            }
        }
    }
    Tensor::from_vec_unchecked(&[b * h, n, dh], out)
}

fn merge_heads_raw<T: Scalar>(t: &Tensor<T>, b: usize, n: usize, h: usize, dh: usize) -> Tensor<T> {
    let mut out = vec![T::ZERO; t.len()];
    let src = t.data();
    for bi in 0..b {
        for ni in 0..n {
            for hi in 0..h {
                let s = ((bi * h + hi) * n + ni) * dh;
                let d = (bi * n + ni) * h * dh + hi * dh;
                out[d..d + dh].copy_from_slice(&src[s..s + dh]);
            }
        }
    }
    Tensor::from_vec_unchecked(&[b, n, h * dh], out)
}
