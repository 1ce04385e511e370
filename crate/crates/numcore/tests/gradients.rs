//! Finite-difference verification of every differentiable primitive and of
//! random composites, in f64. Analytic gradients from the tape must match
//! central differences (h = 1e-3) to a relative error below 1e-5.

use numcore::gradcheck::{finite_diff_grads, max_rel_error};
use numcore::graph::{Graph, Var};
use numcore::rng::RngStream;
use numcore::tensor::Tensor;

const H: f64 = 1e-3;
const TOL: f64 = 1e-5;

/// Builds a graph with `inputs` as trainable leaves, applies `build`, and
/// checks tape gradients of the scalar output against finite differences.
fn check_grads(
    name: &str,
    inputs: &[Tensor<f64>],
    build: impl Fn(&Graph<f64>, &[Var]) -> Var,
) {
    check_grads_h(name, inputs, H, build);
}

fn check_grads_h(
    name: &str,
    inputs: &[Tensor<f64>],
    h: f64,
    build: impl Fn(&Graph<f64>, &[Var]) -> Var,
) {
    let forward = |ins: &[Tensor<f64>]| -> f64 {
        let g = Graph::<f64>::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone(), true)).collect();
        g.value(build(&g, &vars)).item()
    };

    let g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&g, &vars);
    let grads = g.backward(loss).expect("backward");

    let numeric = finite_diff_grads(forward, inputs, h);
    for (i, num) in numeric.iter().enumerate() {
        let ana = grads.get_or_zeros(vars[i], inputs[i].shape());
        let err = max_rel_error(&ana, num);
        assert!(err < TOL, "{name}: input {i} rel error {err:.3e}");
    }
}

fn randn(rng: &mut RngStream, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal_f64())
}

#[test]
fn grad_elementwise_ops() {
    let mut rng = RngStream::new(100, 0);
    let a = randn(&mut rng, &[3, 4]);
    let b = randn(&mut rng, &[3, 4]);

    check_grads("add", &[a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        g.sum_all(s)
    });
    check_grads("sub", &[a.clone(), b.clone()], |g, v| {
        let s = g.sub(v[0], v[1]).unwrap();
        g.sum_all(s)
    });
    check_grads("mul", &[a.clone(), b.clone()], |g, v| {
        let s = g.mul(v[0], v[1]).unwrap();
        g.sum_all(s)
    });
    check_grads("neg_scale", &[a.clone()], |g, v| {
        let s = g.scale(g.neg(v[0]), 1.7);
        let sq = g.mul(s, s).unwrap();
        g.sum_all(sq)
    });
    check_grads("mean", &[a], |g, v| g.mean_all(v[0]));
}

#[test]
fn grad_broadcast_and_scalar_ops() {
    let mut rng = RngStream::new(101, 0);
    let x = randn(&mut rng, &[2, 3, 4]);
    let bias = randn(&mut rng, &[4]);
    let row = randn(&mut rng, &[3, 4]);
    let s = Tensor::scalar(0.8);

    check_grads("add_bcast_vec", &[x.clone(), bias], |g, v| {
        let s = g.add_bcast(v[0], v[1]).unwrap();
        let sq = g.mul(s, s).unwrap();
        g.sum_all(sq)
    });
    check_grads("add_bcast_mat", &[x.clone(), row], |g, v| {
        let s = g.add_bcast(v[0], v[1]).unwrap();
        let sq = g.mul(s, s).unwrap();
        g.sum_all(sq)
    });
    let per_row = randn(&mut rng, &[2, 4]);
    check_grads("add_bcast_rows", &[x.clone(), per_row.clone()], |g, v| {
        let s = g.add_bcast_rows(v[0], v[1]).unwrap();
        let sq = g.mul(s, s).unwrap();
        g.sum_all(sq)
    });
    check_grads("mul_bcast_rows", &[x.clone(), per_row], |g, v| {
        let s = g.mul_bcast_rows(v[0], v[1]).unwrap();
        let sq = g.mul(s, s).unwrap();
        g.sum_all(sq)
    });
    check_grads("mul_scalar", &[x.clone(), s.clone()], |g, v| {
        let m = g.mul_scalar(v[0], v[1]).unwrap();
        let sq = g.mul(m, m).unwrap();
        g.sum_all(sq)
    });
    check_grads("recip", &[s], |g, v| {
        let r = g.recip(v[0]);
        g.sum_all(r)
    });
}

#[test]
fn grad_matmul_all_forms() {
    let mut rng = RngStream::new(102, 0);
    let a2 = randn(&mut rng, &[3, 4]);
    let b2 = randn(&mut rng, &[4, 2]);
    check_grads("matmul_2x2", &[a2, b2], |g, v| {
        let c = g.matmul(v[0], v[1]).unwrap();
        let sq = g.mul(c, c).unwrap();
        g.sum_all(sq)
    });

    let a3 = randn(&mut rng, &[2, 3, 4]);
    let b_shared = randn(&mut rng, &[4, 5]);
    check_grads("matmul_batched_shared", &[a3.clone(), b_shared], |g, v| {
        let c = g.matmul(v[0], v[1]).unwrap();
        let sq = g.mul(c, c).unwrap();
        g.sum_all(sq)
    });

    let b3 = randn(&mut rng, &[2, 4, 3]);
    check_grads("matmul_batched_both", &[a3, b3], |g, v| {
        let c = g.matmul(v[0], v[1]).unwrap();
        let sq = g.mul(c, c).unwrap();
        g.sum_all(sq)
    });
}

#[test]
fn grad_structural_ops() {
    let mut rng = RngStream::new(103, 0);
    let a = randn(&mut rng, &[2, 3, 4]);
    let b = randn(&mut rng, &[2, 2, 4]);

    check_grads("transpose", &[a.clone()], |g, v| {
        let t = g.transpose_last2(v[0]).unwrap();
        let sq = g.mul(t, t).unwrap();
        g.sum_all(sq)
    });
    check_grads("reshape", &[a.clone()], |g, v| {
        let r = g.reshape(v[0], &[6, 4]).unwrap();
        let sq = g.mul(r, r).unwrap();
        g.sum_all(sq)
    });
    check_grads("concat_narrow", &[a.clone(), b], |g, v| {
        let cat = g.concat(&[v[0], v[1]], 1).unwrap();
        let cut = g.narrow(cat, 1, 1, 3).unwrap();
        let sq = g.mul(cut, cut).unwrap();
        g.sum_all(sq)
    });
    check_grads("heads_roundtrip", &[a], |g, v| {
        let s = g.split_heads(v[0], 2).unwrap();
        let m = g.merge_heads(s, 2).unwrap();
        let sq = g.mul(m, m).unwrap();
        g.sum_all(sq)
    });
}

#[test]
fn grad_activations_and_norms() {
    let mut rng = RngStream::new(104, 0);
    let x = randn(&mut rng, &[3, 8]);
    let gain = randn(&mut rng, &[8]).map(|v| 1.0 + 0.1 * v);
    let bias = randn(&mut rng, &[8]);

    check_grads("gelu", &[x.clone()], |g, v| {
        let y = g.gelu(v[0]);
        let sq = g.mul(y, y).unwrap();
        g.sum_all(sq)
    });
    check_grads("softmax", &[x.clone()], |g, v| {
        let y = g.softmax_last(v[0]);
        let sq = g.mul(y, y).unwrap();
        g.sum_all(sq)
    });
    check_grads("layer_norm", &[x.clone(), gain, bias], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        let sq = g.mul(y, y).unwrap();
        g.sum_all(sq)
    });
    check_grads("l2_normalize", &[x.clone()], |g, v| {
        let y = g.l2_normalize_last(v[0]);
        // weight rows asymmetrically so the check is not trivially zero
        let w = g.constant(Tensor::from_fn(&[3, 8], |i| 0.2 + (i % 5) as f64 * 0.15));
        let p = g.mul(y, w).unwrap();
        g.sum_all(p)
    });
    check_grads("xent", &[x], |g, v| {
        g.softmax_xent_rows(v[0], &[1, 4, 7]).unwrap()
    });
}

#[test]
fn grad_attention_composite() {
    let mut rng = RngStream::new(105, 0);
    let q = randn(&mut rng, &[2, 3, 4]);
    let k = randn(&mut rng, &[2, 5, 4]);
    let v = randn(&mut rng, &[2, 5, 4]);
    check_grads("attention", &[q, k, v], |g, vars| {
        let att = g.attention(vars[0], vars[1], vars[2], 0.5).unwrap();
        let sq = g.mul(att, att).unwrap();
        g.sum_all(sq)
    });
}

#[test]
fn grad_two_layer_net() {
    // random 2-layer net: max relative error < 1e-5 against central
    // differences, per the gradient-correctness contract.
    let mut rng = RngStream::new(106, 0);
    let x = randn(&mut rng, &[4, 6]);
    let w1 = randn(&mut rng, &[6, 8]).scale(0.5);
    let b1 = randn(&mut rng, &[8]).scale(0.1);
    let w2 = randn(&mut rng, &[8, 3]).scale(0.5);
    let b2 = randn(&mut rng, &[3]).scale(0.1);
    let target = randn(&mut rng, &[4, 3]);

    check_grads("two_layer", &[x, w1, b1, w2, b2, target], |g, v| {
        let h = g.matmul(v[0], v[1]).unwrap();
        let h = g.add_bcast(h, v[2]).unwrap();
        let h = g.gelu(h);
        let o = g.matmul(h, v[3]).unwrap();
        let o = g.add_bcast(o, v[4]).unwrap();
        g.mse(o, v[5]).unwrap()
    });
}

#[test]
fn grad_four_layer_transformer_style_composite() {
    // A miniature pre-norm block stack exercising matmul, attention,
    // layer norm, GELU, residuals and normalization in one graph.
    let mut rng = RngStream::new(107, 0);
    let x = randn(&mut rng, &[2, 4, 6]);
    let wq = randn(&mut rng, &[6, 6]).scale(0.4);
    let wk = randn(&mut rng, &[6, 6]).scale(0.4);
    let wv = randn(&mut rng, &[6, 6]).scale(0.4);
    let w1 = randn(&mut rng, &[6, 12]).scale(0.4);
    let w2 = randn(&mut rng, &[12, 6]).scale(0.4);
    let gain = Tensor::ones(&[6]);
    let bias = Tensor::zeros(&[6]);

    // h = 1e-4 here: central-difference truncation is O(h^2 * f''') and the
    // stacked nonlinearities push the third derivative high enough that
    // h = 1e-3 leaves ~2e-4 of quotient error on an otherwise exact gradient.
    check_grads_h(
        "mini_transformer",
        &[x, wq, wk, wv, w1, w2, gain, bias],
        1e-4,
        |g, v| {
            let (x, wq, wk, wv, w1, w2, gain, bias) =
                (v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
            let xn = g.layer_norm(x, gain, bias, 1e-5).unwrap();
            let q = g.matmul(xn, wq).unwrap();
            let k = g.matmul(xn, wk).unwrap();
            let val = g.matmul(xn, wv).unwrap();
            let att = g.attention(q, k, val, 1.0 / (6.0f64).sqrt()).unwrap();
            let x1 = g.add(x, att).unwrap();
            let x1n = g.layer_norm(x1, gain, bias, 1e-5).unwrap();
            let h = g.gelu(g.matmul(x1n, w1).unwrap());
            let m = g.matmul(h, w2).unwrap();
            let x2 = g.add(x1, m).unwrap();
            let y = g.l2_normalize_last(x2);
            let wgt = g.constant(Tensor::from_fn(&[2, 4, 6], |i| ((i % 7) as f64 - 3.0) * 0.3));
            let p = g.mul(y, wgt).unwrap();
            g.sum_all(p)
        },
    );
}
