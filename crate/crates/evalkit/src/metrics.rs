//! Frame- and clip-level quality metrics: PSNR, SSIM, N-way top-K retrieval,
//! temporal consistency, and the Fréchet distance between Gaussian fits of
//! embedding sets.

use numcore::linalg::eigh_symmetric;
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::{EvalError, Result};

/// Cap reported when inputs are identical (zero MSE).
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10(1/MSE)` over same-shape tensors in `[0, 1]`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(EvalError::Shape(format!(
            "psnr inputs {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut mse = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        let d = x as f64 - y as f64;
        mse += d * d;
    }
    mse /= a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Rec. 601 luma conversion for color frames `[h, w, 3]`; grayscale
/// `[h, w]` passes through.
fn to_luma(frame: &Tensor<f32>) -> Result<(Vec<f64>, usize, usize)> {
    match frame.shape() {
        [h, w] => Ok((frame.data().iter().map(|&v| v as f64).collect(), *h, *w)),
        [h, w, 3] => {
            let mut out = vec![0.0f64; h * w];
            for (i, px) in frame.data().chunks_exact(3).enumerate() {
                out[i] = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            }
            Ok((out, *h, *w))
        }
        other => Err(EvalError::Shape(format!(
            "ssim frame must be [h,w] or [h,w,3], got {other:?}"
        ))),
    }
}

const SSIM_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean local SSIM with a 7×7 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1.0. Color inputs are converted by fixed luma
/// weights.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(EvalError::Shape(format!(
            "ssim inputs {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (xa, h, w) = to_luma(a)?;
    let (xb, _, _) = to_luma(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(EvalError::Shape(format!(
            "frame {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"
        )));
    }

    // normalized Gaussian window
    let mut win = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            win[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in win.iter_mut() {
        *v /= sum;
    }

    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for oy in 0..=(h - SSIM_WINDOW) {
        for ox in 0..=(w - SSIM_WINDOW) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let g = win[wy * SSIM_WINDOW + wx];
                    let idx = (oy + wy) * w + ox + wx;
                    mu_a += g * xa[idx];
                    mu_b += g * xb[idx];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let g = win[wy * SSIM_WINDOW + wx];
                    let idx = (oy + wy) * w + ox + wx;
                    let da = xa[idx] - mu_a;
                    let db = xb[idx] - mu_b;
                    var_a += g * da * da;
                    var_b += g * db * db;
                    cov += g * da * db;
                }
            }
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na <= 0.0 || nb <= 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// N-way top-K retrieval accuracy. Row i of `gallery` is the positive for
/// row i of `queries`; each trial samples N−1 distractors uniformly without
/// replacement, ranks by cosine similarity (ties break toward the lower
/// gallery index), and scores a hit when the positive lands in the top K.
pub fn nway_topk(
    queries: &Tensor<f32>,
    gallery: &Tensor<f32>,
    n_way: usize,
    top_k: usize,
    trials: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if queries.shape() != gallery.shape() || queries.rank() != 2 {
        return Err(EvalError::Shape(format!(
            "queries {:?} vs gallery {:?}",
            queries.shape(),
            gallery.shape()
        )));
    }
    let n = queries.shape()[0];
    let d = queries.shape()[1];
    if n_way > n {
        return Err(EvalError::Contract(format!(
            "{n_way}-way retrieval over only {n} items"
        )));
    }
    if n_way == 0 || top_k == 0 || trials == 0 {
        return Err(EvalError::Contract("degenerate retrieval setup".into()));
    }

    let mut hits = 0usize;
    let mut total = 0usize;
    for q in 0..n {
        let qv = &queries.data()[q * d..(q + 1) * d];
        let positive_sim = cosine(qv, &gallery.data()[q * d..(q + 1) * d]);
        for _ in 0..trials {
            // sample N−1 distinct distractors ≠ q
            let mut pool = rng.sample_without_replacement(n - 1, n_way - 1);
            for idx in pool.iter_mut() {
                if *idx >= q {
                    *idx += 1;
                }
            }
            // rank of the positive among the candidate set; ties resolve
            // toward the lower gallery index
            let mut outranked = 0usize;
            for &j in &pool {
                let s = cosine(qv, &gallery.data()[j * d..(j + 1) * d]);
                if s > positive_sim || (s == positive_sim && j < q) {
                    outranked += 1;
                }
            }
            hits += (outranked < top_k) as usize;
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Mean cosine similarity between embeddings of consecutive frames.
/// `frame_embeddings` is `[frames, d]` with frames ≥ 2.
pub fn temporal_consistency(frame_embeddings: &Tensor<f32>) -> Result<f64> {
    let shape = frame_embeddings.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(EvalError::Contract(format!(
            "temporal consistency needs ≥ 2 frame embeddings, got {shape:?}"
        )));
    }
    let (n, d) = (shape[0], shape[1]);
    let mut acc = 0.0f64;
    for f in 0..n - 1 {
        acc += cosine(
            &frame_embeddings.data()[f * d..(f + 1) * d],
            &frame_embeddings.data()[(f + 1) * d..(f + 2) * d],
        );
    }
    Ok(acc / (n - 1) as f64)
}

/// Fréchet distance between Gaussian fits of two embedding sets (`n×d`,
/// n ≥ 2): `‖μa−μb‖² + Tr(Σa + Σb − 2(Σa Σb)^{1/2})`, the matrix square
/// root taken through the eigendecomposition of the symmetrized product.
pub fn frechet_distance(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    for t in [a, b] {
        if t.rank() != 2 || t.shape()[0] < 2 {
            return Err(EvalError::Contract(format!(
                "Fréchet distance needs n ≥ 2 embeddings, got {:?}",
                t.shape()
            )));
        }
    }
    if a.shape()[1] != b.shape()[1] {
        return Err(EvalError::Shape(format!(
            "embedding widths differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let d = a.shape()[1];
    let (mu_a, cov_a) = gaussian_fit(a);
    let (mu_b, cov_b) = gaussian_fit(b);
    if !cov_a.iter().chain(cov_b.iter()).all(|v| v.is_finite()) {
        return Err(EvalError::Contract("non-finite covariance".into()));
    }

    let mut mean_term = 0.0;
    for i in 0..d {
        let diff = mu_a[i] - mu_b[i];
        mean_term += diff * diff;
    }

    // √Σa via eigendecomposition
    let (vals_a, vecs_a) = eigh_symmetric(&cov_a, d);
    let mut sqrt_a = vec![0.0f64; d * d];
    for r in 0..d {
        let s = vals_a[r].max(0.0).sqrt();
        for i in 0..d {
            for j in 0..d {
                sqrt_a[i * d + j] += s * vecs_a[r * d + i] * vecs_a[r * d + j];
            }
        }
    }
    // M = √Σa · Σb · √Σa is symmetric PSD with the same spectrum as Σa·Σb
    let tmp = matmul_sq(&sqrt_a, &cov_b, d);
    let m = matmul_sq(&tmp, &sqrt_a, d);
    let (vals_m, _) = eigh_symmetric(&m, d);
    let trace_sqrt: f64 = vals_m.iter().map(|&v| v.max(0.0).sqrt()).sum();

    let trace_a: f64 = (0..d).map(|i| cov_a[i * d + i]).sum();
    let trace_b: f64 = (0..d).map(|i| cov_b[i * d + i]).sum();
    Ok((mean_term + trace_a + trace_b - 2.0 * trace_sqrt).max(0.0))
}

fn gaussian_fit(x: &Tensor<f32>) -> (Vec<f64>, Vec<f64>) {
    let n = x.shape()[0];
    let d = x.shape()[1];
    let mut mu = vec![0.0f64; d];
    for r in 0..n {
        for j in 0..d {
            mu[j] += x.data()[r * d + j] as f64;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; d * d];
    for r in 0..n {
        for i in 0..d {
            let di = x.data()[r * d + i] as f64 - mu[i];
            for j in i..d {
                let dj = x.data()[r * d + j] as f64 - mu[j];
                cov[i * d + j] += di * dj;
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
        cov[i * d + i] += 1e-6; // regularization
    }
    (mu, cov)
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    numcore::linalg::matmul_square(a, b, n)
}
