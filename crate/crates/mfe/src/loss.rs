//! Contrastive objectives: the symmetric InfoNCE pair loss and the
//! five-term alignment objective with ablation flags.

use numcore::graph::{Graph, Var};

use crate::params::Bound;
use crate::{MfeError, Result};

pub const TEMP_MIN: f32 = 0.01;
pub const TEMP_MAX: f32 = 1.0;

/// Symmetric InfoNCE between row-aligned, unit-normalized embedding
/// batches: logits are the scaled cosine similarities against in-batch
/// negatives, and the loss averages both retrieval directions.
pub fn clip_loss(g: &Graph<f32>, a: Var, b: Var, temperature: Var) -> Result<Var> {
    let sa = g.shape(a);
    let sb = g.shape(b);
    if sa != sb || sa.len() != 2 {
        return Err(MfeError::Config(format!(
            "clip_loss expects matching [batch, dim] inputs, got {sa:?} vs {sb:?}"
        )));
    }
    let batch = sa[0];
    for (name, v) in [("a", a), ("b", b)] {
        let t = g.value(v);
        let d = sa[1];
        for r in 0..batch {
            let norm: f32 = t.data()[r * d..(r + 1) * d].iter().map(|x| x * x).sum::<f32>().sqrt();
            if (norm - 1.0).abs() > 1e-3 {
                return Err(MfeError::Contract(format!(
                    "clip_loss input {name} row {r} has norm {norm}, expected unit"
                )));
            }
        }
    }

    let bt = g.transpose_last2(b)?;
    let sims = g.matmul(a, bt)?;
    let inv_temp = g.recip(temperature);
    let logits = g.mul_scalar(sims, inv_temp)?;
    let targets: Vec<usize> = (0..batch).collect();
    let forward = g.softmax_xent_rows(logits, &targets)?;
    let logits_t = g.transpose_last2(logits)?;
    let backward = g.softmax_xent_rows(logits_t, &targets)?;
    Ok(g.scale(g.add(forward, backward)?, 0.5))
}

/// Which alignment pathways stay enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LossFlags {
    /// Brain↔video terms (fv, ev).
    pub vision: bool,
    /// Brain↔text terms (ft, et).
    pub text: bool,
    /// The fMRI↔EEG term (fe).
    pub across: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self {
            vision: true,
            text: true,
            across: true,
        }
    }
}

impl LossFlags {
    pub fn without_vision() -> Self {
        Self { vision: false, ..Default::default() }
    }
    pub fn without_text() -> Self {
        Self { text: false, ..Default::default() }
    }
    pub fn without_across() -> Self {
        Self { across: false, ..Default::default() }
    }
}

/// Named value of one term in the breakdown.
#[derive(Clone, Debug)]
pub struct LossTerm {
    pub name: &'static str,
    pub value: f32,
}

/// The alignment objective: fv + ft + ev + et + fe over whichever pathways
/// the flags and available modalities permit. Returns the scalar node plus
/// the evaluated per-term breakdown.
#[allow(clippy::too_many_arguments)]
pub fn total_contrastive_loss(
    g: &Graph<f32>,
    p: &Bound,
    c_f: Option<Var>,
    c_e: Option<Var>,
    c_v: Var,
    c_t: Var,
    flags: LossFlags,
) -> Result<(Var, Vec<LossTerm>)> {
    let temperature = p.var("temperature")?;
    let mut terms: Vec<(&'static str, Var)> = Vec::new();

    if flags.vision {
        if let Some(cf) = c_f {
            terms.push(("fv", clip_loss(g, cf, c_v, temperature)?));
        }
        if let Some(ce) = c_e {
            terms.push(("ev", clip_loss(g, ce, c_v, temperature)?));
        }
    }
    if flags.text {
        if let Some(cf) = c_f {
            terms.push(("ft", clip_loss(g, cf, c_t, temperature)?));
        }
        if let Some(ce) = c_e {
            terms.push(("et", clip_loss(g, ce, c_t, temperature)?));
        }
    }
    if flags.across {
        if let (Some(cf), Some(ce)) = (c_f, c_e) {
            terms.push(("fe", clip_loss(g, cf, ce, temperature)?));
        }
    }

    if terms.is_empty() {
        return Err(MfeError::Contract(
            "all contrastive terms disabled; nothing to optimize".into(),
        ));
    }

    let mut total = terms[0].1;
    for (_, t) in terms.iter().skip(1) {
        total = g.add(total, *t)?;
    }
    let breakdown = terms
        .iter()
        .map(|(name, v)| LossTerm {
            name,
            value: g.value(*v).item(),
        })
        .collect();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use numcore::rng::RngStream;
    use numcore::Tensor;

    fn normalize_rows(t: Tensor<f32>) -> Tensor<f32> {
        let d = *t.shape().last().unwrap();
        let rows = t.len() / d;
        let mut out = t.to_vec();
        for r in 0..rows {
            let norm: f32 = out[r * d..(r + 1) * d].iter().map(|x| x * x).sum::<f32>().sqrt();
            for x in out[r * d..(r + 1) * d].iter_mut() {
                *x /= norm.max(1e-12);
            }
        }
        Tensor::from_vec(t.shape(), out).unwrap()
    }

    fn temp_store(value: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("temperature", Tensor::scalar(value), true);
        s
    }

    #[test]
    fn batch_of_one_is_zero() {
        let store = temp_store(0.07);
        let g = Graph::new();
        let p = store.bind(&g);
        let a = g.constant(normalize_rows(Tensor::from_fn(&[1, 8], |i| i as f32 + 1.0)));
        let b = g.constant(normalize_rows(Tensor::from_fn(&[1, 8], |i| 8.0 - i as f32)));
        let loss = clip_loss(&g, a, b, p.var("temperature").unwrap()).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn orthogonal_identical_pair_closed_form() {
        // a == b with two orthogonal rows: per row CE = ln(1 + e^{−1/τ}).
        // At τ = 0.5 the value sits where f32 is precise; check it tightly.
        let check = |tau: f32, tol: f64| {
            let store = temp_store(tau);
            let g = Graph::new();
            let p = store.bind(&g);
            let rows = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
            let a = g.constant(rows.clone());
            let b = g.constant(rows);
            let loss = g
                .value(clip_loss(&g, a, b, p.var("temperature").unwrap()).unwrap())
                .item() as f64;
            let expect = (-1.0f64 / tau as f64).exp().ln_1p();
            assert!(
                (loss - expect).abs() < tol,
                "τ={tau}: loss {loss:.4e} vs closed form {expect:.4e}"
            );
        };
        check(0.5, 1e-6);
        // τ = 0.07 puts the value ≈ 6.1e-7, at the resolution limit of f32
        // accumulation; only the magnitude is meaningful there.
        check(0.07, 5e-7);
    }

    #[test]
    fn random_batch_concentrates_near_ln_n() {
        let n = 64;
        let mut rng = RngStream::new(21, 0);
        let store = temp_store(1.0);
        let g = Graph::new();
        let p = store.bind(&g);
        let a = g.constant(normalize_rows(Tensor::from_fn(&[n, 32], |_| rng.normal_f64() as f32)));
        let b = g.constant(normalize_rows(Tensor::from_fn(&[n, 32], |_| rng.normal_f64() as f32)));
        let loss = g
            .value(clip_loss(&g, a, b, p.var("temperature").unwrap()).unwrap())
            .item() as f64;
        let ln_n = (n as f64).ln();
        assert!((loss - ln_n).abs() < 0.15, "loss {loss:.3} vs ln n {ln_n:.3}");
    }

    #[test]
    fn symmetry_exact() {
        let mut rng = RngStream::new(23, 0);
        let store = temp_store(0.1);
        let g = Graph::new();
        let p = store.bind(&g);
        let av = normalize_rows(Tensor::from_fn(&[6, 16], |_| rng.normal_f64() as f32));
        let bv = normalize_rows(Tensor::from_fn(&[6, 16], |_| rng.normal_f64() as f32));
        let a = g.constant(av);
        let b = g.constant(bv);
        let t = p.var("temperature").unwrap();
        let ab = g.value(clip_loss(&g, a, b, t).unwrap()).item();
        let ba = g.value(clip_loss(&g, b, a, t).unwrap()).item();
        assert_eq!(ab, ba);
    }

    #[test]
    fn non_normalized_rows_rejected() {
        let store = temp_store(0.07);
        let g = Graph::new();
        let p = store.bind(&g);
        let a = g.constant(Tensor::from_fn(&[2, 4], |i| i as f32));
        let b = g.constant(normalize_rows(Tensor::from_fn(&[2, 4], |i| 1.0 + i as f32)));
        assert!(clip_loss(&g, a, b, p.var("temperature").unwrap()).is_err());
    }

    #[test]
    fn breakdown_sums_to_total_and_flags_drop_terms() {
        let mut rng = RngStream::new(29, 0);
        let store = temp_store(0.5);
        let g = Graph::new();
        let p = store.bind(&g);
        let mk = |rng: &mut RngStream| {
            normalize_rows(Tensor::from_fn(&[4, 8], |_| rng.normal_f64() as f32))
        };
        let c_f = g.constant(mk(&mut rng));
        let c_e = g.constant(mk(&mut rng));
        let c_v = g.constant(mk(&mut rng));
        let c_t = g.constant(mk(&mut rng));

        let (total, terms) =
            total_contrastive_loss(&g, &p, Some(c_f), Some(c_e), c_v, c_t, LossFlags::default())
                .unwrap();
        assert_eq!(terms.len(), 5);
        let sum: f32 = terms.iter().map(|t| t.value).sum();
        assert!((g.value(total).item() - sum).abs() < 1e-6);

        let (_, wo_across) = total_contrastive_loss(
            &g,
            &p,
            Some(c_f),
            Some(c_e),
            c_v,
            c_t,
            LossFlags::without_across(),
        )
        .unwrap();
        assert_eq!(wo_across.len(), 4);
        assert!(wo_across.iter().all(|t| t.name != "fe"));

        let err = total_contrastive_loss(
            &g,
            &p,
            Some(c_f),
            Some(c_e),
            c_v,
            c_t,
            LossFlags { vision: false, text: false, across: false },
        );
        assert!(err.is_err());
    }
}
