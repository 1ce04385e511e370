//! The multi-modal fusion encoder: modality tokenizers feeding transformer
//! stacks arranged per fusion variant, class tokens for contrastive
//! alignment, and the tokenwise fusion MLP producing the unified brain
//! representation.
//!
//! All five variants are built to comparable trainable-parameter budgets:
//! depth allocations follow the variant structure and the MLP hidden width
//! of the variant's stack absorbs the residual difference.

use serde::{Deserialize, Serialize};

use numcore::graph::{Graph, Var};
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::params::{Bound, ParamStore};
use crate::tokenizer::{Modality, TokenizerSpec};
use crate::transformer::{block_forward, block_param_count, init_block, stack_forward};
use crate::{MfeError, Result};

/// Fusion architecture of the encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionVariant {
    /// One transformer over the concatenated token streams.
    Joint,
    /// Per-modality transformers, then a joint transformer.
    TwoStage,
    /// Per-modality stacks whose blocks cross-attend to the other modality.
    CrossAttn,
    /// Unequal token counts at doubled feature width, spatially concatenated.
    SpatialCat { fmri_tokens: usize, eeg_tokens: usize },
    /// Fully independent stacks; fusion deferred to the fusion MLP.
    DualFusion,
}

impl FusionVariant {
    pub fn label(&self) -> String {
        match self {
            FusionVariant::Joint => "joint".into(),
            FusionVariant::TwoStage => "two-stage".into(),
            FusionVariant::CrossAttn => "cross-attn".into(),
            FusionVariant::SpatialCat { fmri_tokens, eeg_tokens } => {
                format!("spatialcat-f{fmri_tokens}-e{eeg_tokens}")
            }
            FusionVariant::DualFusion => "dual-fusion".into(),
        }
    }
}

/// Which brain modalities the encoder consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModalityMode {
    Both,
    FmriOnly,
    EegOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: FusionVariant,
    pub modality: ModalityMode,
    /// Depth budget unit: per-stack layers of the dual-transformer layout.
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    /// Spatial tokens per modality (class token excluded).
    pub token_count: usize,
    /// Contrastive embedding width.
    pub embed_dim: usize,
    pub voxels: usize,
    pub fmri_frames: usize,
    pub eeg_channels: usize,
    pub eeg_samples: usize,
    pub frames_per_clip: usize,
    pub n_classes: usize,
    pub init_seed: u64,
}

impl EncoderConfig {
    /// Desk-scale default, CPU-trainable in minutes.
    pub fn desk(synth: &synthdata::SynthConfig) -> Self {
        Self {
            variant: FusionVariant::DualFusion,
            modality: ModalityMode::Both,
            layers: 4,
            hidden_dim: 128,
            heads: 4,
            token_count: 32,
            embed_dim: 128,
            voxels: synth.voxels,
            fmri_frames: 5,
            eeg_channels: synth.eeg_channels,
            eeg_samples: synth.eeg_samples,
            frames_per_clip: synth.frames_per_clip,
            n_classes: synth.n_classes,
            init_seed: 0xE0C0DE,
        }
    }

    /// The full-scale geometry: 12 layers, hidden 2048, 226 spatial tokens
    /// plus one class token per modality. Used for shape verification only.
    pub fn fullscale() -> Self {
        let synth = synthdata::SynthConfig::fullscale(0);
        Self {
            layers: 12,
            hidden_dim: 2048,
            heads: 16,
            token_count: 226,
            embed_dim: 2048,
            ..Self::desk(&synth)
        }
    }

    /// Tokens after adding the class token.
    pub fn token_length(&self) -> usize {
        self.token_count + 1
    }

    /// The three unequal-split presets, scaled from the full-scale splits
    /// (f113/e113, f34/e192, f24/e202 out of 226) onto this token budget.
    pub fn spatialcat_splits(&self) -> Vec<(usize, usize)> {
        let total = self.token_count;
        let scale = |f: usize| ((f * total) as f64 / 226.0).round().max(1.0) as usize;
        [(113, 113), (34, 192), (24, 202)]
            .iter()
            .map(|&(f, _)| {
                let ft = scale(f).min(total - 1);
                (ft, total - ft)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim % self.heads != 0 {
            return Err(MfeError::Config(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if let FusionVariant::SpatialCat { fmri_tokens, eeg_tokens } = self.variant {
            if fmri_tokens + eeg_tokens != self.token_count {
                return Err(MfeError::Config(format!(
                    "SpatialCat split {}+{} must keep the halved total token count {}",
                    fmri_tokens, eeg_tokens, self.token_count
                )));
            }
        }
        Ok(())
    }
}

/// Concrete stack layout derived from config + budget matching.
#[derive(Clone, Debug)]
pub struct StackPlan {
    pub stack_width: usize,
    pub mlp_hidden: usize,
    pub fmri_tokens: usize,
    pub eeg_tokens: usize,
    pub per_modality_layers: usize,
    pub joint_layers: usize,
    pub cross: bool,
}

impl StackPlan {
    fn block_count(&self) -> usize {
        2 * self.per_modality_layers + self.joint_layers
    }
}

fn base_plan(cfg: &EncoderConfig) -> StackPlan {
    let d = cfg.hidden_dim;
    let l = cfg.layers;
    match cfg.variant {
        FusionVariant::DualFusion => StackPlan {
            stack_width: d,
            mlp_hidden: 4 * d,
            fmri_tokens: cfg.token_count,
            eeg_tokens: cfg.token_count,
            per_modality_layers: l,
            joint_layers: 0,
            cross: false,
        },
        FusionVariant::Joint => StackPlan {
            stack_width: d,
            mlp_hidden: 4 * d,
            fmri_tokens: cfg.token_count,
            eeg_tokens: cfg.token_count,
            per_modality_layers: 0,
            joint_layers: 2 * l,
            cross: false,
        },
        FusionVariant::TwoStage => {
            let per = (l / 2).max(1);
            StackPlan {
                stack_width: d,
                mlp_hidden: 4 * d,
                fmri_tokens: cfg.token_count,
                eeg_tokens: cfg.token_count,
                per_modality_layers: per,
                joint_layers: (2 * l).saturating_sub(2 * per).max(1),
                cross: false,
            }
        }
        FusionVariant::CrossAttn => StackPlan {
            stack_width: d,
            mlp_hidden: 4 * d,
            fmri_tokens: cfg.token_count,
            eeg_tokens: cfg.token_count,
            per_modality_layers: ((3 * l + 2) / 4).max(1),
            joint_layers: 0,
            cross: true,
        },
        FusionVariant::SpatialCat { fmri_tokens, eeg_tokens } => StackPlan {
            stack_width: 2 * d,
            mlp_hidden: 2 * d,
            fmri_tokens,
            eeg_tokens,
            per_modality_layers: 0,
            joint_layers: (l / 2).max(1),
            cross: false,
        },
    }
}

fn tokenizer_specs(cfg: &EncoderConfig, plan: &StackPlan) -> (TokenizerSpec, TokenizerSpec) {
    (
        TokenizerSpec {
            modality: Modality::Fmri,
            tokens: plan.fmri_tokens,
            extent: cfg.voxels,
            rows: cfg.fmri_frames,
            width: plan.stack_width,
        },
        TokenizerSpec {
            modality: Modality::Eeg,
            tokens: plan.eeg_tokens,
            extent: cfg.eeg_samples,
            rows: cfg.eeg_channels,
            width: plan.stack_width,
        },
    )
}

/// Trainable parameter count of a plan, analytically.
fn plan_param_count(cfg: &EncoderConfig, plan: &StackPlan) -> usize {
    let (tf, te) = tokenizer_specs(cfg, plan);
    let w = plan.stack_width;
    let d = cfg.hidden_dim;
    let e = cfg.embed_dim;
    let mut total = 0usize;
    match cfg.modality {
        ModalityMode::Both => {
            total += tf.param_count() + te.param_count();
            total += 2 * w; // class tokens
            total += 2 * e * w; // two contrastive heads (w_cls -> e)
        }
        ModalityMode::FmriOnly => {
            total += tf.param_count() + w + e * w;
        }
        ModalityMode::EegOnly => {
            total += te.param_count() + w + e * w;
        }
    }
    let blocks = match cfg.modality {
        ModalityMode::Both => plan.block_count(),
        // single-modality drops one per-modality stack
        _ => plan.per_modality_layers + plan.joint_layers,
    };
    total += blocks * block_param_count(w, plan.mlp_hidden, plan.cross);
    // fusion MLP ψ: 2d -> 2d -> d, tokenwise
    total += 2 * d * 2 * d + 2 * d + 2 * d * d + d;
    // aggregation module φ: one block at embed width + learned query
    total += block_param_count(e, 4 * e, false) + e;
    // temperature
    total += 1;
    total
}

/// Budget-matches `plan` to `target` trainable parameters by adjusting the
/// stack's MLP hidden width (granularity 8).
fn tune_to_budget(cfg: &EncoderConfig, mut plan: StackPlan, target: usize) -> StackPlan {
    let blocks = plan.block_count().max(1);
    let per_unit = 2 * plan.stack_width + 1; // d(count)/d(mlp_hidden) per block
    let current = plan_param_count(cfg, &plan) as i64;
    let delta = target as i64 - current;
    let adjust = delta / (blocks as i64 * per_unit as i64);
    let hidden = plan.mlp_hidden as i64 + adjust;
    let hidden = ((hidden / 8) * 8).max(16) as usize;
    plan.mlp_hidden = hidden;
    plan
}

pub fn budget_target(cfg: &EncoderConfig) -> usize {
    let reference = EncoderConfig {
        variant: FusionVariant::DualFusion,
        modality: ModalityMode::Both,
        ..cfg.clone()
    };
    let plan = base_plan(&reference);
    plan_param_count(&reference, &plan)
}

/// Final plan for a config: structural layout, then budget tuning toward the
/// dual-fusion reference (skipped for single-modality encoders, which are
/// deliberately half-sized).
pub fn stack_plan(cfg: &EncoderConfig) -> StackPlan {
    let plan = base_plan(cfg);
    if cfg.modality != ModalityMode::Both {
        return plan;
    }
    tune_to_budget(cfg, plan, budget_target(cfg))
}

/// Token streams and embeddings produced by one forward pass.
pub struct EncodeOut {
    /// fMRI latent tokens (layout depends on the variant).
    pub z_f: Option<Var>,
    /// EEG latent tokens.
    pub z_e: Option<Var>,
    /// Normalized contrastive embedding of the fMRI class token.
    pub c_f: Option<Var>,
    /// Normalized contrastive embedding of the EEG class token.
    pub c_e: Option<Var>,
    /// Unified brain representation, `[batch, token_count, hidden_dim]`.
    pub z_b: Var,
}

pub struct EncoderModel {
    pub config: EncoderConfig,
    pub plan: StackPlan,
    pub fmri_tokenizer: TokenizerSpec,
    pub eeg_tokenizer: TokenizerSpec,
    pub store: ParamStore,
}

impl EncoderModel {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let plan = stack_plan(&config);
        let (tf, te) = tokenizer_specs(&config, &plan);
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(config.init_seed, 0);
        init_params(&config, &plan, &tf, &te, &mut store, &mut rng);
        Ok(Self {
            config,
            plan,
            fmri_tokenizer: tf,
            eeg_tokenizer: te,
            store,
        })
    }

    /// Rebuilds a model around restored parameters.
    pub fn from_store(config: EncoderConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let plan = stack_plan(&config);
        let (tf, te) = tokenizer_specs(&config, &plan);
        Ok(Self {
            config,
            plan,
            fmri_tokenizer: tf,
            eeg_tokenizer: te,
            store,
        })
    }

    pub fn trainable_params(&self) -> usize {
        self.store.trainable_params()
    }

    fn uses_fmri(&self) -> bool {
        self.config.modality != ModalityMode::EegOnly
    }

    fn uses_eeg(&self) -> bool {
        self.config.modality != ModalityMode::FmriOnly
    }

    /// Forward pass over pre-sliced token slabs (see
    /// [`TokenizerSpec::slabs`]).
    pub fn forward(
        &self,
        g: &Graph<f32>,
        p: &Bound,
        fmri_slabs: Option<Var>,
        eeg_slabs: Option<Var>,
    ) -> Result<EncodeOut> {
        let heads = self.config.heads;
        let batch = match (&fmri_slabs, &eeg_slabs) {
            (Some(v), _) => g.shape(*v)[0],
            (_, Some(v)) => g.shape(*v)[0],
            _ => return Err(MfeError::Config("no modality input provided".into())),
        };

        let tok_f = match (self.uses_fmri(), fmri_slabs) {
            (true, Some(slabs)) => Some(self.fmri_tokenizer.embed(g, p, "tok.fmri", slabs)?),
            (true, None) => return Err(MfeError::Config("encoder expects fMRI input".into())),
            (false, _) => None,
        };
        let tok_e = match (self.uses_eeg(), eeg_slabs) {
            (true, Some(slabs)) => Some(self.eeg_tokenizer.embed(g, p, "tok.eeg", slabs)?),
            (true, None) => return Err(MfeError::Config("encoder expects EEG input".into())),
            (false, _) => None,
        };

        let cls = |name: &str| -> Result<Var> {
            let zero = g.constant(Tensor::zeros(&[batch, 1, self.plan.stack_width]));
            Ok(g.add_bcast(zero, p.var(name)?)?)
        };

        match self.config.modality {
            ModalityMode::FmriOnly => {
                let stream = g.concat(&[cls("cls.fmri")?, tok_f.unwrap()], 1)?;
                let out = stack_forward(g, p, "fstack", stream, self.plan.per_modality_layers.max(self.plan.joint_layers), heads)?;
                let c_raw = g.reshape(g.narrow(out, 1, 0, 1)?, &[batch, self.plan.stack_width])?;
                let z = g.narrow(out, 1, 1, self.plan.fmri_tokens)?;
                let c = head(g, p, "head.fmri", c_raw)?;
                let z_b = fuse_pairs(g, p, z, z)?;
                Ok(EncodeOut { z_f: Some(z), z_e: None, c_f: Some(c), c_e: None, z_b })
            }
            ModalityMode::EegOnly => {
                let stream = g.concat(&[cls("cls.eeg")?, tok_e.unwrap()], 1)?;
                let out = stack_forward(g, p, "estack", stream, self.plan.per_modality_layers.max(self.plan.joint_layers), heads)?;
                let c_raw = g.reshape(g.narrow(out, 1, 0, 1)?, &[batch, self.plan.stack_width])?;
                let z = g.narrow(out, 1, 1, self.plan.eeg_tokens)?;
                let c = head(g, p, "head.eeg", c_raw)?;
                let z_b = fuse_pairs(g, p, z, z)?;
                Ok(EncodeOut { z_f: None, z_e: Some(z), c_f: None, c_e: Some(c), z_b })
            }
            ModalityMode::Both => self.forward_both(g, p, batch, tok_f.unwrap(), tok_e.unwrap(), cls),
        }
    }

    fn forward_both(
        &self,
        g: &Graph<f32>,
        p: &Bound,
        batch: usize,
        tok_f: Var,
        tok_e: Var,
        cls: impl Fn(&str) -> Result<Var>,
    ) -> Result<EncodeOut> {
        let heads = self.config.heads;
        let w = self.plan.stack_width;
        let (nf, ne) = (self.plan.fmri_tokens, self.plan.eeg_tokens);
        let take_c = |g: &Graph<f32>, out: Var, at: usize| -> Result<Var> {
            Ok(g.reshape(g.narrow(out, 1, at, 1)?, &[batch, w])?)
        };

        let (z_f, z_e, cf_raw, ce_raw) = match self.config.variant {
            FusionVariant::DualFusion => {
                let f = g.concat(&[cls("cls.fmri")?, tok_f], 1)?;
                let e = g.concat(&[cls("cls.eeg")?, tok_e], 1)?;
                let f = stack_forward(g, p, "fstack", f, self.plan.per_modality_layers, heads)?;
                let e = stack_forward(g, p, "estack", e, self.plan.per_modality_layers, heads)?;
                (
                    g.narrow(f, 1, 1, nf)?,
                    g.narrow(e, 1, 1, ne)?,
                    take_c(g, f, 0)?,
                    take_c(g, e, 0)?,
                )
            }
            FusionVariant::Joint => {
                let stream = g.concat(&[cls("cls.fmri")?, cls("cls.eeg")?, tok_f, tok_e], 1)?;
                let out = stack_forward(g, p, "joint", stream, self.plan.joint_layers, heads)?;
                (
                    g.narrow(out, 1, 2, nf)?,
                    g.narrow(out, 1, 2 + nf, ne)?,
                    take_c(g, out, 0)?,
                    take_c(g, out, 1)?,
                )
            }
            FusionVariant::TwoStage => {
                let f = g.concat(&[cls("cls.fmri")?, tok_f], 1)?;
                let e = g.concat(&[cls("cls.eeg")?, tok_e], 1)?;
                let f = stack_forward(g, p, "fstack", f, self.plan.per_modality_layers, heads)?;
                let e = stack_forward(g, p, "estack", e, self.plan.per_modality_layers, heads)?;
                let stream = g.concat(&[f, e], 1)?;
                let out = stack_forward(g, p, "joint", stream, self.plan.joint_layers, heads)?;
                (
                    g.narrow(out, 1, 1, nf)?,
                    g.narrow(out, 1, nf + 2, ne)?,
                    take_c(g, out, 0)?,
                    take_c(g, out, nf + 1)?,
                )
            }
            FusionVariant::CrossAttn => {
                let mut f = g.concat(&[cls("cls.fmri")?, tok_f], 1)?;
                let mut e = g.concat(&[cls("cls.eeg")?, tok_e], 1)?;
                for i in 0..self.plan.per_modality_layers {
                    let f_prev = f;
                    let e_prev = e;
                    f = block_forward(g, p, &format!("fstack.{i}"), f_prev, heads, Some(e_prev))?;
                    e = block_forward(g, p, &format!("estack.{i}"), e_prev, heads, Some(f_prev))?;
                }
                (
                    g.narrow(f, 1, 1, nf)?,
                    g.narrow(e, 1, 1, ne)?,
                    take_c(g, f, 0)?,
                    take_c(g, e, 0)?,
                )
            }
            FusionVariant::SpatialCat { .. } => {
                let stream = g.concat(&[cls("cls.fmri")?, cls("cls.eeg")?, tok_f, tok_e], 1)?;
                let out = stack_forward(g, p, "joint", stream, self.plan.joint_layers, heads)?;
                (
                    g.narrow(out, 1, 2, nf)?,
                    g.narrow(out, 1, 2 + nf, ne)?,
                    take_c(g, out, 0)?,
                    take_c(g, out, 1)?,
                )
            }
        };

        let c_f = head(g, p, "head.fmri", cf_raw)?;
        let c_e = head(g, p, "head.eeg", ce_raw)?;

        // Unified representation: aligned token pairs concatenated to width
        // 2d for most variants; SpatialCat tokens already carry width 2d and
        // concatenate along the token axis instead.
        let z_b = if matches!(self.config.variant, FusionVariant::SpatialCat { .. }) {
            let stream = g.concat(&[z_f, z_e], 1)?;
            fuse_stream(g, p, stream)?
        } else {
            fuse_pairs(g, p, z_f, z_e)?
        };

        Ok(EncodeOut {
            z_f: Some(z_f),
            z_e: Some(z_e),
            c_f: Some(c_f),
            c_e: Some(c_e),
            z_b,
        })
    }
}

/// Contrastive head: linear projection + unit normalization.
fn head(g: &Graph<f32>, p: &Bound, prefix: &str, c_raw: Var) -> Result<Var> {
    let projected = g.matmul(c_raw, p.var(&format!("{prefix}.w"))?)?;
    Ok(g.l2_normalize_last(projected))
}

/// ψ over position-aligned token pairs: concat features to 2d, then the
/// tokenwise two-layer MLP down to d.
pub fn fuse_pairs(g: &Graph<f32>, p: &Bound, z_f: Var, z_e: Var) -> Result<Var> {
    let sf = g.shape(z_f);
    let se = g.shape(z_e);
    if sf != se {
        return Err(MfeError::Config(format!(
            "fuse expects aligned token streams, got {sf:?} vs {se:?}"
        )));
    }
    let stream = g.concat(&[z_f, z_e], 2)?;
    fuse_stream(g, p, stream)
}

/// ψ applied to an already-concatenated `[batch, tokens, 2d]` stream.
pub fn fuse_stream(g: &Graph<f32>, p: &Bound, stream: Var) -> Result<Var> {
    let h = g.gelu(g.add_bcast(g.matmul(stream, p.var("fuse.w1")?)?, p.var("fuse.b1")?)?);
    Ok(g.add_bcast(g.matmul(h, p.var("fuse.w2")?)?, p.var("fuse.b2")?)?)
}

fn init_params(
    cfg: &EncoderConfig,
    plan: &StackPlan,
    tf: &TokenizerSpec,
    te: &TokenizerSpec,
    store: &mut ParamStore,
    rng: &mut RngStream,
) {
    let w = plan.stack_width;
    let d = cfg.hidden_dim;
    let e = cfg.embed_dim;

    if cfg.modality != ModalityMode::EegOnly {
        tf.init(store, rng, "tok.fmri");
        store.insert_gauss("cls.fmri", &[w], rng, true);
        store.insert_gauss("head.fmri.w", &[w, e], rng, true);
    }
    if cfg.modality != ModalityMode::FmriOnly {
        te.init(store, rng, "tok.eeg");
        store.insert_gauss("cls.eeg", &[w], rng, true);
        store.insert_gauss("head.eeg.w", &[w, e], rng, true);
    }

    let both = cfg.modality == ModalityMode::Both;
    match cfg.variant {
        FusionVariant::DualFusion | FusionVariant::CrossAttn => {
            let layers = plan.per_modality_layers;
            let cross = plan.cross && both;
            if cfg.modality != ModalityMode::EegOnly {
                for i in 0..layers {
                    init_block(store, rng, &format!("fstack.{i}"), w, plan.mlp_hidden, cross);
                }
            }
            if cfg.modality != ModalityMode::FmriOnly {
                for i in 0..layers {
                    init_block(store, rng, &format!("estack.{i}"), w, plan.mlp_hidden, cross);
                }
            }
        }
        FusionVariant::Joint | FusionVariant::SpatialCat { .. } => {
            if both {
                for i in 0..plan.joint_layers {
                    init_block(store, rng, &format!("joint.{i}"), w, plan.mlp_hidden, false);
                }
            } else {
                // single-modality fallback: one plain stack
                let name = if cfg.modality == ModalityMode::FmriOnly { "fstack" } else { "estack" };
                for i in 0..plan.joint_layers.max(plan.per_modality_layers) {
                    init_block(store, rng, &format!("{name}.{i}"), w, plan.mlp_hidden, false);
                }
            }
        }
        FusionVariant::TwoStage => {
            if cfg.modality != ModalityMode::EegOnly {
                for i in 0..plan.per_modality_layers {
                    init_block(store, rng, &format!("fstack.{i}"), w, plan.mlp_hidden, false);
                }
            }
            if cfg.modality != ModalityMode::FmriOnly {
                for i in 0..plan.per_modality_layers {
                    init_block(store, rng, &format!("estack.{i}"), w, plan.mlp_hidden, false);
                }
            }
            if both {
                for i in 0..plan.joint_layers {
                    init_block(store, rng, &format!("joint.{i}"), w, plan.mlp_hidden, false);
                }
            }
        }
    }

    // fusion MLP ψ
    store.insert_gauss("fuse.w1", &[2 * d, 2 * d], rng, true);
    store.insert_zeros("fuse.b1", &[2 * d], true);
    store.insert_gauss("fuse.w2", &[2 * d, d], rng, true);
    store.insert_zeros("fuse.b2", &[d], true);

    // aggregation module φ
    store.insert_gauss("agg.query", &[e], rng, true);
    init_block(store, rng, "agg.block", e, 4 * e, false);

    // shared learnable temperature
    store.insert("temperature", Tensor::scalar(0.07), true);
}
