//! Modality tokenizers: contiguous voxel chunks for fMRI, contiguous time
//! windows for EEG, both zero-padded to a whole number of tokens, flattened
//! and linearly projected with an added positional embedding.

use numcore::graph::{Graph, Var};
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::params::{Bound, ParamStore};
use crate::{MfeError, Result};

/// Chunking of `total` elements into `tokens` contiguous pieces:
/// `(chunk_width, pad)` with `tokens * chunk_width == total + pad`.
pub fn chunk_layout(total: usize, tokens: usize) -> (usize, usize) {
    let width = total.div_ceil(tokens);
    (width, tokens * width - total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Fmri,
    Eeg,
}

/// Static description of one tokenizer.
#[derive(Clone, Debug)]
pub struct TokenizerSpec {
    pub modality: Modality,
    pub tokens: usize,
    /// fMRI: voxels. EEG: samples per clip.
    pub extent: usize,
    /// fMRI: frames per clip (5). EEG: channels (64).
    pub rows: usize,
    /// Projection output width.
    pub width: usize,
}

impl TokenizerSpec {
    pub fn chunk(&self) -> (usize, usize) {
        chunk_layout(self.extent, self.tokens)
    }

    /// Flattened slab size per token.
    pub fn slab(&self) -> usize {
        self.rows * self.chunk().0
    }

    pub fn param_count(&self) -> usize {
        // projection + bias + positional table
        self.slab() * self.width + self.width + self.tokens * self.width
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut RngStream, prefix: &str) {
        store.insert_gauss(&format!("{prefix}.proj"), &[self.slab(), self.width], rng, true);
        store.insert_zeros(&format!("{prefix}.bias"), &[self.width], true);
        store.insert_gauss(&format!("{prefix}.pos"), &[self.tokens, self.width], rng, true);
    }

    /// Rearranges a batch of samples into token slabs, outside the graph
    /// (pure data movement; inputs carry no gradients).
    ///
    /// fMRI: input `[rows, extent]` per sample; token t gathers the
    /// `rows × chunk` slab of voxel columns `[t·chunk, (t+1)·chunk)`.
    /// EEG: identical with time windows in place of voxel chunks.
    pub fn slabs(&self, batch: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
        let (chunk, _pad) = self.chunk();
        let slab = self.slab();
        let b = batch.len();
        let mut out = vec![0.0f32; b * self.tokens * slab];
        for (i, sample) in batch.iter().enumerate() {
            if sample.shape() != [self.rows, self.extent] {
                return Err(MfeError::Config(format!(
                    "{:?} sample shape {:?}, tokenizer expects [{}, {}]",
                    self.modality,
                    sample.shape(),
                    self.rows,
                    self.extent
                )));
            }
            let data = sample.data();
            for t in 0..self.tokens {
                let col0 = t * chunk;
                let base = (i * self.tokens + t) * slab;
                for r in 0..self.rows {
                    for c in 0..chunk {
                        let col = col0 + c;
                        // zero padding past the real extent
                        if col < self.extent {
                            out[base + r * chunk + c] = data[r * self.extent + col];
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[b, self.tokens, slab], out).map_err(|e| MfeError::Numeric(e.to_string()))
    }

    /// Projects slabs into token embeddings and adds positions:
    /// `[B, tokens, slab] -> [B, tokens, width]`.
    pub fn embed(&self, g: &Graph<f32>, p: &Bound, prefix: &str, slabs: Var) -> Result<Var> {
        let proj = g.matmul(slabs, p.var(&format!("{prefix}.proj"))?)?;
        let biased = g.add_bcast(proj, p.var(&format!("{prefix}.bias"))?)?;
        Ok(g.add_bcast(biased, p.var(&format!("{prefix}.pos"))?)?)
    }
}
