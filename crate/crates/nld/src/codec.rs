//! Deterministic latent video codec: per-patch orthonormal projection.
//! Invertible on its range by construction, so the decoder works in a
//! latent space without a second training problem.

use numcore::linalg::random_orthonormal;
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::{NldError, Result};

#[derive(Clone, Debug)]
pub struct LatentCodec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    /// Rows of Q (orthonormal), patch_dim × patch_dim.
    projection: Tensor<f32>,
    /// Zero-padding applied to reach a whole patch grid.
    pub pad_h: usize,
    pub pad_w: usize,
}

impl LatentCodec {
    pub fn new(frames: usize, height: usize, width: usize, patch: usize, seed: u64) -> Result<Self> {
        if patch == 0 || frames == 0 {
            return Err(NldError::Config("degenerate codec geometry".into()));
        }
        let pad_h = (patch - height % patch) % patch;
        let pad_w = (patch - width % patch) % patch;
        let dim = patch * patch * 3;
        let mut rng = RngStream::new(seed, 0xC0DEC);
        let q64 = random_orthonormal(dim, &mut rng);
        let projection = Tensor::from_vec(&[dim, dim], q64.iter().map(|&x| x as f32).collect())
            .map_err(|e| NldError::Numeric(e.to_string()))?;
        Ok(Self {
            frames,
            height,
            width,
            patch,
            projection,
            pad_h,
            pad_w,
        })
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    fn grid(&self) -> (usize, usize) {
        (
            (self.height + self.pad_h) / self.patch,
            (self.width + self.pad_w) / self.patch,
        )
    }

    /// Latent tokens per clip.
    pub fn tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        self.frames * gh * gw
    }

    /// `[frames, h, w, 3]` → `[tokens, patch_dim]` by per-patch projection.
    pub fn encode(&self, video: &Tensor<f32>) -> Result<Tensor<f32>> {
        let expect = [self.frames, self.height, self.width, 3];
        if video.shape() != expect {
            return Err(NldError::Config(format!(
                "video shape {:?}, codec expects {:?}",
                video.shape(),
                expect
            )));
        }
        let (gh, gw) = self.grid();
        let dim = self.patch_dim();
        let mut patches = vec![0.0f32; self.tokens() * dim];
        let (h, w, p) = (self.height, self.width, self.patch);
        for f in 0..self.frames {
            for gy in 0..gh {
                for gx in 0..gw {
                    let tok = (f * gh + gy) * gw + gx;
                    for py in 0..p {
                        for px in 0..p {
                            let (y, x) = (gy * p + py, gx * p + px);
                            if y >= h || x >= w {
                                continue; // zero padding
                            }
                            let src = ((f * h + y) * w + x) * 3;
                            let dst = tok * dim + (py * p + px) * 3;
                            patches[dst..dst + 3]
                                .copy_from_slice(&video.data()[src..src + 3]);
                        }
                    }
                }
            }
        }
        let patches = Tensor::from_vec(&[self.tokens(), dim], patches)
            .map_err(|e| NldError::Numeric(e.to_string()))?;
        // latent = patches · Qᵀ, so decode is latent · Q
        let qt = self.projection.transpose2d().map_err(|e| NldError::Numeric(e.to_string()))?;
        patches.matmul(&qt).map_err(|e| NldError::Numeric(e.to_string()))
    }

    /// Inverse of [`LatentCodec::encode`], cropping any pad.
    pub fn decode(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>> {
        let dim = self.patch_dim();
        if latent.shape() != [self.tokens(), dim] {
            return Err(NldError::Config(format!(
                "latent shape {:?}, codec expects [{}, {}]",
                latent.shape(),
                self.tokens(),
                dim
            )));
        }
        let patches = latent
            .matmul(&self.projection)
            .map_err(|e| NldError::Numeric(e.to_string()))?;
        let (gh, gw) = self.grid();
        let (h, w, p) = (self.height, self.width, self.patch);
        let mut video = vec![0.0f32; self.frames * h * w * 3];
        for f in 0..self.frames {
            for gy in 0..gh {
                for gx in 0..gw {
                    let tok = (f * gh + gy) * gw + gx;
                    for py in 0..p {
                        for px in 0..p {
                            let (y, x) = (gy * p + py, gx * p + px);
                            if y >= h || x >= w {
                                continue;
                            }
                            let src = tok * dim + (py * p + px) * 3;
                            let dst = ((f * h + y) * w + x) * 3;
                            video[dst..dst + 3].copy_from_slice(&patches.data()[src..src + 3]);
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[self.frames, h, w, 3], video).map_err(|e| NldError::Numeric(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_below_1e5() {
        let codec = LatentCodec::new(8, 32, 32, 8, 7).unwrap();
        let mut rng = RngStream::new(3, 0);
        let video = Tensor::from_fn(&[8, 32, 32, 3], |_| rng.uniform_f64() as f32);
        let latent = codec.encode(&video).unwrap();
        assert_eq!(latent.shape(), &[8 * 16, 192]);
        let back = codec.decode(&latent).unwrap();
        let max_err = video
            .data()
            .iter()
            .zip(back.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-5, "roundtrip error {max_err}");
    }

    #[test]
    fn zero_video_zero_latent() {
        let codec = LatentCodec::new(2, 16, 16, 8, 1).unwrap();
        let latent = codec.encode(&Tensor::zeros(&[2, 16, 16, 3])).unwrap();
        assert!(latent.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_preserved() {
        // Parseval: orthonormal projection preserves the squared norm
        let codec = LatentCodec::new(4, 16, 16, 8, 11).unwrap();
        let mut rng = RngStream::new(5, 0);
        let video = Tensor::from_fn(&[4, 16, 16, 3], |_| (rng.uniform_f64() * 2.0 - 1.0) as f32);
        let latent = codec.encode(&video).unwrap();
        let ev: f64 = video.data().iter().map(|&x| (x as f64).powi(2)).sum();
        let el: f64 = latent.data().iter().map(|&x| (x as f64).powi(2)).sum();
        assert!((ev - el).abs() / ev < 1e-4, "video {ev} vs latent {el}");
    }

    #[test]
    fn padded_geometry_roundtrips() {
        // 20×20 frames with patch 8 -> padded to 24×24, crop on decode
        let codec = LatentCodec::new(2, 20, 20, 8, 13).unwrap();
        assert_eq!((codec.pad_h, codec.pad_w), (4, 4));
        let mut rng = RngStream::new(6, 0);
        let video = Tensor::from_fn(&[2, 20, 20, 3], |_| rng.uniform_f64() as f32);
        let back = codec.decode(&codec.encode(&video).unwrap()).unwrap();
        let max_err = video
            .data()
            .iter()
            .zip(back.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-5);
    }
}
