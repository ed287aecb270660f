use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{checksum_f64, Affine, Mat};

pub const FUSED_DIM: usize = 128;

/// Trainable state of the refinement head and predictor.
///
/// `query` maps `h` (length `d_h`) into the analysis space, so it is stored
/// with `d_z` rows and `d_h` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
    pub w: f64,
    pub fuse: Affine,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub predictor: Affine,
}

pub const BLOCK_NAMES: [&str; 10] = [
    "Q", "K", "V", "W", "W_z.weight", "W_z.bias", "ln.gain", "ln.bias", "predictor.weight", "predictor.bias",
];

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(d_h: usize, d_z: usize, d_f: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            query: Mat::glorot(d_z, d_h, rng),
            key: Mat::glorot(d_z, d_z, rng),
            value: Mat::glorot(d_z, d_z, rng),
            w: 1.0,
            fuse: Affine::glorot(d_f, 2 * d_z, rng),
            ln_gain: vec![1.0; d_f],
            ln_bias: vec![0.0; d_f],
            predictor: Affine::zeros(out_dim, d_h + d_f),
        }
    }

    pub fn d_h(&self) -> usize {
        self.query.cols
    }

    pub fn d_z(&self) -> usize {
        self.query.rows
    }

    pub fn d_f(&self) -> usize {
        self.ln_gain.len()
    }

    pub fn out_dim(&self) -> usize {
        self.predictor.out_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            query: Mat::zeros(self.query.rows, self.query.cols),
            key: Mat::zeros(self.key.rows, self.key.cols),
            value: Mat::zeros(self.value.rows, self.value.cols),
            w: 0.0,
            fuse: Affine::zeros(self.fuse.out_dim(), self.fuse.in_dim()),
            ln_gain: vec![0.0; self.d_f()],
            ln_bias: vec![0.0; self.d_f()],
            predictor: Affine::zeros(self.predictor.out_dim(), self.predictor.in_dim()),
        }
    }

    /// Parameter blocks in `BLOCK_NAMES` order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        vec![
            &self.query.data,
            &self.key.data,
            &self.value.data,
            std::slice::from_ref(&self.w),
            &self.fuse.weight.data,
            &self.fuse.bias,
            &self.ln_gain,
            &self.ln_bias,
            &self.predictor.weight.data,
            &self.predictor.bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.query.data,
            &mut self.key.data,
            &mut self.value.data,
            std::slice::from_mut(&mut self.w),
            &mut self.fuse.weight.data,
            &mut self.fuse.bias,
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.predictor.weight.data,
            &mut self.predictor.bias,
        ]
    }

    pub fn add_scaled(&mut self, scale: f64, other: &FusionParams) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            crate::math::axpy(scale, b, a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn checksum(&self) -> String {
        checksum_f64(self.blocks())
    }
}
