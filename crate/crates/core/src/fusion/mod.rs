//! Analysis refinement head: encoder-driven rectification, perplexity-guided
//! weighting and layer-normalised fusion, with a predictor on `[h; z_f]`.

mod forward;
mod gradcheck;
mod params;
mod train;

pub use forward::{
    accumulate_gradient, backward, batch_loss, forward_predict, forward_trace, fuse_knowledge, layer_norm,
    perplexity_guided_weight, perplexity_weight, rectify_encoder_driven, FusionExample, FusionTrace, LN_EPS,
    LOG_FLOOR,
};
pub use gradcheck::{
    gradient_check, gradient_check_with, random_instance, relative_error, BlockCheck, GradCheckConfig,
    GradCheckReport,
};
pub use params::{FusionParams, BLOCK_NAMES, FUSED_DIM};
pub use train::{
    build_examples, evaluate, predict_probabilities, train_fusion, AnalysisBundle, FusionOutcome, SplitExamples,
    TrainConfig,
};
pub use crate::loss::compute_loss;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{load_tagged, save_tagged};
use crate::error::Result;
use crate::optim::{Adam, AdamConfig};

pub const FUSION_MAGIC: &str = "FUSEv1";

/// One Adam update of every block.
pub fn adam_step(params: &mut FusionParams, grads: &FusionParams, state: &mut Adam) {
    state.step(params.blocks_mut(), grads.blocks());
}

pub fn adam_state(params: &FusionParams, lr: f64) -> Adam {
    let lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    Adam::new(AdamConfig::with_lr(lr), &lens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionCheckpoint {
    pub params: FusionParams,
    pub config: TrainConfig,
    pub encoder_checksum: String,
}

impl FusionCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_tagged(path, FUSION_MAGIC, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_tagged(path, FUSION_MAGIC)
    }
}
