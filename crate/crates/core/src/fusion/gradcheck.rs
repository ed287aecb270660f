use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::{backward, batch_loss, FusionExample};
use super::params::{FusionParams, BLOCK_NAMES};
use crate::ehr::TaskKind;
use crate::error::Result;
use crate::math::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn block(&self, name: &str) -> Option<&BlockCheck> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// Denominator floor so entries with vanishing gradients compare absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `backward` with central differences on every parameter entry.
pub fn gradient_check(
    params: &FusionParams,
    batch: &[FusionExample],
    task: TaskKind,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    gradient_check_with(params, batch, task, config, |p, b, t| Ok(backward(p, b, t)?.1))
}

/// As [`gradient_check`] with a caller-supplied analytic gradient.
pub fn gradient_check_with<F>(
    params: &FusionParams,
    batch: &[FusionExample],
    task: TaskKind,
    config: &GradCheckConfig,
    analytic: F,
) -> Result<GradCheckReport>
where
    F: Fn(&FusionParams, &[FusionExample], TaskKind) -> Result<FusionParams>,
{
    let grad = analytic(params, batch, task)?;
    let grad_blocks = grad.blocks();
    let mut probe = params.clone();
    let mut blocks = Vec::new();
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let len = grad_blocks[b].len();
        let mut worst = 0.0f64;
        for i in 0..len {
            let orig = probe.blocks()[b][i];
            probe.blocks_mut()[b][i] = orig + config.step;
            let up = batch_loss(&probe, batch, task)?;
            probe.blocks_mut()[b][i] = orig - config.step;
            let down = batch_loss(&probe, batch, task)?;
            probe.blocks_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * config.step);
            worst = worst.max(relative_error(grad_blocks[b][i], numeric));
        }
        blocks.push(BlockCheck {
            name: (*name).to_string(),
            entries: len,
            max_rel_error: worst,
            passed: worst < config.tolerance,
        });
    }
    Ok(GradCheckReport { blocks })
}

/// Random parameters (predictor included) and a batch of examples.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    d_h: usize,
    d_z: usize,
    d_f: usize,
    max_k: usize,
    batch: usize,
    task: TaskKind,
) -> (FusionParams, Vec<FusionExample>) {
    let mut p = FusionParams::init(d_h, d_z, d_f, task.output_dim(), rng);
    p.predictor.weight = Mat::glorot(p.predictor.out_dim(), p.predictor.in_dim(), rng);
    p.w = rng.random_range(0.5..1.5);
    for x in p.fuse.bias.iter_mut().chain(p.ln_bias.iter_mut()).chain(p.predictor.bias.iter_mut()) {
        *x = rng.random_range(-0.5..0.5);
    }
    for g in &mut p.ln_gain {
        *g = rng.random_range(0.5..1.5);
    }
    let examples = (0..batch)
        .map(|_| {
            let k = rng.random_range(1..=max_k);
            FusionExample {
                h: (0..d_h).map(|_| rng.random_range(-1.0..1.0)).collect(),
                z: (0..k).map(|_| (0..d_z).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                perplexities: (0..k).map(|_| rng.random_range(1.01..30.0)).collect(),
                label: rng.random_range(0..task.n_classes()),
            }
        })
        .collect();
    (p, examples)
}
