//! Cohort discovery, multi-sample LLM analysis generation, and hybrid
//! refinement of analysis embeddings on top of a frozen EHR encoder.
//!
//! The crate is organised as a staged pipeline:
//!
//! * [`ehr`] holds the record model, ingestion, label binning, splitting and
//!   the planted-cohort synthetic generator.
//! * [`cohort`] finds soft patient cohorts with a Dice-distance manifold
//!   reduction followed by a variational Bayesian Gaussian mixture.
//! * [`prompt`] renders the three-part analysis prompt.
//! * [`llm`] and [`embed`] talk to OpenAI-compatible endpoints, or to
//!   deterministic mocks, and cache what they get back.
//! * [`encoder`] is a small bag-of-embeddings record encoder that is
//!   pretrained once and then frozen.
//! * [`fusion`] is the trainable refinement head: sigmoid attention against
//!   the encoder output, perplexity weighting, layer-normalised fusion and the
//!   predictor, all with hand-written gradients.
//! * [`metrics`] has the evaluation metrics and report types.
//! * [`pipeline`] wires everything into resumable on-disk stages.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is on and plain iterators otherwise.

pub mod artifact;
pub mod cohort;
pub mod ehr;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod llm;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod prompt;

pub use error::{Error, Result};
