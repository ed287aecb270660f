//! Soft patient cohorts: Dice-distance manifold reduction, a variational
//! Bayesian Gaussian mixture with automatic pruning, membership queries,
//! per-cohort statistics and threshold selection.

mod dice;
mod model;
mod reducer;
mod select;
mod stats;
mod vbgmm;

pub use dice::{dice_distance, dice_sorted, CodeSet};
pub use model::{write_stats_table, CohortArtifact, COHORT_MAGIC};
pub use reducer::{
    fit_curve, fuzzy_union, knn_graph, membership, nearest, smooth_knn_dist, FittedReducer,
    FuzzyEdge, ReducedEmbedding, ReducerParams,
};
pub use select::select_cohorts;
pub use stats::{cohort_statistics, CohortStats};
pub use vbgmm::{adjusted_rand_index, CohortModel, VbgmmParams};
