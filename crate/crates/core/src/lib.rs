//! Generation-then-reconstruction (GtR) sampling schedules for masked
//! autoregressive set-parallel generation.
//!
//! - [`grid`]: token grid geometry, hierarchical checkerboard stage
//!   partitioning and the raster / subsample / random baseline orders.
//! - [`plan`]: executable sampling plans with per-token diffusion step
//!   counts, plus exact cost accounting.
//! - [`fts`]: frequency-weighted token selection from DFT amplitude spectra.
//! - [`gmrf`]: a grid Gaussian Markov random field on which the output law of
//!   any plan, and its KL divergence to the true joint, is computed exactly.
//!
//! With the `oracle` feature (always on for this crate's own tests) the
//! [`oracle`] module exposes brute-force references used by test suites.

pub mod fts;
pub mod gmrf;
pub mod grid;
pub mod plan;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use fts::{dft_amplitude, fts_score, rank_tokens, AmplitudeSpectrum, ConditioningVector, ImportanceScore};
pub use gmrf::{
    build_grid_gmrf, conditional_law, conditional_variance_trace, kl_to_truth, monte_carlo_execute,
    per_token_sampler_law, propagate_plan, token_features, GaussianLaw, GmrfModel, ModelSpec, SamplerParams,
};
pub use grid::{
    min_intra_set_distance, order_random, order_raster, order_subsample, partition_stages, EmptyStagePolicy, GridShape,
    StagePartition, TokenPos,
};
pub use plan::{
    apply_fts_overrides, build_plan, chunk_stage, count_cost, diffusion_steps_for, plan_from_order, validate_plan,
    CostCounters, DiffusionSchedule, GenerationRates, PlanStep, SamplingPlan,
};
