//! Experiment configuration, loaded from JSON and overridden by flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use gtr_core::gmrf::{GmrfModel, ModelSpec, SamplerParams};
use gtr_core::grid::{partition_stages, EmptyStagePolicy, GridShape, StagePartition};
use gtr_core::plan::{DiffusionSchedule, GenerationRates};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Token sampling orders compared by `compare-orders`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderKind {
    Raster,
    Subsample,
    /// Spatial-quadrant reading of the subsample baseline.
    Quadrants,
    Random,
    Gtr,
}

impl OrderKind {
    pub fn name(self) -> &'static str {
        match self {
            OrderKind::Raster => "raster",
            OrderKind::Subsample => "subsample",
            OrderKind::Quadrants => "quadrants",
            OrderKind::Random => "random",
            OrderKind::Gtr => "gtr",
        }
    }
}

impl fmt::Display for OrderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raster" => Ok(OrderKind::Raster),
            "subsample" => Ok(OrderKind::Subsample),
            "quadrants" => Ok(OrderKind::Quadrants),
            "random" => Ok(OrderKind::Random),
            "gtr" => Ok(OrderKind::Gtr),
            other => Err(format!("unknown order '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub d: f64,
    pub rho: f64,
    pub rho_map: Option<Vec<Vec<f64>>>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            d: 1.0,
            rho: 0.22,
            rho_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub h: usize,
    pub w: usize,
    pub stages: usize,
    pub rates: Vec<f64>,
    pub schedule: DiffusionSchedule,
    pub model: ModelParams,
    /// AR steps of the baseline orders.
    pub ar_steps: usize,
    /// Diffusion steps per token for the baseline orders.
    pub baseline_diffusion_steps: u32,
    pub seeds: Vec<u64>,
    pub orders: Vec<OrderKind>,
    /// Per-token sampler; `None` means an exact sampler.
    pub sampler: Option<SamplerParams>,
    /// Window half-width for testbed features; enables FTS overrides on GtR plans.
    pub fts_window: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            h: 8,
            w: 8,
            stages: 3,
            rates: vec![4.0, 8.0, 16.0],
            schedule: DiffusionSchedule::default(),
            model: ModelParams::default(),
            ar_steps: 8,
            baseline_diffusion_steps: 100,
            seeds: (0..20).collect(),
            orders: vec![
                OrderKind::Raster,
                OrderKind::Subsample,
                OrderKind::Random,
                OrderKind::Gtr,
            ],
            sampler: None,
            fts_window: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    pub fn shape(&self) -> Result<GridShape, CliError> {
        Ok(GridShape::new(self.h, self.w)?)
    }

    pub fn partition(&self) -> Result<StagePartition, CliError> {
        Ok(partition_stages(self.shape()?, self.stages, EmptyStagePolicy::Strict)?)
    }

    pub fn rates(&self) -> Result<GenerationRates, CliError> {
        Ok(GenerationRates::new(self.rates.clone())?)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            h: self.h,
            w: self.w,
            d: self.model.d,
            rho: self.model.rho,
            rho_map: self.model.rho_map.clone(),
        }
    }

    pub fn model(&self) -> Result<GmrfModel, CliError> {
        Ok(self.model_spec().build()?)
    }

    /// Checks everything a stochastic experiment needs.
    pub fn validate(&self) -> Result<(), CliError> {
        let shape = self.shape()?;
        self.partition()?;
        let rates = self.rates()?;
        if rates.len() != self.stages {
            return Err(CliError::Config(format!(
                "{} rates given for {} stages",
                rates.len(),
                self.stages
            )));
        }
        self.schedule.validate()?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if self.orders.is_empty() {
            return Err(CliError::Config("order list is empty".into()));
        }
        if self.ar_steps < 1 || self.ar_steps > shape.len() {
            return Err(CliError::Config(format!(
                "ar_steps {} outside 1..={}",
                self.ar_steps,
                shape.len()
            )));
        }
        if self.baseline_diffusion_steps < 1 {
            return Err(CliError::Config("baseline_diffusion_steps must be positive".into()));
        }
        if let Some(s) = &self.sampler {
            if !(s.beta_rate.is_finite() && s.beta_rate > 0.0 && s.horizon.is_finite() && s.horizon > 0.0) {
                return Err(CliError::Config(
                    "sampler beta_rate and horizon must be positive".into(),
                ));
            }
        }
        if self.fts_window == Some(0) {
            return Err(CliError::Config("fts_window must be at least 1".into()));
        }
        Ok(())
    }
}
