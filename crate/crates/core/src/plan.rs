//! Executable sampling plans: intra-stage chunking at per-stage generation
//! rates, stage-aware diffusion step counts, frequency-weighted overrides in
//! the reconstruction stage, and exact cost accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Add;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fts::{rank_tokens, FtsError, ImportanceScore};
use crate::grid::{GridShape, StagePartition, TokenPos};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("generation rate {index} must be finite and positive (got {value})")]
    InvalidRate { index: usize, value: f64 },
    #[error("expected {expected} generation rates, got {got}")]
    RateCountMismatch { expected: usize, got: usize },
    #[error("invalid diffusion schedule: {0}")]
    InvalidSchedule(String),
    #[error("IndexOutOfRange: generation step {m} outside 1..={total}")]
    IndexOutOfRange { m: usize, total: usize },
    #[error("cannot chunk an empty stage")]
    EmptyStage,
    #[error("AR step count {steps} must lie in 1..={tokens}")]
    InvalidStepCount { steps: usize, tokens: usize },
    #[error("MissingScore: no importance score for reconstruction token {0}")]
    MissingScore(TokenPos),
    #[error(transparent)]
    Fts(#[from] FtsError),
    #[error("plan is invalid: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Tokens per masked-AR step for each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRates(Vec<f64>);

impl GenerationRates {
    pub fn new(rates: Vec<f64>) -> Result<Self, PlanError> {
        if let Some((index, &value)) = rates.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(PlanError::InvalidRate { index, value });
        }
        Ok(Self(rates))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-token diffusion step budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t_max: u32,
    pub t_min: u32,
    pub t_rec: u32,
    pub t_detail: u32,
    pub beta: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self {
            t_max: 50,
            t_min: 20,
            t_rec: 20,
            t_detail: 50,
            beta: 0.1,
        }
    }
}

impl DiffusionSchedule {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |msg: String| Err(PlanError::InvalidSchedule(msg));
        if self.t_min < 1 || self.t_max < self.t_min {
            return bad(format!(
                "need t_max >= t_min >= 1 (got {} / {})",
                self.t_max, self.t_min
            ));
        }
        if self.t_rec < 1 {
            return bad("t_rec must be at least 1".into());
        }
        if self.t_detail < self.t_rec {
            return bad(format!("t_detail {} below t_rec {}", self.t_detail, self.t_rec));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta {} outside (0, 1]", self.beta));
        }
        Ok(())
    }
}

/// One masked-AR step: the token set generated together, each with its own
/// diffusion step count. `stage` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub stage: usize,
    pub tokens: Vec<TokenPos>,
    #[serde(rename = "t")]
    pub diffusion_steps: Vec<u32>,
}

impl PlanStep {
    pub fn uniform(stage: usize, tokens: Vec<TokenPos>, steps: u32) -> Self {
        let diffusion_steps = vec![steps; tokens.len()];
        Self {
            stage,
            tokens,
            diffusion_steps,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenPos, u32)> + '_ {
        self.tokens.iter().copied().zip(self.diffusion_steps.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub shape: GridShape,
    pub seed: u64,
    pub steps: Vec<PlanStep>,
}

impl SamplingPlan {
    /// Highest stage index present; the reconstruction stage of a GtR plan.
    pub fn last_stage(&self) -> usize {
        self.steps.iter().map(|s| s.stage).max().unwrap_or(0)
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Same token sets with every diffusion step count set to `steps`.
    pub fn with_uniform_diffusion_steps(&self, steps: u32) -> Self {
        let mut out = self.clone();
        for s in &mut out.steps {
            s.diffusion_steps.iter_mut().for_each(|t| *t = steps);
        }
        out
    }
}

/// Number of masked-AR steps for a stage of `size` tokens at `rate` tokens
/// per step: `round(size / rate)`, clamped to `1..=size`.
pub fn stage_step_count(size: usize, rate: f64) -> usize {
    ((size as f64 / rate).round() as usize).clamp(1, size.max(1))
}

/// Splits `stage` into `round(|stage| / rate)` chunks of near-equal size
/// after a seeded shuffle. The first `|stage| mod M` chunks carry the extra token.
pub fn chunk_stage(stage: &[TokenPos], rate: f64, seed: u64) -> Result<Vec<Vec<TokenPos>>, PlanError> {
    if stage.is_empty() {
        return Err(PlanError::EmptyStage);
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(PlanError::InvalidRate { index: 0, value: rate });
    }
    let mut tokens = stage.to_vec();
    tokens.sort();
    tokens.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let m = stage_step_count(tokens.len(), rate);
    Ok(split_even(tokens, m))
}

fn split_even(items: Vec<TokenPos>, parts: usize) -> Vec<Vec<TokenPos>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut it = items.into_iter();
    (0..parts)
        .map(|k| it.by_ref().take(base + usize::from(k < extra)).collect())
        .collect()
}

/// Diffusion steps for generation-stage step `m` (1-based) out of `total`,
/// decreasing linearly from `t_max` to `t_min`.
pub fn diffusion_steps_for(m: usize, total: usize, sched: &DiffusionSchedule) -> Result<u32, PlanError> {
    if m < 1 || m > total {
        return Err(PlanError::IndexOutOfRange { m, total });
    }
    if total == 1 {
        return Ok(sched.t_max);
    }
    let span = f64::from(sched.t_max) - f64::from(sched.t_min);
    let frac = (m - 1) as f64 / (total - 1) as f64;
    Ok((f64::from(sched.t_max) - span * frac).round() as u32)
}

// Per-stage shuffle seed; distinct stages draw from unrelated streams.
fn stage_seed(seed: u64, stage: usize) -> u64 {
    let mut z = seed ^ (stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generation-then-reconstruction plan over `partition`.
///
/// Stages `1..K` form the generation stage; their steps are concatenated and
/// receive linearly decreasing diffusion step counts. Every token of stage `K`
/// gets `t_rec`.
pub fn build_plan(
    partition: &StagePartition,
    rates: &GenerationRates,
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<SamplingPlan, PlanError> {
    sched.validate()?;
    let k_total = partition.num_stages();
    if rates.len() != k_total {
        return Err(PlanError::RateCountMismatch {
            expected: k_total,
            got: rates.len(),
        });
    }
    let mut chunked = Vec::with_capacity(k_total);
    for (k, (stage, &rate)) in partition.stages().iter().zip(rates.as_slice()).enumerate() {
        chunked.push(chunk_stage(stage, rate, stage_seed(seed, k + 1))?);
    }
    let generation_total: usize = chunked[..k_total - 1].iter().map(Vec::len).sum();

    let mut steps = Vec::new();
    let mut m = 0;
    for (k, chunks) in chunked.into_iter().enumerate() {
        let stage = k + 1;
        for tokens in chunks {
            let t = if stage == k_total {
                sched.t_rec
            } else {
                m += 1;
                diffusion_steps_for(m, generation_total, sched)?
            };
            steps.push(PlanStep::uniform(stage, tokens, t));
        }
    }
    Ok(SamplingPlan {
        shape: partition.shape(),
        seed,
        steps,
    })
}

/// Single-stage plan that walks `order` in `ar_steps` contiguous chunks of
/// near-equal size, every token with `t` diffusion steps.
pub fn plan_from_order(
    shape: GridShape,
    order: Vec<TokenPos>,
    ar_steps: usize,
    t: u32,
    seed: u64,
) -> Result<SamplingPlan, PlanError> {
    if ar_steps < 1 || ar_steps > order.len() {
        return Err(PlanError::InvalidStepCount {
            steps: ar_steps,
            tokens: order.len(),
        });
    }
    let steps = split_even(order, ar_steps)
        .into_iter()
        .map(|tokens| PlanStep::uniform(1, tokens, t))
        .collect();
    Ok(SamplingPlan { shape, seed, steps })
}

/// Gives `t_detail` steps to the `ceil(beta * |S_K|)` reconstruction-stage
/// tokens with the highest scores. Other tokens are left as they are.
pub fn apply_fts_overrides(
    plan: &SamplingPlan,
    scores: &BTreeMap<TokenPos, ImportanceScore>,
    sched: &DiffusionSchedule,
) -> Result<SamplingPlan, PlanError> {
    let last = plan.last_stage();
    let mut candidates = Vec::new();
    for step in plan.steps.iter().filter(|s| s.stage == last) {
        for p in &step.tokens {
            let score = scores.get(p).ok_or(PlanError::MissingScore(*p))?;
            candidates.push((*p, *score));
        }
    }
    if candidates.is_empty() {
        return Ok(plan.clone());
    }
    let selected: BTreeSet<TokenPos> = rank_tokens(&candidates, sched.beta)?.into_iter().collect();
    let mut out = plan.clone();
    for step in out.steps.iter_mut().filter(|s| s.stage == last) {
        for (p, t) in step.tokens.iter().zip(step.diffusion_steps.iter_mut()) {
            if selected.contains(p) {
                *t = sched.t_detail;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: usize,
    pub ar_steps: u64,
    pub tokens: u64,
    pub token_diffusion_steps: u64,
}

/// Schedule-level cost of a plan.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostCounters {
    pub ar_steps: u64,
    pub tokens: u64,
    pub token_diffusion_steps: u64,
    pub per_stage: Vec<StageCost>,
}

impl Add for CostCounters {
    type Output = CostCounters;

    fn add(self, rhs: CostCounters) -> CostCounters {
        let mut stages: BTreeMap<usize, StageCost> = BTreeMap::new();
        for s in self.per_stage.into_iter().chain(rhs.per_stage) {
            let e = stages.entry(s.stage).or_insert(StageCost {
                stage: s.stage,
                ..StageCost::default()
            });
            e.ar_steps += s.ar_steps;
            e.tokens += s.tokens;
            e.token_diffusion_steps += s.token_diffusion_steps;
        }
        CostCounters {
            ar_steps: self.ar_steps + rhs.ar_steps,
            tokens: self.tokens + rhs.tokens,
            token_diffusion_steps: self.token_diffusion_steps + rhs.token_diffusion_steps,
            per_stage: stages.into_values().collect(),
        }
    }
}

pub fn count_cost(plan: &SamplingPlan) -> CostCounters {
    count_steps(&plan.steps)
}

pub fn count_steps(steps: &[PlanStep]) -> CostCounters {
    steps
        .iter()
        .map(|step| {
            let diffusion: u64 = step.diffusion_steps.iter().map(|&t| u64::from(t)).sum();
            let tokens = step.tokens.len() as u64;
            CostCounters {
                ar_steps: 1,
                tokens,
                token_diffusion_steps: diffusion,
                per_stage: vec![StageCost {
                    stage: step.stage,
                    ar_steps: 1,
                    tokens,
                    token_diffusion_steps: diffusion,
                }],
            }
        })
        .fold(CostCounters::default(), Add::add)
}

/// A structural defect found by [`validate_plan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ShapeMismatch { expected: GridShape, found: GridShape },
    OutOfBounds { step: usize, pos: TokenPos },
    Duplicate { step: usize, pos: TokenPos },
    Missing(TokenPos),
    EmptyStep(usize),
    LengthMismatch { step: usize, tokens: usize, counts: usize },
    NonPositiveSteps { step: usize, pos: TokenPos },
    ZeroStage(usize),
    StageOrder { step: usize, stage: usize, previous: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch { expected, found } => {
                write!(f, "plan shape {found} does not match grid {expected}")
            }
            Violation::OutOfBounds { step, pos } => write!(f, "step {step}: {pos} outside the grid"),
            Violation::Duplicate { step, pos } => write!(f, "step {step}: {pos} already generated"),
            Violation::Missing(pos) => write!(f, "{pos} is never generated"),
            Violation::EmptyStep(step) => write!(f, "step {step} has no tokens"),
            Violation::LengthMismatch { step, tokens, counts } => {
                write!(f, "step {step}: {tokens} tokens but {counts} step counts")
            }
            Violation::NonPositiveSteps { step, pos } => {
                write!(f, "step {step}: {pos} has zero diffusion steps")
            }
            Violation::ZeroStage(step) => write!(f, "step {step}: stage index must be 1-based"),
            Violation::StageOrder { step, stage, previous } => {
                write!(f, "step {step}: stage {stage} follows stage {previous}")
            }
        }
    }
}

/// Checks coverage, disjointness, stage grouping and step counts, reporting
/// every violation found.
pub fn validate_plan(plan: &SamplingPlan, shape: GridShape) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if plan.shape != shape {
        violations.push(Violation::ShapeMismatch {
            expected: shape,
            found: plan.shape,
        });
    }
    let mut seen = BTreeSet::new();
    let mut previous = 0;
    for (k, step) in plan.steps.iter().enumerate() {
        if step.tokens.is_empty() {
            violations.push(Violation::EmptyStep(k));
        }
        if step.tokens.len() != step.diffusion_steps.len() {
            violations.push(Violation::LengthMismatch {
                step: k,
                tokens: step.tokens.len(),
                counts: step.diffusion_steps.len(),
            });
        }
        if step.stage == 0 {
            violations.push(Violation::ZeroStage(k));
        } else if step.stage < previous {
            violations.push(Violation::StageOrder {
                step: k,
                stage: step.stage,
                previous,
            });
        }
        previous = previous.max(step.stage);
        for (n, &pos) in step.tokens.iter().enumerate() {
            if !shape.contains(pos) {
                violations.push(Violation::OutOfBounds { step: k, pos });
            } else if !seen.insert(pos) {
                violations.push(Violation::Duplicate { step: k, pos });
            }
            if step.diffusion_steps.get(n) == Some(&0) {
                violations.push(Violation::NonPositiveSteps { step: k, pos });
            }
        }
    }
    violations.extend(shape.positions().filter(|p| !seen.contains(p)).map(Violation::Missing));
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
