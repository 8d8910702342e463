//! Exact Gaussian testbed for sampling orders.
//!
//! A Gaussian Markov random field on the token grid stands in for the joint
//! token distribution. Because every conditional is Gaussian, the output law
//! of a sampling plan that draws each token of a step independently from its
//! own conditional (ignoring the within-step correlations) is itself Gaussian
//! and can be propagated in closed form. The KL divergence of that law to the
//! true joint measures what a given order loses to parallel prediction.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fts::{ConditioningVector, FtsError};
use crate::grid::{GridError, GridShape, TokenPos};
use crate::plan::{validate_plan, SamplingPlan, Violation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GmrfError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("NotPositiveDefinite: precision matrix failed Cholesky factorization")]
    NotPositiveDefinite,
    #[error("OverlappingSets: {0} is both target and observed")]
    OverlappingSets(TokenPos),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("dimension mismatch: model has {expected} variables, law has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("plan does not fit the model grid: {} violation(s)", .0.len())]
    InvalidPlan(Vec<Violation>),
    #[error("observed set covers the whole grid; nothing left to complete")]
    NothingToComplete,
    #[error(transparent)]
    Fts(#[from] FtsError),
}

/// On-disk description of a grid model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub h: usize,
    pub w: usize,
    pub d: f64,
    pub rho: f64,
    /// Per-token couplings, one row per grid row. Overrides `rho` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_map: Option<Vec<Vec<f64>>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<GmrfModel, GmrfError> {
        let shape = GridShape::new(self.h, self.w)?;
        let map = match &self.rho_map {
            None => None,
            Some(rows) => {
                if rows.len() != self.h || rows.iter().any(|r| r.len() != self.w) {
                    return Err(GmrfError::InvalidParameter(format!(
                        "rho_map must be {}x{}",
                        self.h, self.w
                    )));
                }
                Some(rows.iter().flatten().copied().collect::<Vec<_>>())
            }
        };
        build_grid_gmrf(shape, self.rho, self.d, map.as_deref())
    }
}

/// Grid GMRF with precision `d I - A`, where `A` holds the couplings of
/// 4-neighbour edges. An edge between tokens with couplings `a` and `b`
/// carries `(a + b) / 2`.
#[derive(Debug, Clone)]
pub struct GmrfModel {
    spec: ModelSpec,
    shape: GridShape,
    precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    mean: DVector<f64>,
    precision_logdet: f64,
}

pub fn build_grid_gmrf(shape: GridShape, rho: f64, d: f64, rho_map: Option<&[f64]>) -> Result<GmrfModel, GmrfError> {
    if !(d.is_finite() && d > 0.0) {
        return Err(GmrfError::InvalidParameter(format!(
            "diagonal d must be positive (got {d})"
        )));
    }
    if !rho.is_finite() {
        return Err(GmrfError::InvalidParameter(format!("rho must be finite (got {rho})")));
    }
    let n = shape.len();
    if let Some(map) = rho_map {
        if map.len() != n {
            return Err(GmrfError::InvalidParameter(format!(
                "rho_map has {} entries for {n} tokens",
                map.len()
            )));
        }
        if map.iter().any(|r| !r.is_finite()) {
            return Err(GmrfError::InvalidParameter("rho_map entries must be finite".into()));
        }
    }
    let coupling = |k: usize| rho_map.map_or(rho, |m| m[k]);

    let mut precision = DMatrix::from_diagonal_element(n, n, d);
    for p in shape.positions() {
        let a = shape.index(p);
        for q in shape.neighbors(p) {
            let b = shape.index(q);
            precision[(a, b)] = -0.5 * (coupling(a) + coupling(b));
        }
    }
    let chol = Cholesky::new(precision.clone()).ok_or(GmrfError::NotPositiveDefinite)?;
    let precision_logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let covariance = chol.inverse();
    let covariance = symmetrize(covariance);

    let spec = ModelSpec {
        h: shape.h(),
        w: shape.w(),
        d,
        rho,
        rho_map: rho_map.map(|m| m.chunks(shape.w()).map(<[f64]>::to_vec).collect()),
    };
    Ok(GmrfModel {
        spec,
        shape,
        precision,
        covariance,
        mean: DVector::zeros(n),
        precision_logdet,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

impl GmrfModel {
    pub fn with_mean(mut self, mean: DVector<f64>) -> Result<Self, GmrfError> {
        if mean.len() != self.dim() {
            return Err(GmrfError::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// The true joint as a [`GaussianLaw`].
    pub fn law(&self) -> GaussianLaw {
        GaussianLaw {
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
        }
    }

    fn indices(&self, set: &[TokenPos]) -> Result<Vec<usize>, GmrfError> {
        set.iter()
            .map(|&p| {
                self.shape.check(p)?;
                Ok(self.shape.index(p))
            })
            .collect()
    }
}

/// Mean and covariance over the grid tokens in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Symmetric, with no eigenvalue below `-1e-10`.
    pub fn is_valid(&self) -> bool {
        let c = &self.covariance;
        if c.nrows() != self.dim() || c.ncols() != self.dim() {
            return false;
        }
        let scale = c.amax().max(1.0);
        if (c - c.transpose()).amax() > 1e-12 * scale {
            return false;
        }
        SymmetricEigen::new(c.clone()).eigenvalues.min() >= -1e-10
    }
}

/// Gaussian conditional of a target set given an observed set:
/// `x_T | x_O ~ N(offset + regression x_O, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    pub regression: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub offset: DVector<f64>,
}

pub fn conditional_law(
    model: &GmrfModel,
    target: &[TokenPos],
    observed: &[TokenPos],
) -> Result<ConditionalLaw, GmrfError> {
    let observed_set: BTreeSet<TokenPos> = observed.iter().copied().collect();
    if let Some(p) = target.iter().find(|p| observed_set.contains(p)) {
        return Err(GmrfError::OverlappingSets(*p));
    }
    let t = model.indices(target)?;
    let o = model.indices(observed)?;
    let sigma = &model.covariance;
    let mu = &model.mean;
    let s_tt = sigma.select_rows(&t).select_columns(&t);
    let mu_t = mu.select_rows(&t);
    if o.is_empty() {
        return Ok(ConditionalLaw {
            regression: DMatrix::zeros(t.len(), 0),
            covariance: s_tt,
            offset: mu_t,
        });
    }
    let s_oo = sigma.select_rows(&o).select_columns(&o);
    let s_ot = sigma.select_rows(&o).select_columns(&t);
    let chol = Cholesky::new(s_oo).ok_or(GmrfError::NotPositiveDefinite)?;
    // B^T = S_OO^{-1} S_OT
    let regression = chol.solve(&s_ot).transpose();
    let covariance = symmetrize(s_tt - &regression * s_ot);
    let offset = mu_t - &regression * mu.select_rows(&o);
    Ok(ConditionalLaw {
        regression,
        covariance,
        offset,
    })
}

/// Output variance of a per-token diffusion sampler run for `steps` Euler
/// steps on a standardized Gaussian target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerTokenSamplerLaw {
    pub steps: u32,
    pub variance: f64,
}

impl PerTokenSamplerLaw {
    /// `KL(N(0, v) || N(0, 1))`.
    pub fn kl(&self) -> f64 {
        0.5 * (self.variance - 1.0 - self.variance.ln())
    }
}

/// Noise rate and time horizon of the per-token reverse process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub beta_rate: f64,
    pub horizon: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            beta_rate: 2.0,
            horizon: 1.0,
        }
    }
}

impl SamplerParams {
    pub fn law(&self, steps: u32) -> PerTokenSamplerLaw {
        per_token_sampler_law(steps, self.beta_rate, self.horizon)
    }
}

/// Iterates `v <- v (1 - beta dt / 2)^2 + beta dt` with `dt = horizon / steps`,
/// starting from `v = 1`.
pub fn per_token_sampler_law(steps: u32, beta_rate: f64, horizon: f64) -> PerTokenSamplerLaw {
    let steps = steps.max(1);
    let dt = horizon / f64::from(steps);
    let contraction = (1.0 - 0.5 * beta_rate * dt).powi(2);
    let variance = (0..steps).fold(1.0, |v, _| v * contraction + beta_rate * dt);
    PerTokenSamplerLaw { steps, variance }
}

fn check_plan(model: &GmrfModel, plan: &SamplingPlan) -> Result<(), GmrfError> {
    validate_plan(plan, model.shape).map_err(GmrfError::InvalidPlan)
}

fn innovation_scale(sampler: Option<&SamplerParams>, steps: u32) -> f64 {
    sampler.map_or(1.0, |s| s.law(steps).variance)
}

/// Exact output law of `plan` when every token of a step is drawn from its
/// own conditional given all previously generated tokens, independently of
/// the other tokens in the same step.
///
/// With `sampler` set, each token's conditional variance is inflated by the
/// per-token sampler variance for its scheduled step count.
pub fn propagate_plan(
    model: &GmrfModel,
    plan: &SamplingPlan,
    sampler: Option<&SamplerParams>,
) -> Result<GaussianLaw, GmrfError> {
    check_plan(model, plan)?;
    let n = model.dim();
    let sigma = &model.covariance;
    let mu = &model.mean;

    // Generation order so far, the Cholesky factor of the true covariance over
    // those tokens, and the output moments, all indexed in generation order.
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut chol = DMatrix::<f64>::zeros(n, n);
    let mut out_cov = DMatrix::<f64>::zeros(n, n);
    let mut out_mean = DVector::<f64>::zeros(n);

    for step in &plan.steps {
        let x: Vec<usize> = step.tokens.iter().map(|&p| model.shape.index(p)).collect();
        let g = order.len();
        let m = x.len();
        let sigma_xx = sigma.select_rows(&x).select_columns(&x);

        // l = L_G^{-1} S_GX, regression B = (L_G^{-T} l)^T
        let (l, b) = if g == 0 {
            (DMatrix::zeros(0, m), DMatrix::zeros(m, 0))
        } else {
            let l_g = chol.view((0, 0), (g, g));
            let s_gx = sigma.select_rows(&order).select_columns(&x);
            let l = l_g
                .solve_lower_triangular(&s_gx)
                .ok_or(GmrfError::NotPositiveDefinite)?;
            let bt = l_g
                .tr_solve_lower_triangular(&l)
                .ok_or(GmrfError::NotPositiveDefinite)?;
            (l, bt.transpose())
        };
        // Σ_XX - L_XG L_XG^T: true conditional covariance of X given G.
        let cond = &sigma_xx - l.transpose() * &l;

        let c_gg = out_cov.view((0, 0), (g, g));
        let c_xg = &b * c_gg;
        let mut c_xx = &c_xg * b.transpose();
        for (a, &t) in step.diffusion_steps.iter().enumerate() {
            c_xx[(a, a)] += cond[(a, a)].max(0.0) * innovation_scale(sampler, t);
        }
        let mu_g = mu.select_rows(&order);
        let m_g = out_mean.rows(0, g).into_owned();
        let m_x = mu.select_rows(&x) + &b * (m_g - mu_g);

        out_cov.view_mut((g, 0), (m, g)).copy_from(&c_xg);
        out_cov.view_mut((0, g), (g, m)).copy_from(&c_xg.transpose());
        out_cov.view_mut((g, g), (m, m)).copy_from(&c_xx);
        out_mean.rows_mut(g, m).copy_from(&m_x);

        let block = Cholesky::new(symmetrize(cond)).ok_or(GmrfError::NotPositiveDefinite)?;
        chol.view_mut((g, 0), (m, g)).copy_from(&l.transpose());
        chol.view_mut((g, g), (m, m)).copy_from(&block.l());
        order.extend_from_slice(&x);
    }

    let mut mean = DVector::zeros(n);
    let mut covariance = DMatrix::zeros(n, n);
    for (a, &ia) in order.iter().enumerate() {
        mean[ia] = out_mean[a];
        for (b, &ib) in order.iter().enumerate() {
            covariance[(ia, ib)] = out_cov[(a, b)];
        }
    }
    Ok(GaussianLaw {
        mean,
        covariance: symmetrize(covariance),
    })
}

/// KL divergence of a law from the model's true joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlDivergence {
    pub value: f64,
    /// Set when the law's covariance was not positive definite and its
    /// eigenvalues were floored at 1e-12.
    pub floored: bool,
}

pub const EIGEN_FLOOR: f64 = 1e-12;

/// `KL(law || N(mean, precision^{-1}))`.
pub fn kl_to_truth(law: &GaussianLaw, model: &GmrfModel) -> Result<KlDivergence, GmrfError> {
    let n = model.dim();
    if law.dim() != n || law.covariance.nrows() != n || law.covariance.ncols() != n {
        return Err(GmrfError::DimensionMismatch {
            expected: n,
            got: law.dim(),
        });
    }
    let lambda = &model.precision;
    let trace = lambda.component_mul(&law.covariance).sum();
    let diff = &model.mean - &law.mean;
    let quad = diff.dot(&(lambda * &diff));
    let (logdet, floored) = match Cholesky::new(law.covariance.clone()) {
        Some(c) => (2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>(), false),
        None => {
            let eig = SymmetricEigen::new(symmetrize(law.covariance.clone()));
            (eig.eigenvalues.iter().map(|e| e.max(EIGEN_FLOOR).ln()).sum(), true)
        }
    };
    // ln det Σ_truth = -ln det Λ
    let value = 0.5 * (trace + quad - n as f64 - model.precision_logdet - logdet);
    Ok(KlDivergence {
        value: value.max(0.0),
        floored,
    })
}

/// Trace of the conditional covariance of the unobserved tokens given `observed`.
///
/// Computed from the precision: the complement `U` has conditional
/// covariance `(Λ_UU)^{-1}`.
pub fn conditional_variance_trace(model: &GmrfModel, observed: &[TokenPos]) -> Result<f64, GmrfError> {
    let obs: BTreeSet<usize> = model.indices(observed)?.into_iter().collect();
    let rest: Vec<usize> = (0..model.dim()).filter(|k| !obs.contains(k)).collect();
    if rest.is_empty() {
        return Err(GmrfError::NothingToComplete);
    }
    let lambda_uu = model.precision.select_rows(&rest).select_columns(&rest);
    let chol = Cholesky::new(lambda_uu).ok_or(GmrfError::NotPositiveDefinite)?;
    // tr((L L^T)^{-1}) = ||L^{-1}||_F^2
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(rest.len(), rest.len()))
        .ok_or(GmrfError::NotPositiveDefinite)?;
    Ok(l_inv.norm_squared())
}

/// Draws grid samples by actually executing a plan step by step.
#[derive(Debug, Clone)]
pub struct PlanSampler {
    dim: usize,
    steps: Vec<SamplerStep>,
}

#[derive(Debug, Clone)]
struct SamplerStep {
    targets: Vec<usize>,
    observed: Vec<usize>,
    regression: DMatrix<f64>,
    offset: DVector<f64>,
    scale: DVector<f64>,
}

impl PlanSampler {
    pub fn new(model: &GmrfModel, plan: &SamplingPlan, sampler: Option<&SamplerParams>) -> Result<Self, GmrfError> {
        check_plan(model, plan)?;
        let mut generated: Vec<TokenPos> = Vec::with_capacity(model.dim());
        let mut steps = Vec::with_capacity(plan.steps.len());
        for step in &plan.steps {
            let cond = conditional_law(model, &step.tokens, &generated)?;
            let scale = DVector::from_iterator(
                step.tokens.len(),
                step.diffusion_steps
                    .iter()
                    .enumerate()
                    .map(|(a, &t)| (cond.covariance[(a, a)].max(0.0) * innovation_scale(sampler, t)).sqrt()),
            );
            steps.push(SamplerStep {
                targets: model.indices(&step.tokens)?,
                observed: model.indices(&generated)?,
                regression: cond.regression,
                offset: cond.offset,
                scale,
            });
            generated.extend_from_slice(&step.tokens);
        }
        Ok(Self {
            dim: model.dim(),
            steps,
        })
    }

    /// One sample, raster order.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim);
        for step in &self.steps {
            let obs = x.select_rows(&step.observed);
            let cond_mean = &step.offset + &step.regression * obs;
            for (a, &k) in step.targets.iter().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                x[k] = cond_mean[a] + step.scale[a] * eps;
            }
        }
        x
    }
}

/// Sample moments; covariance uses the `n - 1` denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub n_samples: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn monte_carlo_execute(
    model: &GmrfModel,
    plan: &SamplingPlan,
    sampler: Option<&SamplerParams>,
    n_samples: usize,
    seed: u64,
) -> Result<EmpiricalMoments, GmrfError> {
    if n_samples == 0 {
        return Err(GmrfError::InvalidParameter("n_samples must be at least 1".into()));
    }
    let exec = PlanSampler::new(model, plan, sampler)?;
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Shifted by the model mean to keep the sums well conditioned.
    let shift = &model.mean;
    let mut sum = DVector::<f64>::zeros(n);
    let mut sum_sq = DMatrix::<f64>::zeros(n, n);
    for _ in 0..n_samples {
        let y = exec.sample(&mut rng) - shift;
        sum += &y;
        sum_sq.ger(1.0, &y, &y, 1.0);
    }
    let count = n_samples as f64;
    let centered_mean = &sum / count;
    let covariance = if n_samples > 1 {
        (sum_sq - &centered_mean * centered_mean.transpose() * count) / (count - 1.0)
    } else {
        DMatrix::zeros(n, n)
    };
    Ok(EmpiricalMoments {
        n_samples,
        mean: centered_mean + shift,
        covariance,
    })
}

/// Regression coefficients of `pos` on its `(2 window + 1)^2` neighbourhood,
/// row-major, with zeros for the centre and for cells outside the grid.
pub fn token_features(model: &GmrfModel, pos: TokenPos, window: usize) -> Result<ConditioningVector, GmrfError> {
    model.shape.check(pos)?;
    let side = 2 * window + 1;
    let mut cells: Vec<Option<TokenPos>> = Vec::with_capacity(side * side);
    for di in 0..side {
        for dj in 0..side {
            let i = (pos.i + di).checked_sub(window);
            let j = (pos.j + dj).checked_sub(window);
            let cell = match (i, j) {
                (Some(i), Some(j)) => Some(TokenPos::new(i, j)),
                _ => None,
            };
            cells.push(cell.filter(|c| model.shape.contains(*c) && *c != pos));
        }
    }
    let observed: Vec<TokenPos> = cells.iter().flatten().copied().collect();
    let cond = conditional_law(model, &[pos], &observed)?;
    let row = cond.regression.row(0);
    let mut coeffs = row.iter().copied();
    let values = cells
        .iter()
        .map(|c| c.map_or(0.0, |_| coeffs.next().unwrap_or(0.0)))
        .collect();
    Ok(ConditioningVector::new(values)?)
}
