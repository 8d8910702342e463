//! Brute-force reference implementations for tests.
//!
//! Nothing here calls into the code paths it checks: the DFT is a literal
//! double loop, Gaussian conditioning inverts dense blocks outright, the
//! sampler variance uses the geometric-series closed form, and plan costs are
//! recounted by a flat walk over the steps.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::fts::AmplitudeSpectrum;
use crate::gmrf::GmrfError;
use crate::grid::{GridShape, TokenPos};
use crate::plan::{CostCounters, SamplingPlan, StageCost};

/// `A(n) = |sum_d z(d) exp(-2 pi i n d / D)|` for `n = 0 ..= D/2`.
pub fn naive_dft(z: &[f64]) -> AmplitudeSpectrum {
    let d = z.len();
    let mut amplitudes = Vec::with_capacity(d / 2 + 1);
    for n in 0..=d / 2 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (k, x) in z.iter().enumerate() {
            let angle = -2.0 * PI * (n * k) as f64 / d as f64;
            re += x * angle.cos();
            im += x * angle.sin();
        }
        amplitudes.push((re * re + im * im).sqrt());
    }
    AmplitudeSpectrum::from_amplitudes(amplitudes)
}

pub fn naive_score(z: &[f64]) -> f64 {
    let spectrum = naive_dft(z);
    let a = spectrum.amplitudes();
    let half = z.len() / 2;
    let mut s = 0.0;
    for n in 1..=half {
        s += a[n] * (1.0 + n as f64 / half as f64);
    }
    s
}

/// Signal energy recovered from the half spectrum of a real signal of
/// length `d`, i.e. `(1/D) sum_{n=0}^{D-1} |F(n)|^2`.
pub fn parseval_energy(spectrum: &AmplitudeSpectrum, d: usize) -> f64 {
    let a = spectrum.amplitudes();
    let mut total = a[0] * a[0];
    for n in 1..=d / 2 {
        let mirrored = d % 2 == 1 || n < d / 2;
        total += if mirrored { 2.0 } else { 1.0 } * a[n] * a[n];
    }
    total / d as f64
}

/// Schur-complement conditioning with full dense inversion of the observed
/// block. Returns `(regression, conditional covariance)`.
pub fn dense_conditional(
    covariance: &DMatrix<f64>,
    target: &[usize],
    observed: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>), GmrfError> {
    let block = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| covariance[(rows[r], cols[c])])
    };
    let s_tt = block(target, target);
    if observed.is_empty() {
        return Ok((DMatrix::zeros(target.len(), 0), s_tt));
    }
    let s_oo = block(observed, observed);
    if s_oo.clone().cholesky().is_none() {
        return Err(GmrfError::NotPositiveDefinite);
    }
    let inv = s_oo.try_inverse().ok_or(GmrfError::NotPositiveDefinite)?;
    let s_to = block(target, observed);
    let regression = &s_to * inv;
    let conditional = s_tt - &regression * s_to.transpose();
    Ok((regression, conditional))
}

/// Trace of `Σ_UU - Σ_UO Σ_OO^{-1} Σ_OU` over the complement `U` of `observed`.
pub fn schur_conditional_trace(covariance: &DMatrix<f64>, observed: &[usize]) -> Result<f64, GmrfError> {
    let rest: Vec<usize> = (0..covariance.nrows()).filter(|k| !observed.contains(k)).collect();
    let (_, cond) = dense_conditional(covariance, &rest, observed)?;
    Ok(cond.trace())
}

/// `KL(N(m1, c1) || N(m0, c0))` from explicit inverse and determinants.
pub fn dense_gaussian_kl(
    m1: &DVector<f64>,
    c1: &DMatrix<f64>,
    m0: &DVector<f64>,
    c0: &DMatrix<f64>,
) -> Result<f64, GmrfError> {
    let n = m1.len() as f64;
    let inv0 = c0.clone().try_inverse().ok_or(GmrfError::NotPositiveDefinite)?;
    let det0 = c0.determinant();
    let det1 = c1.determinant();
    if det0 <= 0.0 || det1 <= 0.0 {
        return Err(GmrfError::NotPositiveDefinite);
    }
    let diff = m0 - m1;
    let quad = (diff.transpose() * &inv0 * &diff)[(0, 0)];
    Ok(0.5 * ((&inv0 * c1).trace() + quad - n + (det0 / det1).ln()))
}

/// Closed form of the per-token sampler recursion:
/// `v_T = a^T + c (1 - a^T) / (1 - a)` with `a = (1 - beta dt / 2)^2`, `c = beta dt`.
pub fn sampler_variance_closed_form(steps: u32, beta_rate: f64, horizon: f64) -> f64 {
    let dt = horizon / f64::from(steps);
    let a = (1.0 - 0.5 * beta_rate * dt).powi(2);
    let c = beta_rate * dt;
    let at = a.powi(steps as i32);
    if (1.0 - a).abs() < 1e-300 {
        return 1.0 + c * f64::from(steps);
    }
    at + c * (1.0 - at) / (1.0 - a)
}

/// Cost counters by a flat walk over the plan.
pub fn recount_cost(plan: &SamplingPlan) -> CostCounters {
    let mut ar = 0u64;
    let mut tokens = 0u64;
    let mut diffusion = 0u64;
    let mut stages: Vec<StageCost> = Vec::new();
    for step in &plan.steps {
        ar += 1;
        while stages.len() < step.stage {
            let stage = stages.len() + 1;
            stages.push(StageCost {
                stage,
                ..StageCost::default()
            });
        }
        let entry = &mut stages[step.stage - 1];
        entry.ar_steps += 1;
        for &t in &step.diffusion_steps {
            tokens += 1;
            diffusion += u64::from(t);
            entry.tokens += 1;
            entry.token_diffusion_steps += u64::from(t);
        }
    }
    CostCounters {
        ar_steps: ar,
        tokens,
        token_diffusion_steps: diffusion,
        per_stage: stages.into_iter().filter(|s| s.ar_steps > 0).collect(),
    }
}

pub fn indices(shape: GridShape, set: &[TokenPos]) -> Vec<usize> {
    set.iter().map(|p| p.i * shape.w() + p.j).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceMode {
    Absolute,
    Relative,
    /// Passes when either error is within tolerance.
    Either,
}

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub mode: ToleranceMode,
    pub pass: bool,
}

impl OracleReport {
    /// Compares `actual` against `expected` element-wise. Relative error is
    /// taken against `max(|expected|, floor)`.
    pub fn compare(
        name: impl Into<String>,
        actual: &[f64],
        expected: &[f64],
        tolerance: f64,
        mode: ToleranceMode,
        floor: f64,
    ) -> Self {
        let mut max_abs_err: f64 = if actual.len() == expected.len() {
            0.0
        } else {
            f64::INFINITY
        };
        let mut max_rel_err: f64 = max_abs_err;
        for (a, e) in actual.iter().zip(expected) {
            let abs = (a - e).abs();
            max_abs_err = max_abs_err.max(abs);
            max_rel_err = max_rel_err.max(abs / e.abs().max(floor));
        }
        let pass = match mode {
            ToleranceMode::Absolute => max_abs_err <= tolerance,
            ToleranceMode::Relative => max_rel_err <= tolerance,
            ToleranceMode::Either => max_abs_err <= tolerance || max_rel_err <= tolerance,
        };
        Self {
            name: name.into(),
            max_abs_err,
            max_rel_err,
            tolerance,
            mode,
            pass,
        }
    }

    /// Merges reports of the same check, keeping the worst errors.
    pub fn merge(self, other: OracleReport) -> Self {
        Self {
            max_abs_err: self.max_abs_err.max(other.max_abs_err),
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            pass: self.pass && other.pass,
            ..self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft_examples() {
        let dc = naive_dft(&[2.0; 6]);
        assert!((dc.amplitudes()[0] - 12.0).abs() < 1e-12);
        assert!(dc.amplitudes()[1..].iter().all(|a| a.abs() < 1e-12));
        let alt: Vec<f64> = (0..8).map(|d| if d % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((naive_dft(&alt).amplitudes()[4] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn parseval_holds() {
        for d in [5usize, 8, 13, 64] {
            let z: Vec<f64> = (0..d).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.3).collect();
            let energy: f64 = z.iter().map(|x| x * x).sum();
            let rebuilt = parseval_energy(&naive_dft(&z), d);
            assert!((energy - rebuilt).abs() <= 1e-9 * energy);
        }
    }

    #[test]
    fn dense_conditional_examples() {
        let (reg, cov) = dense_conditional(&DMatrix::identity(3, 3), &[0, 2], &[1]).unwrap();
        assert!(reg.amax() == 0.0);
        assert_eq!(cov, DMatrix::identity(2, 2));
        let c = 0.6;
        let two = DMatrix::from_row_slice(2, 2, &[1.0, c, c, 1.0]);
        let (_, cov) = dense_conditional(&two, &[1], &[0]).unwrap();
        assert!((cov[(0, 0)] - (1.0 - c * c)).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            dense_conditional(&bad, &[0], &[0, 1]),
            Err(GmrfError::NotPositiveDefinite)
        );
    }

    #[test]
    fn sampler_closed_form_examples() {
        assert!((sampler_variance_closed_form(1, 2.0, 1.0) - 2.0).abs() < 1e-15);
        assert!((sampler_variance_closed_form(2, 2.0, 1.0) - 1.3125).abs() < 1e-15);
    }

    #[test]
    fn report_modes() {
        let r = OracleReport::compare("x", &[1.0, 2.0], &[1.0, 2.0 + 1e-6], 1e-9, ToleranceMode::Relative, 1.0);
        assert!(!r.pass);
        let r = OracleReport::compare("x", &[1.0], &[1.0 + 1e-12], 1e-9, ToleranceMode::Either, 1.0);
        assert!(r.pass);
        assert!(!OracleReport::compare("x", &[1.0], &[], 1.0, ToleranceMode::Absolute, 1.0).pass);
    }
}
