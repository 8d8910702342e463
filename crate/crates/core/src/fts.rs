//! Frequency-weighted token selection.
//!
//! Each token's conditioning vector is transformed with a DFT; the amplitudes
//! of the non-DC bins `n = 1 ..= D/2` are summed with linearly increasing
//! weights `1 + n / (D/2)`, so vectors with more high-frequency content score
//! higher. The top fraction of tokens by score is selected for extra
//! diffusion steps.

use std::cell::RefCell;
use std::cmp::Ordering;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::grid::TokenPos;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FtsError {
    #[error("conditioning vector needs at least 2 components (got {0})")]
    TooShort(usize),
    #[error("conditioning vector component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("InvalidBeta: selection fraction must lie in (0, 1] (got {0})")]
    InvalidBeta(f64),
    #[error("importance score must be finite and non-negative (got {0})")]
    InvalidScore(f64),
    #[error("no scores to rank")]
    NoScores,
}

/// Per-token feature vector `z` of dimension `D >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector(Vec<f64>);

impl ConditioningVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FtsError> {
        if values.len() < 2 {
            return Err(FtsError::TooShort(values.len()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FtsError::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Amplitudes `A(0) ..= A(D/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSpectrum(Vec<f64>);

impl AmplitudeSpectrum {
    pub fn from_amplitudes(amplitudes: Vec<f64>) -> Self {
        Self(amplitudes)
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.0
    }

    /// `s = sum_{n=1}^{D/2} A(n) (1 + n / (D/2))`.
    pub fn weighted_score(&self) -> ImportanceScore {
        let half = (self.0.len() - 1) as f64;
        let s = self.0[1..]
            .iter()
            .enumerate()
            .map(|(k, a)| a * (1.0 + (k + 1) as f64 / half))
            .sum();
        ImportanceScore(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct ImportanceScore(f64);

impl ImportanceScore {
    pub fn new(value: f64) -> Result<Self, FtsError> {
        if value.is_finite() && value >= 0.0 {
            Ok(Self(value))
        } else {
            Err(FtsError::InvalidScore(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn dft_amplitude(z: &ConditioningVector) -> AmplitudeSpectrum {
    let d = z.dim();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(d));
    let mut buf: Vec<Complex<f64>> = z.values().iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    AmplitudeSpectrum(buf[..=d / 2].iter().map(|c| c.norm()).collect())
}

pub fn fts_score(z: &ConditioningVector) -> ImportanceScore {
    dft_amplitude(z).weighted_score()
}

/// Number of tokens selected by fraction `beta` out of `len`: `ceil(beta * len)`.
///
/// A relative slack of 1e-9 absorbs representation error in products such as
/// `0.1 * 30`.
pub fn selection_count(beta: f64, len: usize) -> Result<usize, FtsError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(FtsError::InvalidBeta(beta));
    }
    let x = beta * len as f64;
    Ok(((x - 1e-9 * x.max(1.0)).ceil() as usize).min(len))
}

/// The `ceil(beta * len)` highest-scoring positions, returned in raster order.
/// Equal scores are resolved in favour of the smaller raster index.
pub fn rank_tokens(scores: &[(TokenPos, ImportanceScore)], beta: f64) -> Result<Vec<TokenPos>, FtsError> {
    if scores.is_empty() {
        return Err(FtsError::NoScores);
    }
    let count = selection_count(beta, scores.len())?;
    let mut ranked: Vec<&(TokenPos, ImportanceScore)> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.1 .0
            .partial_cmp(&a.1 .0)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut out: Vec<TokenPos> = ranked[..count].iter().map(|(p, _)| *p).collect();
    out.sort();
    Ok(out)
}
