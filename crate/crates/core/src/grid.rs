//! Token grid geometry, hierarchical stage partitioning and the baseline
//! sampling orders (raster, subsample, random).
//!
//! Positions are 0-based `(row, column)` pairs. The derived ordering of
//! [`TokenPos`] is row-major, so sorting a set of positions yields raster order
//! and "smaller raster index" comparisons are plain `<`.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("InvalidShape: grid dimensions must be at least 1x1 (got {h}x{w})")]
    InvalidShape { h: usize, w: usize },
    #[error("InvalidStageCount: stage count must be at least 2 (got {0})")]
    InvalidStageCount(usize),
    #[error("EmptyStage: stage {stage} of {stages} is empty on a {h}x{w} grid")]
    EmptyStage {
        stage: usize,
        stages: usize,
        h: usize,
        w: usize,
    },
    #[error("EmptySet: distance of an empty position set is undefined")]
    EmptySet,
    #[error("OutOfBounds: position ({i}, {j}) lies outside the {h}x{w} grid")]
    OutOfBounds { i: usize, j: usize, h: usize, w: usize },
}

/// Dimensions of the token grid, in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawShape")]
pub struct GridShape {
    h: usize,
    w: usize,
}

#[derive(Deserialize)]
struct RawShape {
    h: usize,
    w: usize,
}

impl TryFrom<RawShape> for GridShape {
    type Error = GridError;

    fn try_from(raw: RawShape) -> Result<Self, Self::Error> {
        GridShape::new(raw.h, raw.w)
    }
}

impl GridShape {
    pub fn new(h: usize, w: usize) -> Result<Self, GridError> {
        if h == 0 || w == 0 {
            return Err(GridError::InvalidShape { h, w });
        }
        Ok(Self { h, w })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// Total number of tokens.
    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, pos: TokenPos) -> bool {
        pos.i < self.h && pos.j < self.w
    }

    pub fn check(&self, pos: TokenPos) -> Result<(), GridError> {
        if self.contains(pos) {
            Ok(())
        } else {
            Err(GridError::OutOfBounds {
                i: pos.i,
                j: pos.j,
                h: self.h,
                w: self.w,
            })
        }
    }

    /// Row-major index of a position.
    pub fn index(&self, pos: TokenPos) -> usize {
        pos.i * self.w + pos.j
    }

    pub fn pos(&self, index: usize) -> TokenPos {
        TokenPos::new(index / self.w, index % self.w)
    }

    /// All positions in raster order.
    pub fn positions(&self) -> impl Iterator<Item = TokenPos> + '_ {
        (0..self.len()).map(|k| self.pos(k))
    }

    /// The 4-neighbours of `pos` that lie inside the grid.
    pub fn neighbors(&self, pos: TokenPos) -> impl Iterator<Item = TokenPos> + '_ {
        let TokenPos { i, j } = pos;
        let up = i.checked_sub(1).map(|i| TokenPos::new(i, j));
        let left = j.checked_sub(1).map(|j| TokenPos::new(i, j));
        let down = Some(TokenPos::new(i + 1, j));
        let right = Some(TokenPos::new(i, j + 1));
        [up, left, right, down]
            .into_iter()
            .flatten()
            .filter(move |p| self.contains(*p))
    }

    /// Positions with `(i + j)` even, in raster order.
    pub fn even_parity(&self) -> Vec<TokenPos> {
        self.positions().filter(|p| p.parity() == 0).collect()
    }

    /// Positions with `(i + j)` odd, in raster order.
    pub fn odd_parity(&self) -> Vec<TokenPos> {
        self.positions().filter(|p| p.parity() == 1).collect()
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

/// A token position. Serialized as the two-element array `[i, j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenPos {
    pub i: usize,
    pub j: usize,
}

impl TokenPos {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    pub fn manhattan(&self, other: &TokenPos) -> usize {
        self.i.abs_diff(other.i) + self.j.abs_diff(other.j)
    }

    fn parity(&self) -> usize {
        (self.i + self.j) % 2
    }
}

impl From<[usize; 2]> for TokenPos {
    fn from([i, j]: [usize; 2]) -> Self {
        Self { i, j }
    }
}

impl From<TokenPos> for [usize; 2] {
    fn from(p: TokenPos) -> Self {
        [p.i, p.j]
    }
}

impl fmt::Display for TokenPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// How [`partition_stages`] treats stages whose residue class is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyStagePolicy {
    /// Reject with [`GridError::EmptyStage`].
    #[default]
    Strict,
    /// Drop empty stages and renumber the remaining ones.
    Lenient,
}

/// The `K` disjoint stage subsets `S_1 … S_K`. Each subset is stored in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePartition {
    shape: GridShape,
    stages: Vec<Vec<TokenPos>>,
}

impl StagePartition {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Number of stages `K`.
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Stage `k`, 1-based.
    pub fn stage(&self, k: usize) -> &[TokenPos] {
        &self.stages[k - 1]
    }

    pub fn stages(&self) -> &[Vec<TokenPos>] {
        &self.stages
    }

    /// The reconstruction stage `S_K`.
    pub fn last(&self) -> &[TokenPos] {
        self.stages.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.stages.iter().map(Vec::len).collect()
    }
}

impl Serialize for StagePartition {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("StagePartition", 4)?;
        s.serialize_field("h", &self.shape.h)?;
        s.serialize_field("w", &self.shape.w)?;
        s.serialize_field("K", &self.stages.len())?;
        s.serialize_field("stages", &self.stages)?;
        s.end()
    }
}

/// Hierarchical modular bisection of the grid into `stages` subsets.
///
/// Iteration `k` peels off the positions of the remaining set with
/// `(i + j) mod 2^k == 2^(k-1)` onto a stack and keeps those with residue 0.
/// Popping the stack yields `S_1` (the sparsest lattice, residue 0 modulo
/// `2^(K-1)`) first and the odd-parity checkerboard half last.
pub fn partition_stages(
    shape: GridShape,
    stages: usize,
    policy: EmptyStagePolicy,
) -> Result<StagePartition, GridError> {
    if stages < 2 {
        return Err(GridError::InvalidStageCount(stages));
    }
    let mut remaining: Vec<TokenPos> = shape.positions().collect();
    let mut stack: Vec<Vec<TokenPos>> = Vec::with_capacity(stages);
    for k in 1..stages {
        let modulus = pow2(k);
        let residue = pow2(k - 1);
        // Everything left has residue 0 modulo 2^(k-1), so modulo 2^k it is
        // either 0 or 2^(k-1).
        let (peeled, kept): (Vec<_>, Vec<_>) = remaining
            .into_iter()
            .partition(|p| Some(rem(p.i + p.j, modulus)) == residue);
        stack.push(peeled);
        remaining = kept;
    }
    stack.push(remaining);

    let popped: Vec<Vec<TokenPos>> = stack.into_iter().rev().collect();
    let out = match policy {
        EmptyStagePolicy::Strict => {
            if let Some(k) = popped.iter().position(Vec::is_empty) {
                return Err(GridError::EmptyStage {
                    stage: k + 1,
                    stages,
                    h: shape.h,
                    w: shape.w,
                });
            }
            popped
        }
        EmptyStagePolicy::Lenient => popped.into_iter().filter(|s| !s.is_empty()).collect(),
    };
    Ok(StagePartition { shape, stages: out })
}

// 2^k saturating to "larger than any coordinate sum".
fn pow2(k: usize) -> Option<usize> {
    u32::try_from(k).ok().and_then(|k| 1usize.checked_shl(k))
}

fn rem(x: usize, modulus: Option<usize>) -> usize {
    match modulus {
        Some(m) => x % m,
        None => x,
    }
}

/// Top-left to bottom-right.
pub fn order_raster(shape: GridShape) -> Vec<TokenPos> {
    shape.positions().collect()
}

/// The alternative readings of the "subsample" baseline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubsampleVariant {
    /// Parity cosets `(i mod 2, j mod 2)` in order (0,0), (0,1), (1,0), (1,1),
    /// raster order within each coset.
    #[default]
    ParityCosets,
    /// Contiguous spatial quadrants (top-left, top-right, bottom-left,
    /// bottom-right), raster order within each block.
    QuadrantBlocks,
}

pub fn order_subsample(shape: GridShape) -> Vec<TokenPos> {
    order_subsample_variant(shape, SubsampleVariant::ParityCosets)
}

pub fn order_subsample_variant(shape: GridShape, variant: SubsampleVariant) -> Vec<TokenPos> {
    let mid_i = shape.h.div_ceil(2);
    let mid_j = shape.w.div_ceil(2);
    let class = |p: &TokenPos| -> usize {
        match variant {
            SubsampleVariant::ParityCosets => 2 * (p.i % 2) + p.j % 2,
            SubsampleVariant::QuadrantBlocks => 2 * usize::from(p.i >= mid_i) + usize::from(p.j >= mid_j),
        }
    };
    let mut out = order_raster(shape);
    // stable sort keeps raster order within each class
    out.sort_by_key(class);
    out
}

/// A uniformly random permutation of all positions, reproducible from `seed`.
pub fn order_random(shape: GridShape, seed: u64) -> Vec<TokenPos> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = order_raster(shape);
    out.shuffle(&mut rng);
    out
}

/// Minimum pairwise Manhattan distance within `set`; `usize::MAX` for a singleton.
pub fn min_intra_set_distance(set: &[TokenPos]) -> Result<usize, GridError> {
    if set.is_empty() {
        return Err(GridError::EmptySet);
    }
    let mut best = usize::MAX;
    for (a, p) in set.iter().enumerate() {
        for q in &set[a + 1..] {
            best = best.min(p.manhattan(q));
        }
    }
    Ok(best)
}

/// Checks that `sets` are pairwise disjoint and together cover the grid.
pub fn is_exact_cover(shape: GridShape, sets: &[Vec<TokenPos>]) -> bool {
    let mut seen = BTreeSet::new();
    for p in sets.iter().flatten() {
        if !shape.contains(*p) || !seen.insert(*p) {
            return false;
        }
    }
    seen.len() == shape.len()
}
