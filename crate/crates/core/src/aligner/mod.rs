//! Progressive multiple alignment with per-column conservation scoring.
//!
//! Pipeline: all-pairs global alignment (affine gaps) gives p-distances,
//! UPGMA turns those into a guide tree, and profiles are merged up the tree
//! with a profile-profile Needleman-Wunsch.

mod dp;
mod guide;
mod progressive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqio::{Alignment, SeqError, SequenceRecord};

pub use guide::{build_guide_tree, DistanceMatrix, GuideNode, GuideTree};
pub use progressive::{
    conservation_profile, distance_matrix, progressive_align, realign, realign_with_workers,
    ConservationProfile,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("invalid scoring parameters: {0}")]
    InvalidScoring(String),
    #[error("sequence '{0}' has no residues")]
    EmptySequence(String),
    #[error("aligned strings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} sequences, got {got}")]
    TooFewSequences { needed: usize, got: usize },
    #[error("guide tree leaves do not match the sequence labels")]
    LeafMismatch,
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("alignment is not aligned")]
    NotAligned,
    #[error(transparent)]
    Seq(#[from] SeqError),
}

pub type Result<T, E = AlignError> = std::result::Result<T, E>;

/// Substitution and affine gap scores. A gap of length `k` costs
/// `gap_open + (k - 1) * gap_extend`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringParams {
    #[serde(rename = "match")]
    pub match_score: i32,
    pub mismatch: i32,
    pub gap_open: i32,
    pub gap_extend: i32,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            match_score: 2,
            mismatch: -1,
            gap_open: -4,
            gap_extend: -1,
        }
    }
}

impl ScoringParams {
    pub fn new(match_score: i32, mismatch: i32, gap_open: i32, gap_extend: i32) -> Result<Self> {
        let s = Self {
            match_score,
            mismatch,
            gap_open,
            gap_extend,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.match_score <= self.mismatch {
            return Err(AlignError::InvalidScoring(
                "match must exceed mismatch".into(),
            ));
        }
        if !(self.gap_open <= self.gap_extend && self.gap_extend <= 0) {
            return Err(AlignError::InvalidScoring(
                "need gap_open <= gap_extend <= 0".into(),
            ));
        }
        Ok(())
    }

    /// Residue-residue score. `N` never matches.
    #[inline]
    pub fn substitution(&self, a: u8, b: u8) -> i32 {
        if a == b && a != b'N' {
            self.match_score
        } else {
            self.mismatch
        }
    }

    /// Cost of a run of `len` gap characters.
    pub fn gap_cost(&self, len: usize) -> i64 {
        if len == 0 {
            0
        } else {
            self.gap_open as i64 + (len as i64 - 1) * self.gap_extend as i64
        }
    }
}

/// Two gapped strings of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub a: String,
    pub b: String,
}

/// Optimal global alignment of two sequences (Gotoh). Gaps already present
/// in the inputs are removed first.
pub fn pairwise_align(
    a: &SequenceRecord,
    b: &SequenceRecord,
    s: &ScoringParams,
) -> Result<(AlignedPair, i64)> {
    s.validate()?;
    let x = a.ungapped().into_bytes();
    let y = b.ungapped().into_bytes();
    if x.is_empty() {
        return Err(AlignError::EmptySequence(a.id.clone()));
    }
    if y.is_empty() {
        return Err(AlignError::EmptySequence(b.id.clone()));
    }
    let (score, ops) = dp::gotoh(
        x.len(),
        y.len(),
        |i, j| s.substitution(x[i], y[j]) as f64,
        s.gap_open as f64,
        s.gap_extend as f64,
    );
    let (mut ra, mut rb) = (String::new(), String::new());
    let (mut i, mut j) = (0, 0);
    for op in ops {
        match op {
            dp::Op::Match => {
                ra.push(x[i] as char);
                rb.push(y[j] as char);
                i += 1;
                j += 1;
            }
            dp::Op::GapInB => {
                ra.push(x[i] as char);
                rb.push('-');
                i += 1;
            }
            dp::Op::GapInA => {
                ra.push('-');
                rb.push(y[j] as char);
                j += 1;
            }
        }
    }
    Ok((AlignedPair { a: ra, b: rb }, score.round() as i64))
}

/// Fraction of differing sites among sites where neither string has `-`
/// or `N`. Zero when nothing is comparable.
pub fn p_distance(a: &str, b: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(AlignError::LengthMismatch(a.len(), b.len()));
    }
    let (mut compared, mut differ) = (0usize, 0usize);
    for (x, y) in a.bytes().zip(b.bytes()) {
        if matches!(x, b'-' | b'N') || matches!(y, b'-' | b'N') {
            continue;
        }
        compared += 1;
        if x != y {
            differ += 1;
        }
    }
    Ok(if compared == 0 {
        0.0
    } else {
        differ as f64 / compared as f64
    })
}

/// Scores an existing pairwise alignment under affine gaps.
pub fn score_alignment(a: &str, b: &str, s: &ScoringParams) -> Result<i64> {
    if a.len() != b.len() {
        return Err(AlignError::LengthMismatch(a.len(), b.len()));
    }
    let mut total = 0i64;
    // 0 = none, 1 = gap in b, 2 = gap in a
    let mut prev = 0u8;
    for (x, y) in a.bytes().zip(b.bytes()) {
        match (x == b'-', y == b'-') {
            (false, false) => {
                total += s.substitution(x, y) as i64;
                prev = 0;
            }
            (false, true) => {
                total += if prev == 1 { s.gap_extend } else { s.gap_open } as i64;
                prev = 1;
            }
            (true, false) => {
                total += if prev == 2 { s.gap_extend } else { s.gap_open } as i64;
                prev = 2;
            }
            (true, true) => {}
        }
    }
    Ok(total)
}

fn check_aligned(a: &Alignment) -> Result<()> {
    if a.is_aligned() {
        Ok(())
    } else {
        Err(AlignError::NotAligned)
    }
}
