//! Phylogenetic trees, nucleotide substitution models and the pruning
//! likelihood.

mod likelihood;
mod model;
mod tree;

use num_bigint::BigUint;
use thiserror::Error;

pub use likelihood::{
    log_likelihood, log_likelihood_patterns, log_likelihood_rooted_at, state_index, SitePatterns,
};
pub use model::{
    discrete_gamma_rates, lset_parse, transition_matrix, Eigensystem, Nst, RateVariation,
    SubstitutionModel, TransitionMatrix, RATE_LABELS, RATE_PAIRS,
};
pub use tree::{
    enumerate_topologies, parse_newick, random_tree, topology_cmp, Edge, PhyloTree, Split,
};

/// Largest taxon count accepted by [`enumerate_topologies`].
pub const MAX_ENUMERATE_TAXA: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyloError {
    #[error("a tree needs at least 3 taxa, got {0}")]
    TooFewTaxa(usize),
    #[error("{n} taxa exceeds the limit of {max}")]
    TooManyTaxa { n: usize, max: usize },
    #[error("duplicate taxon '{0}'")]
    DuplicateTaxon(String),
    #[error("invalid taxon label '{0}'")]
    InvalidLabel(String),
    #[error("invalid tree structure: {0}")]
    InvalidStructure(String),
    #[error("bad branch length: {0}")]
    BranchLength(String),
    #[error("newick syntax error at byte {pos}: {msg}")]
    Newick { pos: usize, msg: String },
    #[error("node at byte {pos} has {degree} children; trees must be binary")]
    NonBinary { pos: usize, degree: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("malformed lset command: {0}")]
    Lset(String),
    #[error("unknown lset key '{0}'")]
    UnknownKey(String),
    #[error("illegal value '{value}' for lset key '{key}'")]
    IllegalValue { key: String, value: String },
    #[error("tree taxa and alignment taxa differ")]
    TaxaMismatch,
    #[error("sequences are not aligned")]
    NotAligned,
}

pub type Result<T, E = PhyloError> = std::result::Result<T, E>;

/// Number of unrooted binary topologies on `n` labeled taxa, `(2n-5)!!`.
pub fn count_topologies(n: usize) -> Result<BigUint> {
    if n < 3 {
        return Err(PhyloError::TooFewTaxa(n));
    }
    let mut acc = BigUint::from(1u32);
    let mut k = 3usize;
    while k <= 2 * n - 5 {
        acc *= BigUint::from(k);
        k += 2;
    }
    Ok(acc)
}

/// `d.dd·10^e` style rendering, e.g. `8.69e36`, with `digits` significant
/// digits. Exact for any size since it works on the decimal string.
pub fn scientific(x: &BigUint, digits: usize) -> String {
    let s = x.to_str_radix(10);
    let digits = digits.max(1);
    if s.len() <= digits {
        return s;
    }
    let exp = s.len() - 1;
    let mut mant: Vec<u8> = s.as_bytes()[..digits].iter().map(|b| b - b'0').collect();
    let mut exp = exp;
    if s.as_bytes()[digits] >= b'5' {
        let mut i = digits;
        loop {
            if i == 0 {
                mant.insert(0, 1);
                mant.pop();
                exp += 1;
                break;
            }
            i -= 1;
            if mant[i] == 9 {
                mant[i] = 0;
            } else {
                mant[i] += 1;
                break;
            }
        }
    }
    let mut out = String::new();
    out.push((b'0' + mant[0]) as char);
    if digits > 1 {
        out.push('.');
        out.extend(mant[1..].iter().map(|d| (b'0' + d) as char));
    }
    format!("{out}e{exp}")
}

/// Canonical Newick with branch lengths.
pub fn write_newick<T: crate::scalar::Real>(t: &PhyloTree<T>) -> String {
    t.to_newick()
}
