use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dp::{gotoh, Op};
use super::guide::{build_guide_tree, DistanceMatrix, GuideNode, GuideTree};
use super::{check_aligned, p_distance, pairwise_align, AlignError, Result, ScoringParams};
use crate::seqio::{Alignment, SequenceRecord};

/// All-pairs p-distances after pairwise global alignment.
///
/// Pairs are computed on `workers` threads; the result does not depend on
/// the worker count or on the order pairs finish in.
pub fn distance_matrix(
    seqs: &[SequenceRecord],
    s: &ScoringParams,
    workers: usize,
) -> Result<DistanceMatrix> {
    let n = seqs.len();
    if n < 2 {
        return Err(AlignError::TooFewSequences { needed: 2, got: n });
    }
    s.validate()?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let compute = |&(i, j): &(usize, usize)| -> Result<f64> {
        let (pair, _) = pairwise_align(&seqs[i], &seqs[j], s)?;
        p_distance(&pair.a, &pair.b)
    };
    let values: Vec<f64> = if workers <= 1 {
        pairs.iter().map(compute).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| AlignError::InvalidScoring(format!("thread pool: {e}")))?;
        pool.install(|| pairs.par_iter().map(compute).collect::<Result<_>>())?
    };
    let mut d = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        d[i][j] = v;
        d[j][i] = v;
    }
    DistanceMatrix::new(seqs.iter().map(|r| r.id.clone()).collect(), d)
}

const SYMBOLS: usize = 6;
const GAP: usize = 5;

fn symbol_index(b: u8) -> usize {
    match b {
        b'A' => 0,
        b'C' => 1,
        b'G' => 2,
        b'T' => 3,
        b'N' => 4,
        _ => GAP,
    }
}

const SYMBOL_BYTES: [u8; SYMBOLS] = [b'A', b'C', b'G', b'T', b'N', b'-'];

/// Rows of one partially aligned group, tagged with their input index.
struct Profile {
    rows: Vec<(usize, Vec<u8>)>,
}

impl Profile {
    fn width(&self) -> usize {
        self.rows[0].1.len()
    }

    fn column_counts(&self) -> Vec<[f64; SYMBOLS]> {
        let mut out = vec![[0.0; SYMBOLS]; self.width()];
        for (_, row) in &self.rows {
            for (c, &b) in row.iter().enumerate() {
                out[c][symbol_index(b)] += 1.0;
            }
        }
        out
    }
}

/// Mean pairwise score between two profile columns.
fn pair_table(s: &ScoringParams) -> [[f64; SYMBOLS]; SYMBOLS] {
    let mut t = [[0.0; SYMBOLS]; SYMBOLS];
    for (a, row) in t.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = match (a == GAP, b == GAP) {
                (true, true) => 0.0,
                (true, false) | (false, true) => s.gap_open as f64,
                (false, false) => s.substitution(SYMBOL_BYTES[a], SYMBOL_BYTES[b]) as f64,
            };
        }
    }
    t
}

fn merge_profiles(p: Profile, q: Profile, s: &ScoringParams) -> Profile {
    let table = pair_table(s);
    let cp = p.column_counts();
    let cq = q.column_counts();
    let norm = (p.rows.len() * q.rows.len()) as f64;
    let score = |i: usize, j: usize| {
        let mut total = 0.0;
        for a in 0..SYMBOLS {
            if cp[i][a] == 0.0 {
                continue;
            }
            for b in 0..SYMBOLS {
                total += cp[i][a] * cq[j][b] * table[a][b];
            }
        }
        total / norm
    };
    let (_, ops) = gotoh(
        p.width(),
        q.width(),
        score,
        s.gap_open as f64,
        s.gap_extend as f64,
    );

    let len = ops.len();
    let mut rows: Vec<(usize, Vec<u8>)> = p
        .rows
        .iter()
        .chain(q.rows.iter())
        .map(|(k, _)| (*k, Vec::with_capacity(len)))
        .collect();
    let np = p.rows.len();
    let (mut i, mut j) = (0, 0);
    for op in ops {
        let (take_p, take_q) = match op {
            Op::Match => (true, true),
            Op::GapInB => (true, false),
            Op::GapInA => (false, true),
        };
        for (r, (_, src)) in p.rows.iter().enumerate() {
            rows[r].1.push(if take_p { src[i] } else { b'-' });
        }
        for (r, (_, src)) in q.rows.iter().enumerate() {
            rows[np + r].1.push(if take_q { src[j] } else { b'-' });
        }
        i += take_p as usize;
        j += take_q as usize;
    }
    Profile { rows }
}

/// Merges sequences up the guide tree. Output rows keep the input order.
pub fn progressive_align(
    seqs: &[SequenceRecord],
    guide: &GuideTree,
    s: &ScoringParams,
) -> Result<Alignment> {
    s.validate()?;
    let index: HashMap<&str, usize> = seqs
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut leaves = guide.leaves();
    leaves.sort_unstable();
    let mut ids: Vec<&str> = seqs.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    if leaves != ids || index.len() != seqs.len() {
        return Err(AlignError::LeafMismatch);
    }

    let mut profiles: Vec<Option<Profile>> = Vec::with_capacity(guide.nodes().len());
    for node in guide.nodes() {
        let prof = match node {
            GuideNode::Leaf(label) => {
                let k = index[label.as_str()];
                let residues = seqs[k].ungapped().into_bytes();
                if residues.is_empty() {
                    return Err(AlignError::EmptySequence(label.clone()));
                }
                Profile {
                    rows: vec![(k, residues)],
                }
            }
            GuideNode::Merge { left, right, .. } => {
                let l = profiles[*left].take().expect("child merged once");
                let r = profiles[*right].take().expect("child merged once");
                merge_profiles(l, r, s)
            }
        };
        profiles.push(Some(prof));
    }
    let mut root = profiles[guide.root()].take().expect("root profile");
    root.rows.sort_by_key(|(k, _)| *k);
    let records = root
        .rows
        .into_iter()
        .map(|(k, row)| SequenceRecord {
            id: seqs[k].id.clone(),
            residues: String::from_utf8(row).expect("ASCII residues"),
        })
        .collect();
    Ok(Alignment::new(records)?)
}

/// Per-column agreement: share of rows carrying the column's most frequent
/// residue (gaps never count as the modal residue). All-gap columns score 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationProfile {
    pub scores: Vec<f64>,
    pub mean: f64,
}

pub fn conservation_profile(a: &Alignment) -> Result<ConservationProfile> {
    check_aligned(a)?;
    let ncol = a.nchar().unwrap_or(0);
    let nrow = a.ntax() as f64;
    let rows: Vec<&[u8]> = a.records().iter().map(|r| r.residues.as_bytes()).collect();
    let scores: Vec<f64> = (0..ncol)
        .map(|c| {
            let mut counts = [0usize; SYMBOLS];
            for row in &rows {
                counts[symbol_index(row[c])] += 1;
            }
            let modal = counts[..GAP].iter().copied().max().unwrap_or(0);
            modal as f64 / nrow
        })
        .collect();
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    Ok(ConservationProfile { scores, mean })
}

/// Strips gaps and re-runs the whole pipeline on all available cores.
pub fn realign(a: &Alignment, s: &ScoringParams) -> Result<Alignment> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    realign_with_workers(a, s, workers)
}

pub fn realign_with_workers(a: &Alignment, s: &ScoringParams, workers: usize) -> Result<Alignment> {
    s.validate()?;
    let stripped = a.ungapped();
    let seqs = stripped.records();
    if let Some(r) = seqs.iter().find(|r| r.is_empty()) {
        return Err(AlignError::EmptySequence(r.id.clone()));
    }
    if seqs.len() == 1 {
        return Ok(stripped);
    }
    let dm = distance_matrix(seqs, s, workers)?;
    let guide = build_guide_tree(&dm)?;
    progressive_align(seqs, &guide, s)
}
