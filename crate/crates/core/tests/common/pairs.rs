//! Exhaustive pairwise alignment: every alignment of two short sequences,
//! scored column by column.

use phylogrid_core::aligner::ScoringParams;

#[derive(Clone, Copy, PartialEq)]
enum Col {
    Both,
    GapInB,
    GapInA,
}

fn residue_score(x: u8, y: u8, s: &ScoringParams) -> i64 {
    if x == y && x != b'N' {
        s.match_score as i64
    } else {
        s.mismatch as i64
    }
}

/// Affine score of two gapped rows: a gap run of length k costs
/// `open + (k - 1) * extend`; runs in different rows are separate.
pub fn score_rows(a: &[u8], b: &[u8], s: &ScoringParams) -> i64 {
    assert_eq!(a.len(), b.len());
    let mut total = 0;
    let mut prev = None;
    for (&x, &y) in a.iter().zip(b) {
        let col = match (x == b'-', y == b'-') {
            (false, false) => Col::Both,
            (false, true) => Col::GapInB,
            (true, false) => Col::GapInA,
            (true, true) => panic!("gap against gap"),
        };
        total += match col {
            Col::Both => residue_score(x, y, s),
            c if prev == Some(c) => s.gap_extend as i64,
            _ => s.gap_open as i64,
        };
        prev = Some(col);
    }
    total
}

/// Best score over all alignments of `a` and `b`.
pub fn exhaustive_best(a: &[u8], b: &[u8], s: &ScoringParams) -> i64 {
    fn go(a: &[u8], b: &[u8], ra: &mut Vec<u8>, rb: &mut Vec<u8>, s: &ScoringParams, best: &mut i64) {
        if a.is_empty() && b.is_empty() {
            *best = (*best).max(score_rows(ra, rb, s));
            return;
        }
        if !a.is_empty() && !b.is_empty() {
            ra.push(a[0]);
            rb.push(b[0]);
            go(&a[1..], &b[1..], ra, rb, s, best);
            ra.pop();
            rb.pop();
        }
        if !a.is_empty() {
            ra.push(a[0]);
            rb.push(b'-');
            go(&a[1..], b, ra, rb, s, best);
            ra.pop();
            rb.pop();
        }
        if !b.is_empty() {
            ra.push(b'-');
            rb.push(b[0]);
            go(a, &b[1..], ra, rb, s, best);
            ra.pop();
            rb.pop();
        }
    }
    let mut best = i64::MIN;
    go(a, b, &mut Vec::new(), &mut Vec::new(), s, &mut best);
    best
}

use phylogrid_core::aligner::pairwise_align;
use phylogrid_core::seqio::SequenceRecord;
use proptest::prelude::*;

pub fn short_seq() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(b"ACGTN".to_vec()), 1..=6)
        .prop_map(|v| String::from_utf8(v).unwrap())
}

pub fn scoring() -> impl Strategy<Value = ScoringParams> {
    (1i32..5, -4i32..1, -8i32..1, -4i32..1).prop_filter_map("valid scoring", |(m, x, o, e)| {
        ScoringParams::new(m, x.min(m - 1), o.min(e), e).ok()
    })
}

/// The aligner's score is the exhaustive optimum, and its rows achieve it
/// and de-gap to the inputs.
pub fn check_pair(a: &str, b: &str, s: &ScoringParams) -> Result<(), TestCaseError> {
    let ra = SequenceRecord::new("a", a).unwrap();
    let rb = SequenceRecord::new("b", b).unwrap();
    let (pair, score) = pairwise_align(&ra, &rb, s).unwrap();
    prop_assert_eq!(score, exhaustive_best(a.as_bytes(), b.as_bytes(), s));
    prop_assert_eq!(score_rows(pair.a.as_bytes(), pair.b.as_bytes(), s), score);
    prop_assert_eq!(pair.a.replace('-', ""), a);
    prop_assert_eq!(pair.b.replace('-', ""), b);
    Ok(())
}
