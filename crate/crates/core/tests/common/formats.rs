//! Alignment generators and hand-rolled writers for the formats the crate
//! only reads.

use phylogrid_core::seqio::Alignment;
use proptest::prelude::*;

fn label() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_.]{1,12}"
}

fn residues(len: std::ops::Range<usize>) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(b"ACGTN-".to_vec()), len)
        .prop_map(|v| String::from_utf8(v).unwrap())
}

fn labels(n: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set(label(), n).prop_map(|s| s.into_iter().collect())
}

/// Aligned data: 1–6 taxa of one common length.
pub fn aligned() -> impl Strategy<Value = Alignment> {
    (1usize..=6, 1usize..40)
        .prop_flat_map(|(n, len)| (labels(n), prop::collection::vec(residues(len..len + 1), n)))
        .prop_map(|(ids, rows)| Alignment::from_pairs(ids.into_iter().zip(rows)).unwrap())
}

/// Any data, lengths free.
pub fn any_alignment() -> impl Strategy<Value = Alignment> {
    (1usize..=6)
        .prop_flat_map(|n| (labels(n), prop::collection::vec(residues(1..40), n)))
        .prop_map(|(ids, rows)| Alignment::from_pairs(ids.into_iter().zip(rows)).unwrap())
}

/// Sequential PHYLIP with the residues split into chunks of ten.
pub fn write_phylip(a: &Alignment) -> String {
    let mut s = format!("{} {}\n", a.ntax(), a.nchar().unwrap());
    for r in a.records() {
        let chunks: Vec<String> = r
            .residues
            .as_bytes()
            .chunks(10)
            .map(|c| String::from_utf8(c.to_vec()).unwrap())
            .collect();
        s.push_str(&format!("{} {}\n", r.id, chunks.join(" ")));
    }
    s
}

/// Clustal with blocks of `width` columns and a conservation line under
/// each block.
pub fn write_clustal(a: &Alignment, width: usize) -> String {
    let mut s = String::from("CLUSTAL W (1.83) multiple sequence alignment\n\n");
    let pad = a.records().iter().map(|r| r.id.len()).max().unwrap() + 4;
    let n = a.nchar().unwrap();
    let mut start = 0;
    while start < n {
        let end = (start + width).min(n);
        for r in a.records() {
            s.push_str(&format!("{:<pad$}{}\n", r.id, &r.residues[start..end]));
        }
        s.push_str(&format!("{:pad$}{}\n\n", "", "*".repeat(end - start)));
        start = end;
    }
    s
}

/// FASTA with lowercase residues wrapped at `width`.
pub fn write_fasta_wrapped(a: &Alignment, width: usize) -> String {
    let mut s = String::new();
    for r in a.records() {
        s.push_str(&format!(">{} some description\n", r.id));
        for c in r.residues.to_ascii_lowercase().as_bytes().chunks(width) {
            s.push_str(std::str::from_utf8(c).unwrap());
            s.push('\n');
        }
    }
    s
}

pub type Check = Result<(), TestCaseError>;

/// Writers and readers agree for FASTA, and for NEXUS on aligned data.
pub fn check_round_trip(a: &Alignment) -> Check {
    use phylogrid_core::seqio::{parse_fasta, parse_nexus, write_fasta, write_nexus};
    prop_assert_eq!(&parse_fasta(&write_fasta(a)).unwrap(), a);
    if a.is_aligned() {
        prop_assert_eq!(&parse_nexus(&write_nexus(a).unwrap()).unwrap(), a);
    } else {
        prop_assert!(write_nexus(a).is_err());
    }
    Ok(())
}

/// One alignment in four formats converts to identical NEXUS, and the
/// conversion is a fixed point on its own output.
pub fn check_cross_format(a: &Alignment, width: usize) -> Check {
    use phylogrid_core::seqio::{to_nexus, write_nexus};
    let want = write_nexus(a).unwrap();
    for text in [
        write_fasta_wrapped(a, width),
        write_phylip(a),
        write_clustal(a, width),
        want.clone(),
    ] {
        prop_assert_eq!(&to_nexus(&text).unwrap(), &want, "input:\n{}", text);
    }
    prop_assert_eq!(to_nexus(&want).unwrap(), want);
    Ok(())
}

/// Parsers return errors, never panic, on arbitrary or damaged input.
pub fn check_no_panic(text: &str) -> Check {
    use phylogrid_core::seqio::*;
    let r = std::panic::catch_unwind(|| {
        let _ = parse_any(text);
        let _ = parse_fasta(text);
        let _ = parse_phylip(text);
        let _ = parse_clustal(text);
        let _ = parse_nexus(text);
        let _ = to_nexus(text);
    });
    prop_assert!(r.is_ok(), "parser panicked on {:?}", text);
    Ok(())
}

/// Valid files with a few bytes overwritten.
pub fn damaged_text() -> impl Strategy<Value = String> {
    use phylogrid_core::seqio::{write_fasta, write_nexus};
    (aligned(), 0usize..3, prop::collection::vec((any::<prop::sample::Index>(), any::<char>()), 1..6))
        .prop_map(|(a, fmt, edits)| {
            let text = match fmt {
                0 => write_fasta(&a),
                1 => write_nexus(&a).unwrap(),
                _ => write_phylip(&a),
            };
            let mut chars: Vec<char> = text.chars().collect();
            for (i, c) in edits {
                let k = i.index(chars.len());
                chars[k] = c;
            }
            chars.into_iter().collect()
        })
}
