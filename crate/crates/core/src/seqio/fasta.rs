use std::collections::HashSet;
use std::fmt::Write;

use super::{normalize_residues, push_record, Alignment, Result, SeqError};

/// Parses FASTA. The label is the first whitespace-delimited token of the
/// header; sequence lines are concatenated.
pub fn parse_fasta(text: &str) -> Result<Alignment> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<(String, String, usize)> = None;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            if let Some((id, seq, at)) = current.take() {
                push_record(&mut records, &mut seen, &id, seq, at)?;
            }
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            current = Some((id, String::new(), lineno));
        } else if line.trim().is_empty() {
            continue;
        } else {
            match current.as_mut() {
                Some((_, seq, _)) => seq.push_str(&normalize_residues(line, lineno)?),
                None => {
                    return Err(SeqError::MalformedBlock {
                        line: lineno,
                        msg: "sequence data before the first '>' header".into(),
                    })
                }
            }
        }
    }
    if let Some((id, seq, at)) = current.take() {
        push_record(&mut records, &mut seen, &id, seq, at)?;
    }
    Alignment::new(records)
}

/// Writes one unwrapped FASTA record per taxon.
pub fn write_fasta(a: &Alignment) -> String {
    let mut out = String::new();
    for r in a.records() {
        let _ = writeln!(out, ">{}\n{}", r.id, r.residues);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqio::AlignmentKind;

    #[test]
    fn two_records_aligned() {
        let a = parse_fasta(">a\nACGT\n>b\nAC-T").unwrap();
        assert_eq!(a.ntax(), 2);
        assert_eq!(a.kind(), AlignmentKind::Aligned);
        assert_eq!(a.records()[1].residues, "AC-T");
    }

    #[test]
    fn lines_concatenate() {
        let a = parse_fasta(">a\nAC\nGT\n>b\nACGT").unwrap();
        assert_eq!(a.records()[0].residues, "ACGT");
    }

    #[test]
    fn duplicate_taxon() {
        let err = parse_fasta(">a\nACGT\n>a\nACGT").unwrap_err();
        assert_eq!(
            err,
            SeqError::DuplicateTaxon {
                line: 3,
                id: "a".into()
            }
        );
    }

    #[test]
    fn empty_record_reports_header_line() {
        let err = parse_fasta(">a\n>b\nAC").unwrap_err();
        assert_eq!(
            err,
            SeqError::EmptyRecord {
                line: 1,
                id: "a".into()
            }
        );
    }

    #[test]
    fn header_description_ignored_and_lowercase_normalized() {
        let a = parse_fasta(">seq1 some description\nacgtn\n").unwrap();
        assert_eq!(a.records()[0].id, "seq1");
        assert_eq!(a.records()[0].residues, "ACGTN");
    }

    #[test]
    fn illegal_character_line() {
        let err = parse_fasta(">a\nACGT\nACXT\n").unwrap_err();
        assert_eq!(err, SeqError::IllegalCharacter { line: 3, ch: 'X' });
    }

    #[test]
    fn write_then_parse() {
        let a = parse_fasta(">a\nACGT\n>b\nAC-T").unwrap();
        assert_eq!(write_fasta(&a), ">a\nACGT\n>b\nAC-T\n");
        assert_eq!(parse_fasta(&write_fasta(&a)).unwrap(), a);
    }
}
