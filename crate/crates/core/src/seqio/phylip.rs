use std::collections::HashSet;

use super::{normalize_residues, push_record, Alignment, Result, SeqError};

/// Parses sequential PHYLIP: a `ntax nchar` header followed by one
/// `label residues` line per taxon. Interleaved files are rejected.
pub fn parse_phylip(text: &str) -> Result<Alignment> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    let (hline, header) = lines.next().ok_or(SeqError::NoRecords)?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| SeqError::MalformedBlock {
            line: hline,
            msg: "header must be two integers: ntax nchar".into(),
        })?;
    let [ntax, nchar] = dims[..] else {
        return Err(SeqError::MalformedBlock {
            line: hline,
            msg: "header must be two integers: ntax nchar".into(),
        });
    };

    let body: Vec<(usize, &str)> = lines.collect();
    if body.len() > ntax && ntax > 0 && body.len() % ntax == 0 {
        return Err(SeqError::UnsupportedVariant {
            line: body[ntax].0,
            msg: "interleaved PHYLIP is not supported".into(),
        });
    }
    if body.len() != ntax {
        return Err(SeqError::HeaderMismatch {
            line: hline,
            what: "ntax",
            declared: ntax,
            found: body.len(),
        });
    }

    let mut records = Vec::with_capacity(ntax);
    let mut seen = HashSet::new();
    for (lineno, line) in body {
        let mut parts = line.split_whitespace();
        let id = parts.next().unwrap_or_default();
        let rest: String = parts.collect();
        let residues = normalize_residues(&rest, lineno)?;
        if !residues.is_empty() && residues.len() != nchar {
            return Err(SeqError::HeaderMismatch {
                line: lineno,
                what: "nchar",
                declared: nchar,
                found: residues.len(),
            });
        }
        push_record(&mut records, &mut seen, id, residues, lineno)?;
    }
    Alignment::new(records)
}
