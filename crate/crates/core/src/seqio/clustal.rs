use super::{normalize_residues, validate_label, Alignment, Result, SeqError, SequenceRecord};

fn is_conservation_line(line: &str) -> bool {
    line.starts_with(char::is_whitespace)
        || line.chars().all(|c| matches!(c, '*' | ':' | '.' | ' '))
}

/// Parses Clustal: header line, then blocks of `label residues [count]`.
/// Conservation lines are skipped. Every block must list the same taxa in
/// the same order.
pub fn parse_clustal(text: &str) -> Result<Alignment> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.find(|(_, l)| !l.trim().is_empty()) {
        Some((_, l)) if l.starts_with("CLUSTAL") => {}
        Some((n, _)) => {
            return Err(SeqError::MalformedBlock {
                line: n,
                msg: "missing CLUSTAL header".into(),
            })
        }
        None => return Err(SeqError::NoRecords),
    }

    let mut order: Vec<String> = Vec::new();
    let mut seqs: Vec<String> = Vec::new();
    let mut first_lines: Vec<usize> = Vec::new();
    let mut block = 0usize;
    let mut row = 0usize;
    let mut in_block = false;

    for (lineno, line) in lines {
        if line.trim().is_empty() {
            if in_block {
                if block > 0 && row != order.len() {
                    return Err(SeqError::MalformedBlock {
                        line: lineno,
                        msg: format!("block {} has {} rows, expected {}", block + 1, row, order.len()),
                    });
                }
                block += 1;
                row = 0;
                in_block = false;
            }
            continue;
        }
        if is_conservation_line(line) {
            continue;
        }
        in_block = true;
        let mut toks = line.split_whitespace();
        let id = toks.next().unwrap_or_default();
        let chunk = toks.next().ok_or_else(|| SeqError::MalformedBlock {
            line: lineno,
            msg: format!("row '{id}' has no residues"),
        })?;
        if let Some(extra) = toks.next() {
            if extra.parse::<usize>().is_err() || toks.next().is_some() {
                return Err(SeqError::MalformedBlock {
                    line: lineno,
                    msg: "unexpected trailing tokens".into(),
                });
            }
        }
        let residues = normalize_residues(chunk, lineno)?;
        if block == 0 {
            validate_label(id, lineno)?;
            if order.iter().any(|o| o == id) {
                return Err(SeqError::DuplicateTaxon {
                    line: lineno,
                    id: id.to_string(),
                });
            }
            order.push(id.to_string());
            seqs.push(residues);
            first_lines.push(lineno);
        } else {
            if order.get(row).map(String::as_str) != Some(id) {
                return Err(SeqError::MalformedBlock {
                    line: lineno,
                    msg: format!("row '{id}' out of order or unknown in block {}", block + 1),
                });
            }
            seqs[row].push_str(&residues);
        }
        row += 1;
    }
    if in_block && block > 0 && row != order.len() {
        return Err(SeqError::MalformedBlock {
            line: text.lines().count(),
            msg: format!("block {} has {} rows, expected {}", block + 1, row, order.len()),
        });
    }

    let mut records = Vec::with_capacity(order.len());
    for ((id, residues), line) in order.into_iter().zip(seqs).zip(first_lines) {
        if residues.is_empty() {
            return Err(SeqError::EmptyRecord { line, id });
        }
        records.push(SequenceRecord { id, residues });
    }
    Alignment::new(records)
}
