//! Sequence and alignment file formats.
//!
//! Four input formats are recognized (FASTA, sequential PHYLIP, Clustal and
//! NEXUS). Everything converges on [`Alignment`], and NEXUS is the canonical
//! serialized form handed to the inference engine.

mod clustal;
mod fasta;
mod nexus;
mod phylip;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clustal::parse_clustal;
pub use fasta::{parse_fasta, write_fasta};
pub use nexus::{parse_nexus, write_nexus};
pub(crate) use nexus::blocks as nexus_blocks;
pub use phylip::parse_phylip;

/// Longest accepted taxon label.
pub const MAX_LABEL_LEN: usize = 99;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SeqError {
    #[error("unrecognized sequence format")]
    UnrecognizedFormat,
    #[error("line {line}: record '{id}' has no residues")]
    EmptyRecord { line: usize, id: String },
    #[error("line {line}: duplicate taxon '{id}'")]
    DuplicateTaxon { line: usize, id: String },
    #[error("line {line}: illegal character '{ch}'")]
    IllegalCharacter { line: usize, ch: char },
    #[error("line {line}: invalid taxon label '{label}' (allowed: [A-Za-z0-9_.], at most 99 characters)")]
    InvalidLabel { line: usize, label: String },
    #[error("line {line}: header declares {what}={declared} but {found} found")]
    HeaderMismatch {
        line: usize,
        what: &'static str,
        declared: usize,
        found: usize,
    },
    #[error("line {line}: malformed block: {msg}")]
    MalformedBlock { line: usize, msg: String },
    #[error("line {line}: unsupported format variant: {msg}")]
    UnsupportedVariant { line: usize, msg: String },
    #[error("sequences are not aligned (unequal lengths)")]
    NotAligned,
    #[error("no sequences found")]
    NoRecords,
}

impl SeqError {
    /// Line number the error points at, when it has one.
    pub fn line(&self) -> Option<usize> {
        match self {
            SeqError::EmptyRecord { line, .. }
            | SeqError::DuplicateTaxon { line, .. }
            | SeqError::IllegalCharacter { line, .. }
            | SeqError::InvalidLabel { line, .. }
            | SeqError::HeaderMismatch { line, .. }
            | SeqError::MalformedBlock { line, .. }
            | SeqError::UnsupportedVariant { line, .. } => Some(*line),
            _ => None,
        }
    }
}

pub type Result<T, E = SeqError> = std::result::Result<T, E>;

/// A named DNA sequence. Residues are stored uppercase over `ACGTN-`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub residues: String,
}

impl SequenceRecord {
    /// Validates and normalizes a label/residue pair.
    pub fn new(id: impl Into<String>, residues: &str) -> Result<Self> {
        let id = id.into();
        validate_label(&id, 0)?;
        let residues = normalize_residues(residues, 0)?;
        if residues.is_empty() {
            return Err(SeqError::EmptyRecord { line: 0, id });
        }
        Ok(Self { id, residues })
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Residues with gap characters removed.
    pub fn ungapped(&self) -> String {
        self.residues.chars().filter(|&c| c != '-').collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentKind {
    Aligned,
    Unaligned,
}

/// Ordered set of sequences with distinct labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    records: Vec<SequenceRecord>,
    kind: AlignmentKind,
}

impl Alignment {
    /// Builds an alignment, inferring `kind` from the residue lengths.
    pub fn new(records: Vec<SequenceRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(SeqError::NoRecords);
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(SeqError::DuplicateTaxon {
                    line: 0,
                    id: r.id.clone(),
                });
            }
            if r.residues.is_empty() {
                return Err(SeqError::EmptyRecord {
                    line: 0,
                    id: r.id.clone(),
                });
            }
        }
        let first = records[0].len();
        let kind = if records.iter().all(|r| r.len() == first) {
            AlignmentKind::Aligned
        } else {
            AlignmentKind::Unaligned
        };
        Ok(Self { records, kind })
    }

    /// Convenience constructor from `(label, residues)` pairs.
    pub fn from_pairs<I, S, R>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, R)>,
        S: Into<String>,
        R: AsRef<str>,
    {
        let records = pairs
            .into_iter()
            .map(|(id, seq)| SequenceRecord::new(id, seq.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(records)
    }

    pub fn records(&self) -> &[SequenceRecord] {
        &self.records
    }

    pub fn kind(&self) -> AlignmentKind {
        self.kind
    }

    pub fn is_aligned(&self) -> bool {
        self.kind == AlignmentKind::Aligned
    }

    pub fn ntax(&self) -> usize {
        self.records.len()
    }

    /// Number of columns; `None` when unaligned.
    pub fn nchar(&self) -> Option<usize> {
        self.is_aligned().then(|| self.records[0].len())
    }

    pub fn taxa(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&SequenceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Same taxa with every gap removed.
    pub fn ungapped(&self) -> Alignment {
        let records = self
            .records
            .iter()
            .map(|r| SequenceRecord {
                id: r.id.clone(),
                residues: r.ungapped(),
            })
            .collect();
        // Labels stay distinct; lengths may change.
        let mut out = Alignment {
            records,
            kind: AlignmentKind::Aligned,
        };
        out.refresh_kind();
        out
    }

    fn refresh_kind(&mut self) {
        let first = self.records[0].len();
        self.kind = if self.records.iter().all(|r| r.len() == first) {
            AlignmentKind::Aligned
        } else {
            AlignmentKind::Unaligned
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormatKind {
    Fasta,
    Phylip,
    Clustal,
    Nexus,
}

impl fmt::Display for FormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatKind::Fasta => "fasta",
            FormatKind::Phylip => "phylip",
            FormatKind::Clustal => "clustal",
            FormatKind::Nexus => "nexus",
        })
    }
}

/// Guesses the format from the leading content.
///
/// Checked in order: FASTA (`>`), NEXUS (`#NEXUS`), Clustal (`CLUSTAL`),
/// PHYLIP (first line is two integers).
pub fn detect_format(text: &str) -> Result<FormatKind> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('>') {
        return Ok(FormatKind::Fasta);
    }
    if let Some(tok) = trimmed.split_whitespace().next() {
        if tok.eq_ignore_ascii_case("#NEXUS") {
            return Ok(FormatKind::Nexus);
        }
    }
    let first_line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or_default();
    if first_line.starts_with("CLUSTAL") {
        return Ok(FormatKind::Clustal);
    }
    let toks: Vec<&str> = first_line.split_whitespace().collect();
    if toks.len() == 2 && toks.iter().all(|t| t.parse::<usize>().is_ok()) {
        return Ok(FormatKind::Phylip);
    }
    Err(SeqError::UnrecognizedFormat)
}

/// Parses any supported format.
pub fn parse_any(text: &str) -> Result<(FormatKind, Alignment)> {
    let kind = detect_format(text)?;
    let aln = match kind {
        FormatKind::Fasta => parse_fasta(text)?,
        FormatKind::Phylip => parse_phylip(text)?,
        FormatKind::Clustal => parse_clustal(text)?,
        FormatKind::Nexus => parse_nexus(text)?,
    };
    Ok((kind, aln))
}

/// Converts any supported input to canonical NEXUS.
pub fn to_nexus(text: &str) -> Result<String> {
    let (_, aln) = parse_any(text)?;
    write_nexus(&aln)
}

pub(crate) fn validate_label(label: &str, line: usize) -> Result<()> {
    let ok = !label.is_empty()
        && label.len() <= MAX_LABEL_LEN
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(SeqError::InvalidLabel {
            line,
            label: label.chars().take(MAX_LABEL_LEN + 1).collect(),
        })
    }
}

/// Uppercases and checks residues; whitespace is skipped.
pub(crate) fn normalize_residues(raw: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    for ch in raw.chars() {
        if ch.is_whitespace() {
            continue;
        }
        let up = ch.to_ascii_uppercase();
        match up {
            'A' | 'C' | 'G' | 'T' | 'N' | '-' => out.push(up),
            _ => return Err(SeqError::IllegalCharacter { line, ch }),
        }
    }
    Ok(out)
}

/// Adds one parsed record, enforcing label rules and uniqueness.
pub(crate) fn push_record(
    records: &mut Vec<SequenceRecord>,
    seen: &mut HashSet<String>,
    id: &str,
    residues: String,
    line: usize,
) -> Result<()> {
    validate_label(id, line)?;
    if residues.is_empty() {
        return Err(SeqError::EmptyRecord {
            line,
            id: id.to_string(),
        });
    }
    if !seen.insert(id.to_string()) {
        return Err(SeqError::DuplicateTaxon {
            line,
            id: id.to_string(),
        });
    }
    records.push(SequenceRecord {
        id: id.to_string(),
        residues,
    });
    Ok(())
}
