use std::collections::HashSet;
use std::fmt::Write;

use super::{normalize_residues, push_record, Alignment, Result, SeqError};

/// A whitespace-delimited NEXUS token with the line it started on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token {
    pub text: String,
    pub line: usize,
}

/// One `;`-terminated NEXUS command.
#[derive(Debug, Clone)]
pub(crate) struct Command {
    pub tokens: Vec<Token>,
    pub line: usize,
}

impl Command {
    fn keyword(&self) -> String {
        self.tokens
            .first()
            .map(|t| t.text.to_ascii_lowercase())
            .unwrap_or_default()
    }

    /// `key=value` pairs following the keyword; bare flags map to "".
    fn options(&self) -> Result<Vec<(String, String, usize)>> {
        let toks = &self.tokens[1..];
        let mut out = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let key = toks[i].text.to_ascii_lowercase();
            if key == "=" {
                return Err(SeqError::MalformedBlock {
                    line: toks[i].line,
                    msg: "'=' without a key".into(),
                });
            }
            if toks.get(i + 1).map(|t| t.text.as_str()) == Some("=") {
                let val = toks.get(i + 2).ok_or_else(|| SeqError::MalformedBlock {
                    line: toks[i].line,
                    msg: format!("missing value for '{key}'"),
                })?;
                out.push((key, val.text.clone(), toks[i].line));
                i += 3;
            } else {
                out.push((key, String::new(), toks[i].line));
                i += 1;
            }
        }
        Ok(out)
    }
}

/// Splits NEXUS text into commands, dropping `[...]` comments.
/// The leading `#NEXUS` marker is returned as its own command.
pub(crate) fn commands(text: &str) -> Result<Vec<Command>> {
    let mut cmds = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut word = String::new();
    let mut word_line = 1;
    let mut line = 1;
    let mut depth = 0usize;
    let mut comment_line = 0;
    let mut seen_marker = false;

    let flush = |word: &mut String, tokens: &mut Vec<Token>, wl: usize| {
        if !word.is_empty() {
            tokens.push(Token {
                text: std::mem::take(word),
                line: wl,
            });
        }
    };

    for ch in text.chars() {
        if depth > 0 {
            match ch {
                '[' => depth += 1,
                ']' => depth -= 1,
                '\n' => line += 1,
                _ => {}
            }
            continue;
        }
        match ch {
            '[' => {
                flush(&mut word, &mut tokens, word_line);
                depth = 1;
                comment_line = line;
            }
            ']' => {
                return Err(SeqError::MalformedBlock {
                    line,
                    msg: "unbalanced ']'".into(),
                })
            }
            ';' => {
                flush(&mut word, &mut tokens, word_line);
                let start = tokens.first().map(|t| t.line).unwrap_or(line);
                cmds.push(Command {
                    tokens: std::mem::take(&mut tokens),
                    line: start,
                });
            }
            '=' => {
                flush(&mut word, &mut tokens, word_line);
                tokens.push(Token {
                    text: "=".into(),
                    line,
                });
            }
            c if c.is_whitespace() => {
                flush(&mut word, &mut tokens, word_line);
                if !seen_marker
                    && tokens.len() == 1
                    && tokens[0].text.eq_ignore_ascii_case("#nexus")
                {
                    let start = tokens[0].line;
                    cmds.push(Command {
                        tokens: std::mem::take(&mut tokens),
                        line: start,
                    });
                    seen_marker = true;
                }
                if c == '\n' {
                    line += 1;
                }
            }
            c => {
                if word.is_empty() {
                    word_line = line;
                }
                word.push(c);
            }
        }
    }
    if depth > 0 {
        return Err(SeqError::MalformedBlock {
            line: comment_line,
            msg: "unterminated comment".into(),
        });
    }
    flush(&mut word, &mut tokens, word_line);
    if !tokens.is_empty() {
        if !seen_marker && tokens.len() == 1 && tokens[0].text.eq_ignore_ascii_case("#nexus") {
            let start = tokens[0].line;
            cmds.push(Command { tokens, line: start });
        } else {
            return Err(SeqError::MalformedBlock {
                line: tokens[0].line,
                msg: "unterminated command (missing ';')".into(),
            });
        }
    }
    Ok(cmds)
}

/// A named block: its `begin` line and the commands inside.
pub(crate) struct Block {
    pub name: String,
    pub line: usize,
    pub commands: Vec<Command>,
}

/// Groups commands into `begin ... end;` blocks after the `#NEXUS` marker.
/// A trailing block without `end;` is accepted when `allow_open` is set,
/// which lets partially written tree files be read.
pub(crate) fn blocks(text: &str, allow_open: bool) -> Result<Vec<Block>> {
    let cmds = commands(text)?;
    let mut iter = cmds.into_iter();
    match iter.next() {
        Some(c) if c.tokens.len() == 1 && c.tokens[0].text.eq_ignore_ascii_case("#nexus") => {}
        Some(c) => {
            return Err(SeqError::MalformedBlock {
                line: c.line,
                msg: "missing #NEXUS marker".into(),
            })
        }
        None => return Err(SeqError::NoRecords),
    }
    let mut out = Vec::new();
    let mut current: Option<Block> = None;
    for cmd in iter {
        if cmd.tokens.is_empty() {
            continue;
        }
        let kw = cmd.keyword();
        match (&mut current, kw.as_str()) {
            (None, "begin") => {
                let name = cmd
                    .tokens
                    .get(1)
                    .map(|t| t.text.to_ascii_lowercase())
                    .ok_or_else(|| SeqError::MalformedBlock {
                        line: cmd.line,
                        msg: "block without a name".into(),
                    })?;
                current = Some(Block {
                    name,
                    line: cmd.line,
                    commands: Vec::new(),
                });
            }
            (None, _) => {
                return Err(SeqError::MalformedBlock {
                    line: cmd.line,
                    msg: format!("command '{kw}' outside of a block"),
                })
            }
            (Some(_), "end") | (Some(_), "endblock") => {
                out.push(current.take().expect("open block"));
            }
            (Some(b), _) => b.commands.push(cmd),
        }
    }
    if let Some(b) = current {
        if !allow_open {
            return Err(SeqError::MalformedBlock {
                line: b.line,
                msg: format!("block '{}' is missing 'end;'", b.name),
            });
        }
        out.push(b);
    }
    Ok(out)
}

fn parse_dim(value: &str, line: usize) -> Result<usize> {
    value.parse().map_err(|_| SeqError::MalformedBlock {
        line,
        msg: format!("invalid dimension '{value}'"),
    })
}

/// Parses the DATA (or CHARACTERS) block of a NEXUS file. TAXA and TREES
/// blocks are tolerated, other blocks are skipped. Only non-interleaved
/// DNA matrices are supported.
pub fn parse_nexus(text: &str) -> Result<Alignment> {
    let blocks = blocks(text, false)?;
    let mut taxa_ntax: Option<usize> = None;
    for b in &blocks {
        if b.name == "taxa" {
            for c in &b.commands {
                if c.keyword() == "dimensions" {
                    for (k, v, l) in c.options()? {
                        if k == "ntax" {
                            taxa_ntax = Some(parse_dim(&v, l)?);
                        }
                    }
                }
            }
        }
    }
    let data = blocks
        .iter()
        .find(|b| b.name == "data" || b.name == "characters")
        .ok_or(SeqError::MalformedBlock {
            line: 1,
            msg: "no DATA block".into(),
        })?;

    let mut ntax = taxa_ntax;
    let mut nchar = None;
    let mut gap = '-';
    let mut missing = '?';
    let mut matrix: Option<&Command> = None;

    for c in &data.commands {
        match c.keyword().as_str() {
            "dimensions" => {
                for (k, v, l) in c.options()? {
                    match k.as_str() {
                        "ntax" => ntax = Some(parse_dim(&v, l)?),
                        "nchar" => nchar = Some(parse_dim(&v, l)?),
                        _ => {}
                    }
                }
            }
            "format" => {
                for (k, v, l) in c.options()? {
                    match k.as_str() {
                        "datatype" => {
                            let dt = v.to_ascii_lowercase();
                            if dt != "dna" && dt != "nucleotide" {
                                return Err(SeqError::UnsupportedVariant {
                                    line: l,
                                    msg: format!("datatype '{v}' (only DNA is supported)"),
                                });
                            }
                        }
                        "gap" => gap = single_char(&v, l)?,
                        "missing" => missing = single_char(&v, l)?,
                        "interleave" if v.is_empty() || v.eq_ignore_ascii_case("yes") => {
                            return Err(SeqError::UnsupportedVariant {
                                line: l,
                                msg: "interleaved matrices are not supported".into(),
                            })
                        }
                        "matchchar" => {
                            return Err(SeqError::UnsupportedVariant {
                                line: l,
                                msg: "matchchar is not supported".into(),
                            })
                        }
                        _ => {}
                    }
                }
            }
            "matrix" => matrix = Some(c),
            _ => {}
        }
    }

    let ntax = ntax.ok_or(SeqError::MalformedBlock {
        line: data.line,
        msg: "missing ntax".into(),
    })?;
    let nchar = nchar.ok_or(SeqError::MalformedBlock {
        line: data.line,
        msg: "missing nchar".into(),
    })?;
    let matrix = matrix.ok_or(SeqError::MalformedBlock {
        line: data.line,
        msg: "missing matrix".into(),
    })?;

    let translate = |tok: &Token| -> Result<String> {
        let mapped: String = tok
            .text
            .chars()
            .map(|c| {
                if c == missing {
                    'N'
                } else if c == gap {
                    '-'
                } else {
                    c
                }
            })
            .collect();
        normalize_residues(&mapped, tok.line)
    };
    let is_residue_token = |tok: &Token| translate(tok).is_ok();

    let mut records = Vec::with_capacity(ntax);
    let mut seen = HashSet::new();
    let toks = &matrix.tokens[1..];
    let mut i = 0;
    while i < toks.len() {
        let name = &toks[i];
        if seen.contains(&name.text) {
            return Err(SeqError::UnsupportedVariant {
                line: name.line,
                msg: format!("taxon '{}' repeats (interleaved matrix)", name.text),
            });
        }
        i += 1;
        let mut residues = String::new();
        while i < toks.len() && residues.len() < nchar {
            // A token that cannot be residues begins the next row.
            if !residues.is_empty() && toks[i].line != toks[i - 1].line && !is_residue_token(&toks[i]) {
                break;
            }
            residues.push_str(&translate(&toks[i])?);
            i += 1;
        }
        if !residues.is_empty() && residues.len() != nchar {
            return Err(SeqError::HeaderMismatch {
                line: name.line,
                what: "nchar",
                declared: nchar,
                found: residues.len(),
            });
        }
        push_record(&mut records, &mut seen, &name.text, residues, name.line)?;
    }
    if records.len() != ntax {
        return Err(SeqError::HeaderMismatch {
            line: matrix.line,
            what: "ntax",
            declared: ntax,
            found: records.len(),
        });
    }
    Alignment::new(records)
}

fn single_char(v: &str, line: usize) -> Result<char> {
    let mut chars = v.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(SeqError::MalformedBlock {
            line,
            msg: format!("expected a single symbol, got '{v}'"),
        }),
    }
}

/// Canonical NEXUS rendering of an aligned set of sequences.
///
/// Labels are left-justified and padded with spaces to the longest label.
pub fn write_nexus(a: &Alignment) -> Result<String> {
    let nchar = a.nchar().ok_or(SeqError::NotAligned)?;
    let width = a.records().iter().map(|r| r.id.len()).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str("#NEXUS\n\nbegin data;\n");
    let _ = writeln!(out, "  dimensions ntax={} nchar={};", a.ntax(), nchar);
    out.push_str("  format datatype=dna gap=- missing=N;\n  matrix\n");
    for r in a.records() {
        let _ = writeln!(out, "    {:<width$} {}", r.id, r.residues, width = width);
    }
    out.push_str("  ;\nend;\n");
    Ok(out)
}
