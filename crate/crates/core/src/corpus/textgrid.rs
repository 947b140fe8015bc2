//! Praat TextGrid reader covering the long and short text formats.
//!
//! Only IntervalTiers are usable as alignments; point tiers are skipped
//! while scanning and rejected if they are the requested tier. Both formats
//! reduce to the same value stream once structural decorations are dropped,
//! so a single positional parser handles them.

use std::fs;
use std::path::Path;

use super::{AlignedWord, AlignmentSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Str(String),
    Flag(bool),
}

struct Lexer<'a> {
    path: &'a Path,
    tokens: Vec<Token>,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::TextGrid {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_num(&mut self, what: &str) -> Result<f64> {
        match self.next().cloned() {
            Some(Token::Num(v)) => Ok(v),
            other => Err(self.err(format!("expected number for {what}, found {other:?}"))),
        }
    }

    fn expect_str(&mut self, what: &str) -> Result<String> {
        match self.next().cloned() {
            Some(Token::Str(s)) => Ok(s),
            other => Err(self.err(format!("expected string for {what}, found {other:?}"))),
        }
    }
}

/// Is this a structural line of the long format (`item [1]:`,
/// `intervals [2]:`, `points [1]:`, `item []:`)?
fn is_decoration(line: &str) -> bool {
    let l = line.trim();
    if !l.ends_with(':') {
        return false;
    }
    let head = l.trim_end_matches(':').trim_end();
    for prefix in ["item", "intervals", "points"] {
        if let Some(rest) = head.strip_prefix(prefix) {
            let rest = rest.trim();
            if rest.starts_with('[') && rest.ends_with(']') {
                return true;
            }
        }
    }
    false
}

/// Extract one value token from a line fragment: a quoted string (Praat
/// doubles embedded quotes), a `<exists>`/`<absent>` flag or a number.
fn parse_value(fragment: &str) -> Option<Token> {
    let f = fragment.trim();
    if f.is_empty() {
        return None;
    }
    if let Some(rest) = f.strip_prefix('"') {
        // Find the closing quote, honouring "" escapes.
        let bytes: Vec<char> = rest.chars().collect();
        let mut out = String::new();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == '"' {
                if i + 1 < bytes.len() && bytes[i + 1] == '"' {
                    out.push('"');
                    i += 2;
                    continue;
                }
                return Some(Token::Str(out));
            }
            out.push(bytes[i]);
            i += 1;
        }
        // Unterminated quote: treat as malformed.
        return Some(Token::Flag(false));
    }
    if f.starts_with('<') {
        return Some(Token::Flag(f == "<exists>"));
    }
    // Numbers may carry trailing junk in hand-edited files; take the first
    // whitespace-delimited field.
    let first = f.split_whitespace().next()?;
    first.parse::<f64>().ok().map(Token::Num)
}

fn lex(path: &Path, text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let l = line.trim();
        if l.is_empty() || is_decoration(l) {
            continue;
        }
        // `key = value` lines keep only the value; `tiers? <exists>` keeps
        // the flag; anything else is a bare short-format value.
        let fragment = if let Some(eq) = split_key_value(l) {
            eq
        } else if let Some(q) = l.find("? ") {
            &l[q + 1..]
        } else {
            l
        };
        if let Some(tok) = parse_value(fragment) {
            if matches!(tok, Token::Flag(false)) && !fragment.trim().starts_with('<') {
                return Err(Error::TextGrid {
                    path: path.to_path_buf(),
                    message: format!("malformed line {l:?}"),
                });
            }
            tokens.push(tok);
        }
    }
    Ok(tokens)
}

/// For `key = value` lines returns the value part; quoted strings may
/// themselves contain '=' so only split when the key side is unquoted.
fn split_key_value(line: &str) -> Option<&str> {
    let eq = line.find('=')?;
    let key = &line[..eq];
    if key.contains('"') {
        return None;
    }
    Some(&line[eq + 1..])
}

/// Parse the named IntervalTier of a TextGrid into an alignment.
///
/// Empty-label intervals are dropped; the remaining entries are ordered by
/// start time. Any interval of the requested tier with `xmin >= xmax` is an
/// error.
pub fn parse_textgrid(path: &Path, tier_name: &str) -> Result<AlignmentSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tokens = lex(path, &text)?;
    let mut lx = Lexer {
        path,
        tokens,
        pos: 0,
    };

    match lx.next() {
        Some(Token::Str(s)) if s == "ooTextFile" => {}
        _ => return Err(lx.err("not an ooTextFile header")),
    }
    match lx.next() {
        Some(Token::Str(s)) if s == "TextGrid" => {}
        _ => return Err(lx.err("not a TextGrid object")),
    }
    let _xmin = lx.expect_num("file xmin")?;
    let _xmax = lx.expect_num("file xmax")?;
    match lx.next() {
        Some(Token::Flag(true)) => {}
        Some(Token::Flag(false)) => {
            return Err(lx.err("file declares no tiers"));
        }
        other => {
            let msg = format!("expected tiers flag, found {other:?}");
            return Err(lx.err(msg));
        }
    }
    let n_tiers = lx.expect_num("tier count")? as usize;

    for _ in 0..n_tiers {
        let class = lx.expect_str("tier class")?;
        let name = lx.expect_str("tier name")?;
        let _tier_xmin = lx.expect_num("tier xmin")?;
        let _tier_xmax = lx.expect_num("tier xmax")?;
        let size = lx.expect_num("tier size")? as usize;
        let is_interval = class == "IntervalTier";
        let wanted = name == tier_name;

        if wanted && !is_interval {
            return Err(Error::NotIntervalTier {
                path: path.to_path_buf(),
                name: name.clone(),
            });
        }

        if is_interval {
            let mut entries = Vec::new();
            for index in 0..size {
                let xmin = lx.expect_num("interval xmin")?;
                let xmax = lx.expect_num("interval xmax")?;
                let label = lx.expect_str("interval text")?;
                if wanted {
                    if xmin >= xmax {
                        return Err(Error::BadInterval {
                            path: path.to_path_buf(),
                            index: index + 1,
                            xmin,
                            xmax,
                        });
                    }
                    if !label.trim().is_empty() {
                        entries.push(AlignedWord {
                            word: label.trim().to_string(),
                            start_s: xmin,
                            end_s: xmax,
                        });
                    }
                }
            }
            if wanted {
                return AlignmentSet::new(entries);
            }
        } else {
            // Point tier: consume (number, mark) pairs.
            for _ in 0..size {
                lx.expect_num("point time")?;
                lx.expect_str("point mark")?;
            }
        }
    }

    Err(Error::MissingTier {
        path: path.to_path_buf(),
        name: tier_name.to_string(),
    })
}
