//! The plain-text configuration grammar.
//!
//! ```text
//! file     := line*
//! line     := ws (section | include | entry)? ws comment? newline
//! section  := "[" name "]"
//! include  := "include" ws quoted
//! entry    := key ws "=" ws value
//! comment  := "#" any*
//! name/key := [A-Za-z0-9_.-]+
//! value    := quoted | bare
//! quoted   := '"' ( [^"\\] | '\"' | '\\' )* '"'
//! bare     := any text up to a "#" or end of line, trimmed
//! ```
//!
//! Keys are stored fully qualified (`section.key`); keys before the first
//! section header have no prefix. A repeated key overrides the earlier value,
//! so a file can include a base file and then adjust a few entries. Include
//! paths are relative to the including file; the included file is parsed
//! with its own section state, and the includer's current section resumes
//! after the include line. Include cycles are an error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// A parsed configuration: fully qualified key -> raw value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigDoc {
    entries: BTreeMap<String, String>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

/// Splits a line at the first `#` that is not inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_quote = false;
            }
        } else if c == '"' {
            in_quote = true;
        } else if c == '#' {
            return &line[..i];
        }
    }
    line
}

fn unquote(s: &str) -> Option<String> {
    let inner = s.strip_prefix('"')?.strip_suffix('"')?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next()? {
                '"' => out.push('"'),
                '\\' => out.push('\\'),
                _ => return None,
            },
            '"' => return None,
            c => out.push(c),
        }
    }
    Some(out)
}

fn needs_quotes(v: &str) -> bool {
    v.is_empty() || v.contains(['#', '"', '\\', '\n']) || v.trim() != v
}

fn quote(v: &str) -> String {
    let mut out = String::from("\"");
    for c in v.chars() {
        if matches!(c, '"' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

impl ConfigDoc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses text that may not use `include` (there is no base directory).
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        doc.parse_into(text, "<string>", None, &mut Vec::new())?;
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut doc = Self::new();
        doc.load_into(path.as_ref(), &mut Vec::new())?;
        Ok(doc)
    }

    fn load_into(&mut self, path: &Path, stack: &mut Vec<PathBuf>) -> Result<()> {
        let canon = path
            .canonicalize()
            .map_err(|e| CliError::Config { file: path.display().to_string(), line: 0, msg: e.to_string() })?;
        if stack.contains(&canon) {
            return Err(CliError::Config { file: path.display().to_string(), line: 0, msg: "include cycle".into() });
        }
        let text = std::fs::read_to_string(&canon)?;
        stack.push(canon.clone());
        let base = canon.parent().map(Path::to_path_buf);
        let res = self.parse_into(&text, &path.display().to_string(), base.as_deref(), stack);
        stack.pop();
        res
    }

    fn parse_into(&mut self, text: &str, file: &str, base: Option<&Path>, stack: &mut Vec<PathBuf>) -> Result<()> {
        let err = |line: usize, msg: String| CliError::Config { file: file.to_string(), line, msg };
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(lineno, "unterminated section header".into()))?.trim();
                if !valid_name(name) {
                    return Err(err(lineno, format!("bad section name {name:?}")));
                }
                section = name.to_string();
                continue;
            }
            if let Some(rest) = line.strip_prefix("include") {
                if rest.starts_with(char::is_whitespace) {
                    let target = unquote(rest.trim()).ok_or_else(|| err(lineno, "include needs a quoted path".into()))?;
                    let base = base.ok_or_else(|| err(lineno, "include is not available here".into()))?;
                    self.load_into(&base.join(target), stack)?;
                    continue;
                }
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(lineno, format!("expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            if !valid_name(key) {
                return Err(err(lineno, format!("bad key {key:?}")));
            }
            let value = value.trim();
            let value = if value.starts_with('"') {
                unquote(value).ok_or_else(|| err(lineno, format!("malformed quoted value {value}")))?
            } else {
                value.to_string()
            };
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            self.entries.insert(full, value);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical text: unprefixed keys first, then one block per section
    /// (the part of the key before its last dot), keys sorted.
    pub fn serialize(&self) -> String {
        let mut blocks: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        for (k, v) in &self.entries {
            let (sec, key) = k.rsplit_once('.').unwrap_or(("", k));
            blocks.entry(sec).or_default().push((key, v));
        }
        let mut out = String::new();
        for (sec, items) in blocks {
            if !sec.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
            }
            for (k, v) in items {
                let v = if needs_quotes(v) { quote(v) } else { v.to_string() };
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}
