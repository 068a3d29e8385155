//! Structural path expressions.
//!
//! A [`FieldPath`] names a property of a JSON document without carrying its
//! value. The grammar is deliberately small:
//!
//! ```text
//! path := "$" step*
//! step := "." key          key matches [A-Za-z0-9_-]+
//!       | "[" quoted "]"   any other key, as a JSON string literal
//!       | "[*]"            any array element
//! ```
//!
//! Keys that fit the dot alphabet are always written in dot form, every other
//! key is bracket-quoted with JSON string escaping, so each path has exactly
//! one textual form.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathStep {
    Key(String),
    AnyIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("path must start with '$'")]
    MissingRoot,
    #[error("unexpected character at byte {0}")]
    Unexpected(usize),
    #[error("empty key at byte {0}")]
    EmptyKey(usize),
    #[error("bad quoted key at byte {0}")]
    BadQuotedKey(usize),
    #[error("non-canonical quoting at byte {0}")]
    NonCanonical(usize),
}

/// A value-free locator of a payload property, e.g. `$.user.email`.
///
/// Decoding from the wire does not check the grammar, so invalid paths can
/// reach [`crate::validate_record`] and be reported there. Use
/// [`FieldPath::parse`] for checked construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldPath(String);

pub(crate) fn is_dot_safe(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

pub(crate) fn write_key(out: &mut String, key: &str) {
    if is_dot_safe(key) {
        out.push('.');
        out.push_str(key);
    } else {
        out.push('[');
        // Serializing a &str cannot fail.
        out.push_str(&serde_json::to_string(key).expect("string serialization"));
        out.push(']');
    }
}

impl FieldPath {
    pub const ROOT: &'static str = "$";

    /// Wraps a string without checking the grammar.
    pub fn raw(expression: impl Into<String>) -> Self {
        FieldPath(expression.into())
    }

    pub fn parse(expression: &str) -> Result<Self, PathError> {
        parse_steps(expression)?;
        Ok(FieldPath(expression.to_owned()))
    }

    pub fn from_steps<'a>(steps: impl IntoIterator<Item = &'a PathStep>) -> Self {
        let mut out = String::from(Self::ROOT);
        for step in steps {
            match step {
                PathStep::Key(k) => write_key(&mut out, k),
                PathStep::AnyIndex => out.push_str("[*]"),
            }
        }
        FieldPath(out)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        parse_steps(&self.0).is_ok()
    }

    pub fn steps(&self) -> Result<Vec<PathStep>, PathError> {
        parse_steps(&self.0)
    }

    /// True when `self` equals `other` or is an ancestor of it.
    pub fn covers(&self, other: &FieldPath) -> bool {
        match other.0.strip_prefix(self.0.as_str()) {
            Some(rest) => rest.is_empty() || rest.starts_with('.') || rest.starts_with('['),
            None => false,
        }
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for FieldPath {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn parse_steps(s: &str) -> Result<Vec<PathStep>, PathError> {
    let bytes = s.as_bytes();
    if bytes.first() != Some(&b'$') {
        return Err(PathError::MissingRoot);
    }
    let mut steps = Vec::new();
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'.' => {
                let start = i + 1;
                let mut end = start;
                while end < bytes.len()
                    && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_' || bytes[end] == b'-')
                {
                    end += 1;
                }
                if end == start {
                    return Err(PathError::EmptyKey(start));
                }
                steps.push(PathStep::Key(s[start..end].to_owned()));
                i = end;
            }
            b'[' if s[i..].starts_with("[*]") => {
                steps.push(PathStep::AnyIndex);
                i += 3;
            }
            b'[' if bytes.get(i + 1) == Some(&b'"') => {
                let open = i + 1;
                let close = closing_quote(bytes, open + 1).ok_or(PathError::BadQuotedKey(open))?;
                if bytes.get(close + 1) != Some(&b']') {
                    return Err(PathError::BadQuotedKey(close));
                }
                let literal = &s[open..=close];
                let key: String =
                    serde_json::from_str(literal).map_err(|_| PathError::BadQuotedKey(open))?;
                let mut canonical = String::new();
                write_key(&mut canonical, &key);
                if canonical != s[i..close + 2] {
                    return Err(PathError::NonCanonical(i));
                }
                steps.push(PathStep::Key(key));
                i = close + 2;
            }
            _ => return Err(PathError::Unexpected(i)),
        }
    }
    Ok(steps)
}

/// Index of the unescaped `"` ending a JSON string literal whose content
/// starts at `from`.
fn closing_quote(bytes: &[u8], from: usize) -> Option<usize> {
    let mut i = from;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return Some(i),
            _ => i += 1,
        }
    }
    None
}
