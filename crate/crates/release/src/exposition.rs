//! Reader for the Prometheus text exposition format (0.0.4).

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub labels: BTreeMap<String, String>,
    pub value: f64,
}

/// Parses sample lines, skipping comments and blank lines. Timestamps after
/// the value are ignored.
pub fn parse_text(text: &str) -> Result<Vec<Sample>, String> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_line(line).map_err(|e| format!("line {}: {e}", idx + 1))?);
    }
    Ok(out)
}

fn parse_line(line: &str) -> Result<Sample, String> {
    let name_end = line
        .find(|c: char| c == '{' || c.is_whitespace())
        .ok_or("missing value")?;
    let name = line[..name_end].to_owned();
    let mut rest = &line[name_end..];
    let mut labels = BTreeMap::new();
    if rest.starts_with('{') {
        let (parsed, after) = parse_labels(&rest[1..])?;
        labels = parsed;
        rest = after;
    }
    let value_text = rest.split_whitespace().next().ok_or("missing value")?;
    let value = match value_text {
        "+Inf" => f64::INFINITY,
        "-Inf" => f64::NEG_INFINITY,
        "NaN" => f64::NAN,
        v => v.parse().map_err(|_| format!("bad value {v:?}"))?,
    };
    Ok(Sample { name, labels, value })
}

/// Parses `k="v",...}` and returns the remainder after the closing brace.
fn parse_labels(mut s: &str) -> Result<(BTreeMap<String, String>, &str), String> {
    let mut labels = BTreeMap::new();
    loop {
        s = s.trim_start_matches([' ', ',']);
        if let Some(rest) = s.strip_prefix('}') {
            return Ok((labels, rest));
        }
        let eq = s.find('=').ok_or("bad label")?;
        let key = s[..eq].trim().to_owned();
        let body = s[eq + 1..].strip_prefix('"').ok_or("unquoted label value")?;
        let mut value = String::new();
        let mut chars = body.char_indices();
        let end = loop {
            match chars.next() {
                Some((_, '\\')) => match chars.next() {
                    Some((_, 'n')) => value.push('\n'),
                    Some((_, c)) => value.push(c),
                    None => return Err("dangling escape".into()),
                },
                Some((i, '"')) => break i,
                Some((_, c)) => value.push(c),
                None => return Err("unterminated label value".into()),
            }
        };
        labels.insert(key, value);
        s = &body[end + 1..];
    }
}

/// A metric name with required label values, written `name{k="v",...}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    pub name: String,
    pub labels: BTreeMap<String, String>,
}

impl Selector {
    pub fn parse(text: &str) -> Result<Selector, String> {
        let text = text.trim();
        match text.find('{') {
            None => Ok(Selector { name: text.to_owned(), labels: BTreeMap::new() }),
            Some(i) => {
                let (labels, rest) = parse_labels(&text[i + 1..])?;
                if !rest.trim().is_empty() {
                    return Err(format!("trailing input {rest:?}"));
                }
                Ok(Selector { name: text[..i].to_owned(), labels })
            }
        }
    }

    pub fn matches(&self, sample: &Sample) -> bool {
        sample.name == self.name && self.labels.iter().all(|(k, v)| sample.labels.get(k) == Some(v))
    }

    /// Sum over matching series, `None` when no series matches.
    pub fn sum(&self, samples: &[Sample]) -> Option<f64> {
        samples
            .iter()
            .filter(|s| self.matches(s))
            .fold(None, |acc, s| Some(acc.unwrap_or(0.0) + s.value))
    }
}
