//! Brute-force path enumeration, written independently of the extractor.
//!
//! Every node is first listed with its concrete array indices using an
//! explicit work stack; indices are collapsed and keys quoted afterwards
//! with a hand-written JSON string escaper.

use std::collections::BTreeSet;

use serde_json::Value;

#[derive(Clone)]
enum Seg {
    Key(String),
    Index(usize),
}

pub fn all_paths(doc: &Value) -> BTreeSet<String> {
    let mut concrete: Vec<Vec<Seg>> = Vec::new();
    let mut stack: Vec<(Vec<Seg>, &Value)> = vec![(Vec::new(), doc)];
    while let Some((trail, node)) = stack.pop() {
        if !trail.is_empty() {
            concrete.push(trail.clone());
        }
        match node {
            Value::Object(map) => {
                for (k, v) in map.iter() {
                    let mut t = trail.clone();
                    t.push(Seg::Key(k.clone()));
                    stack.push((t, v));
                }
            }
            Value::Array(items) => {
                for (i, v) in items.iter().enumerate() {
                    let mut t = trail.clone();
                    t.push(Seg::Index(i));
                    stack.push((t, v));
                }
            }
            _ => {}
        }
    }
    concrete.iter().map(|t| render(t)).collect()
}

fn render(trail: &[Seg]) -> String {
    let mut s = String::from("$");
    for seg in trail {
        match seg {
            Seg::Index(_) => s.push_str("[*]"),
            Seg::Key(k) => {
                let plain = !k.is_empty()
                    && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
                if plain {
                    s.push('.');
                    s.push_str(k);
                } else {
                    s.push_str("[\"");
                    s.push_str(&escape(k));
                    s.push_str("\"]");
                }
            }
        }
    }
    s
}

fn escape(k: &str) -> String {
    let mut out = String::new();
    for c in k.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}
