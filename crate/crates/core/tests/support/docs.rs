//! Seeded random JSON documents with planted sentinel values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Number, Value};

pub const SENTINEL_PREFIX: &str = "SENTINEL_";

const KEY_POOL: &[&str] = &[
    "id", "name", "email", "user", "address", "street", "items", "k", "first.name",
    "with space", "quo\"te", "back\\slash", "tab\tkey", "", "*", "ümlaut", "a-b_c", "0",
    "nested", "line\nbreak", "ctrl\u{1}", "emoji😀",
];

pub struct DocGen {
    rng: ChaCha8Rng,
    pub max_depth: usize,
    next_sentinel: u64,
}

impl DocGen {
    pub fn new(seed: u64) -> Self {
        DocGen { rng: ChaCha8Rng::seed_from_u64(seed), max_depth: 6, next_sentinel: 0 }
    }

    pub fn sentinel(&mut self) -> String {
        self.next_sentinel += 1;
        format!("{SENTINEL_PREFIX}{:08X}_{:04X}", self.rng.random::<u32>(), self.next_sentinel)
    }

    /// A document whose root is an object or array; depth counts container
    /// levels below the root.
    pub fn document(&mut self) -> Value {
        if self.rng.random_bool(0.85) {
            self.object(0)
        } else {
            self.array(0)
        }
    }

    fn value(&mut self, depth: usize) -> Value {
        let container_odds = if depth >= self.max_depth { 0.0 } else { 0.45 };
        if self.rng.random_bool(container_odds) {
            if self.rng.random_bool(0.6) {
                self.object(depth + 1)
            } else {
                self.array(depth + 1)
            }
        } else {
            self.scalar()
        }
    }

    fn object(&mut self, depth: usize) -> Value {
        let n = self.rng.random_range(0..5);
        let mut map = Map::new();
        for _ in 0..n {
            let key = if self.rng.random_bool(0.8) {
                KEY_POOL[self.rng.random_range(0..KEY_POOL.len())].to_owned()
            } else {
                format!("f{}", self.rng.random_range(0..40))
            };
            let v = self.value(depth);
            map.insert(key, v);
        }
        Value::Object(map)
    }

    fn array(&mut self, depth: usize) -> Value {
        let n = self.rng.random_range(0..4);
        Value::Array((0..n).map(|_| self.value(depth)).collect())
    }

    fn scalar(&mut self) -> Value {
        match self.rng.random_range(0..6) {
            0 => Value::Null,
            1 => Value::Bool(self.rng.random()),
            2 => Value::Number(Number::from(self.rng.random_range(-1000i64..1000))),
            _ => Value::String(self.sentinel()),
        }
    }

    /// Same shape, every scalar replaced by a fresh value.
    pub fn revalue(&mut self, doc: &Value) -> Value {
        match doc {
            Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), self.revalue(v))).collect()),
            Value::Array(a) => Value::Array(a.iter().map(|v| self.revalue(v)).collect()),
            Value::String(_) => Value::String(self.sentinel()),
            Value::Number(_) => Value::Number(Number::from(self.rng.random_range(-5i64..5))),
            other => other.clone(),
        }
    }

    /// Reverses every array, recursively.
    pub fn permute(doc: &Value) -> Value {
        match doc {
            Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), Self::permute(v))).collect()),
            Value::Array(a) => Value::Array(a.iter().rev().map(Self::permute).collect()),
            other => other.clone(),
        }
    }
}

pub fn collect_sentinels(doc: &Value, out: &mut Vec<String>) {
    match doc {
        Value::Object(m) => m.values().for_each(|v| collect_sentinels(v, out)),
        Value::Array(a) => a.iter().for_each(|v| collect_sentinels(v, out)),
        Value::String(s) if s.starts_with(SENTINEL_PREFIX) => out.push(s.clone()),
        _ => {}
    }
}
