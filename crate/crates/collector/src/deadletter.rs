//! Append-only audit store for input that failed validation.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

const DEAD_LETTER_FILE: &str = "deadletters.ndjson";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeadLetter {
    /// Original bytes, base64 encoded on the wire.
    #[serde(serialize_with = "to_base64", deserialize_with = "from_base64")]
    pub raw_payload: Vec<u8>,
    pub violations: Vec<String>,
    pub received_at: i64,
    pub source: String,
}

fn to_base64<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&STANDARD.encode(bytes))
}

fn from_base64<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
    let text = String::deserialize(d)?;
    STANDARD.decode(text).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Page {
    pub items: Vec<DeadLetter>,
    pub page: usize,
    pub size: usize,
    pub total: usize,
    pub pages: usize,
}

pub struct DeadLetterStore {
    inner: Mutex<(File, Vec<DeadLetter>)>,
}

impl DeadLetterStore {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(DEAD_LETTER_FILE);
        let mut letters = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                // a torn last line was never acknowledged
                if let Ok(dl) = serde_json::from_str(&line) {
                    letters.push(dl);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(DeadLetterStore { inner: Mutex::new((file, letters)) })
    }

    pub fn append(&self, letters: Vec<DeadLetter>) -> io::Result<()> {
        if letters.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for dl in &letters {
            buf.push_str(&serde_json::to_string(dl).expect("dead letter serialization"));
            buf.push('\n');
        }
        let mut inner = self.inner.lock().unwrap();
        inner.0.write_all(buf.as_bytes())?;
        inner.0.sync_data()?;
        inner.1.extend(letters);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries with `from <= receivedAt <= to` in arrival order; `page` is
    /// 1-based.
    pub fn list(&self, from: Option<i64>, to: Option<i64>, page: usize, size: usize) -> Page {
        let inner = self.inner.lock().unwrap();
        let mut matching: Vec<&DeadLetter> = inner
            .1
            .iter()
            .filter(|d| from.is_none_or(|f| d.received_at >= f) && to.is_none_or(|t| d.received_at <= t))
            .collect();
        matching.sort_by_key(|d| d.received_at);
        let size = size.max(1);
        let page = page.max(1);
        let total = matching.len();
        let items = matching.into_iter().skip((page - 1) * size).take(size).cloned().collect();
        Page { items, page, size, total, pages: total.div_ceil(size) }
    }
}
