use serde::{Deserialize, Serialize};

/// Latency percentiles in milliseconds (nearest rank over microsecond
/// samples).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

/// Smallest sample with at least `p` percent of samples at or below it.
pub fn nearest_rank(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Percentiles {
    pub fn from_micros(samples: impl IntoIterator<Item = u64>) -> Self {
        let mut v: Vec<u64> = samples.into_iter().collect();
        v.sort_unstable();
        let ms = |us: u64| us as f64 / 1000.0;
        Percentiles {
            count: v.len(),
            p50: ms(nearest_rank(&v, 50.0)),
            p90: ms(nearest_rank(&v, 90.0)),
            p99: ms(nearest_rank(&v, 99.0)),
            max: ms(v.last().copied().unwrap_or(0)),
        }
    }
}
