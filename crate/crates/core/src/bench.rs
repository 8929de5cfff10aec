//! Wall-clock timing summaries.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::descriptor::{sector_key, Signature};
use crate::error::{Error, Result};
use crate::matcher::DescriptorDatabase;

/// Summary of repeated measurements, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    /// `None` for an empty sample.
    pub fn from_durations(durations: &[Duration]) -> Option<Self> {
        let mut ms: Vec<f64> = durations.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        if ms.is_empty() {
            return None;
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 {
            ms[n / 2]
        } else {
            0.5 * (ms[n / 2 - 1] + ms[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(Self {
            samples: n,
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p95_ms: ms[rank - 1],
            min_ms: ms[0],
            max_ms: ms[n - 1],
        })
    }
}

/// Runs `f` once per input and records each call's duration.
pub fn time_each<T, R>(inputs: &[T], mut f: impl FnMut(&T) -> R) -> (Vec<R>, Vec<Duration>) {
    let mut out = Vec::with_capacity(inputs.len());
    let mut times = Vec::with_capacity(inputs.len());
    for x in inputs {
        let start = Instant::now();
        let r = f(x);
        times.push(start.elapsed());
        out.push(r);
    }
    (out, times)
}

/// An indexed database of `size` entries made from perturbed copies of
/// `pool`: each copy is column-shifted at random, gets a few random bumps
/// in its matrix and small noise on its geometric key. Entry ids are
/// `0..size`. Used to time queries at database sizes beyond what is worth
/// extracting.
pub fn synthetic_database<R: Rng>(pool: &[Signature], size: usize, rng: &mut R) -> Result<DescriptorDatabase> {
    if pool.is_empty() || size == 0 {
        return Err(Error::EmptyDatabase);
    }
    let mut db = DescriptorDatabase::new();
    for id in 0..size as u64 {
        let src = &pool[rng.random_range(0..pool.len())];
        let cols = src.descriptor.cols();
        let mut d = src.descriptor.shifted(rng.random_range(0..cols)).with_frame_id(id);
        for row in 0..d.rows() {
            let c = rng.random_range(0..cols);
            d.set(row, c, d.get(row, c) + rng.random_range(0.0..3.0));
        }
        let mut geometric_key = src.geometric_key.clone();
        for h in &mut geometric_key.histogram {
            *h = (*h + rng.random_range(-0.01..0.01)).max(0.0);
        }
        db.push(
            Signature {
                sector_key: sector_key(&d),
                geometric_key,
                descriptor: d,
            },
            None,
        )?;
    }
    db.build_index()?;
    Ok(db)
}
