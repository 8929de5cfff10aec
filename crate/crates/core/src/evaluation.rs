//! Ground-truth loop pairs, precision-recall curves, maximum F1 and
//! Extended Precision under the Top-1 protocol.
//!
//! Each query contributes at most one scored match. At threshold `τ`:
//!
//! * a match with distance `≤ τ` is a detection: TP if the matched id is a
//!   ground-truth positive of the query, FP otherwise;
//! * a query with positives and no detection is a FN;
//! * a query without positives can only be a FP.
//!
//! Precision with zero detections is 1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cloud_io::Pose;
use crate::error::{Error, Result};

/// Tolerance when testing `precision == 1`.
pub const PRECISION_ONE_TOLERANCE: f64 = 1e-9;

/// Evenly spaced thresholds in a sweep, before adding the observed scores.
pub const SWEEP_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruthMode {
    /// Euclidean distance below `kitti_radius`.
    Kitti,
    /// Within `parking_xy_radius` in x-y and `parking_z_tolerance` in z.
    Parking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthConfig {
    pub mode: GroundTruthMode,
    pub kitti_radius: f64,
    pub parking_xy_radius: f64,
    pub parking_z_tolerance: f64,
    /// Within one sequence, frames closer than this in index are never
    /// positives.
    pub exclusion_gap: usize,
    /// Within one sequence, only earlier frames can be positives.
    #[serde(default)]
    pub past_only: bool,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self::kitti()
    }
}

impl GroundTruthConfig {
    pub fn kitti() -> Self {
        Self {
            mode: GroundTruthMode::Kitti,
            kitti_radius: 5.0,
            parking_xy_radius: 4.0,
            parking_z_tolerance: 2.0,
            exclusion_gap: 50,
            past_only: false,
        }
    }

    pub fn parking() -> Self {
        Self {
            mode: GroundTruthMode::Parking,
            ..Self::kitti()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kitti_radius", self.kitti_radius),
            ("parking_xy_radius", self.parking_xy_radius),
            ("parking_z_tolerance", self.parking_z_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether two poses are close enough to be the same place.
    pub fn is_near(&self, a: &Pose, b: &Pose) -> bool {
        let d = a.translation - b.translation;
        match self.mode {
            GroundTruthMode::Kitti => d.norm() < self.kitti_radius,
            GroundTruthMode::Parking => {
                d.x.hypot(d.y) <= self.parking_xy_radius && d.z.abs() <= self.parking_z_tolerance
            }
        }
    }
}

/// Positive database ids per query, plus the id universes used to reject
/// unknown ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    positives: BTreeMap<u64, BTreeSet<u64>>,
    database: BTreeSet<u64>,
}

impl GroundTruth {
    pub fn new(queries: impl IntoIterator<Item = u64>, database: impl IntoIterator<Item = u64>) -> Self {
        Self {
            positives: queries.into_iter().map(|q| (q, BTreeSet::new())).collect(),
            database: database.into_iter().collect(),
        }
    }

    /// Records a positive pair. Unknown ids are added to their universe.
    pub fn insert(&mut self, query: u64, positive: u64) {
        self.database.insert(positive);
        self.positives.entry(query).or_default().insert(positive);
    }

    pub fn positives(&self, query: u64) -> Result<&BTreeSet<u64>> {
        self.positives.get(&query).ok_or(Error::UnknownId(query))
    }

    pub fn contains_database_id(&self, id: u64) -> bool {
        self.database.contains(&id)
    }

    pub fn queries(&self) -> impl Iterator<Item = u64> + '_ {
        self.positives.keys().copied()
    }

    pub fn query_count(&self) -> usize {
        self.positives.len()
    }

    /// Queries with at least one positive.
    pub fn positive_query_count(&self) -> usize {
        self.positives.values().filter(|s| !s.is_empty()).count()
    }

    /// All `(query, positive)` pairs in ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.positives.iter().flat_map(|(q, s)| s.iter().map(move |p| (*q, *p)))
    }
}

/// Ground truth within one sequence. Ids are frame indices; every frame is
/// both a query and a database entry.
pub fn ground_truth(poses: &[Pose], cfg: &GroundTruthConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let ids = poses.iter().map(|p| p.frame_index as u64);
    let mut gt = GroundTruth::new(ids.clone(), ids);
    for a in poses {
        for b in poses {
            let (i, j) = (a.frame_index, b.frame_index);
            if i.abs_diff(j) < cfg.exclusion_gap.max(1) || (cfg.past_only && j > i) {
                continue;
            }
            if cfg.is_near(a, b) {
                gt.insert(i as u64, j as u64);
            }
        }
    }
    Ok(gt)
}

/// Ground truth between a query session and a database session. No
/// exclusion gap applies.
pub fn ground_truth_between(queries: &[Pose], database: &[Pose], cfg: &GroundTruthConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let mut gt = GroundTruth::new(
        queries.iter().map(|p| p.frame_index as u64),
        database.iter().map(|p| p.frame_index as u64),
    );
    for q in queries {
        for d in database {
            if cfg.is_near(q, d) {
                gt.insert(q.frame_index as u64, d.frame_index as u64);
            }
        }
    }
    Ok(gt)
}

/// Top-1 result of one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOutcome {
    pub query_id: u64,
    /// Best candidate id and its distance; `None` when nothing was retrieved.
    pub best: Option<(u64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PrRow {
    pub fn f1(&self) -> Option<f64> {
        let s = self.precision + self.recall;
        (s > 0.0).then(|| 2.0 * self.precision * self.recall / s)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    /// Ascending threshold.
    pub rows: Vec<PrRow>,
    pub queries: usize,
}

/// `SWEEP_STEPS` evenly spaced thresholds over the observed distance range
/// plus every observed distance, ascending and deduplicated.
pub fn threshold_sweep(outcomes: &[QueryOutcome]) -> Vec<f64> {
    let mut scores: Vec<f64> = outcomes.iter().filter_map(|o| o.best.map(|b| b.1)).collect();
    let Some((lo, hi)) = scores
        .iter()
        .fold(None, |acc: Option<(f64, f64)>, &s| Some(acc.map_or((s, s), |(lo, hi)| (lo.min(s), hi.max(s)))))
    else {
        return Vec::new();
    };
    let steps = SWEEP_STEPS - 1;
    scores.extend((0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64));
    scores.push(hi);
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    scores
}

/// Scores Top-1 outcomes against `gt` at each threshold. Thresholds are
/// sorted and deduplicated first.
pub fn pr_curve(outcomes: &[QueryOutcome], gt: &GroundTruth, thresholds: &[f64]) -> Result<PrCurve> {
    let mut seen = BTreeSet::new();
    // (distance, is_tp, has_positives) for each detection candidate.
    let mut scored = Vec::with_capacity(outcomes.len());
    let mut positive_queries = 0usize;
    for o in outcomes {
        if !seen.insert(o.query_id) {
            return Err(Error::InvalidParams(format!("query {} scored twice", o.query_id)));
        }
        let positives = gt.positives(o.query_id)?;
        let has_positives = !positives.is_empty();
        positive_queries += usize::from(has_positives);
        if let Some((id, d)) = o.best {
            if !gt.contains_database_id(id) {
                return Err(Error::UnknownId(id));
            }
            if !d.is_finite() {
                return Err(Error::Numerical(format!("query {} has distance {d}", o.query_id)));
            }
            scored.push((d, positives.contains(&id), has_positives));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut thresholds: Vec<f64> = thresholds.to_vec();
    if thresholds.iter().any(|t| t.is_nan()) {
        return Err(Error::InvalidParams("NaN threshold".into()));
    }
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (mut tp, mut fp, mut detected_positive) = (0usize, 0usize, 0usize);
    let mut next = 0;
    let mut rows = Vec::with_capacity(thresholds.len());
    for tau in thresholds {
        while next < scored.len() && scored[next].0 <= tau {
            let (_, hit, has_positives) = scored[next];
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            detected_positive += usize::from(has_positives);
            next += 1;
        }
        let fn_ = positive_queries - detected_positive;
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        rows.push(PrRow {
            threshold: tau,
            precision,
            recall,
            tp,
            fp,
            fn_,
        });
    }
    Ok(PrCurve {
        rows,
        queries: outcomes.len(),
    })
}

/// Maximum F1 over rows; `None` when every row has `P + R = 0` or the
/// curve is empty.
pub fn f1_max(curve: &PrCurve) -> Option<f64> {
    curve.rows.iter().filter_map(PrRow::f1).reduce(f64::max)
}

/// `0.5 · (R_P100 + P_R0)`: the best recall at precision 1 and the
/// precision at the minimum-recall row (the first such row in threshold
/// order). `None` when no row reaches precision 1.
pub fn extended_precision(curve: &PrCurve) -> Option<f64> {
    let r_p100 = curve
        .rows
        .iter()
        .filter(|r| (r.precision - 1.0).abs() <= PRECISION_ONE_TOLERANCE)
        .map(|r| r.recall)
        .reduce(f64::max)?;
    let p_r0 = curve
        .rows
        .iter()
        .reduce(|best, r| if r.recall < best.recall { r } else { best })?
        .precision;
    Some(0.5 * (r_p100 + p_r0))
}

/// Fraction of positive queries whose first `k` ranked candidates include a
/// positive. `None` when no query has positives.
pub fn recall_at_k(ranked: &[(u64, Vec<u64>)], gt: &GroundTruth, k: usize) -> Result<Option<f64>> {
    let (mut hits, mut total) = (0usize, 0usize);
    for (q, candidates) in ranked {
        let positives = gt.positives(*q)?;
        if positives.is_empty() {
            continue;
        }
        total += 1;
        if candidates.iter().take(k).any(|c| positives.contains(c)) {
            hits += 1;
        }
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}
