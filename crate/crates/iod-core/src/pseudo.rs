//! Clustering-driven pseudo-label generation.
//!
//! Teacher detections for old classes are collected into per-class score
//! banks. A per-class confidence threshold is the lower edge of the
//! high-confidence cluster of an exact 1-D 2-means split of the bank;
//! detections at or above the threshold become pseudo ground truth after
//! IoU de-duplication against the real annotations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::model::{Annotation, Detection};
use crate::scalar::Real;

/// Pseudo-label generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpgConfig<R = f64> {
    /// Minimal candidate filter: only scores strictly above enter a bank.
    pub delta_min: R,
    /// Bank capacity, oldest-first eviction.
    pub capacity: usize,
    /// Pseudo-labels overlapping ground truth at IoU >= theta_nms are dropped.
    pub theta_nms: R,
    /// Banks below this size use the fallback threshold instead of clustering.
    pub min_samples: usize,
    /// Static threshold for cold or degenerate banks.
    pub fallback_threshold: R,
}

impl<R: Real> Default for CpgConfig<R> {
    fn default() -> Self {
        Self {
            delta_min: R::of(0.3),
            capacity: 20_000,
            theta_nms: R::of(0.7),
            min_samples: 50,
            fallback_threshold: R::of(0.4),
        }
    }
}

impl<R: Real> CpgConfig<R> {
    pub fn validate(&self) -> Result<()> {
        let ok = R::zero() < self.delta_min
            && self.delta_min < self.fallback_threshold
            && self.fallback_threshold < R::one()
            && R::zero() < self.theta_nms
            && self.theta_nms <= R::one()
            && self.capacity > 0
            && self.min_samples >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::Config {
                message: format!(
                    "cpg config violates 0 < delta_min < fallback_threshold < 1, \
                     0 < theta_nms <= 1, capacity > 0, min_samples >= 2: {self:?}"
                ),
            })
        }
    }
}

/// Per-class FIFO score banks.
///
/// One bank per class with a single writer (the training loop); threshold
/// computation only reads. Banks persist to a JSON sidecar between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBanks<R = f64> {
    capacity: usize,
    banks: BTreeMap<u32, VecDeque<R>>,
}

impl<R: Real + Serialize + for<'de> Deserialize<'de>> ScoreBanks<R> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, banks: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a batch of scores to one class's bank. Scores not strictly
    /// above `delta_min` never enter; the oldest entries are evicted once the
    /// bank exceeds its capacity.
    pub fn update(&mut self, class_id: u32, scores: impl IntoIterator<Item = R>, delta_min: R) {
        let bank = self.banks.entry(class_id).or_default();
        for s in scores {
            if s > delta_min {
                bank.push_back(s);
                if bank.len() > self.capacity {
                    bank.pop_front();
                }
            }
        }
    }

    /// Current contents of one bank, oldest first. Empty for unseen classes.
    pub fn scores(&self, class_id: u32) -> Vec<R> {
        self.banks.get(&class_id).map(|b| b.iter().copied().collect()).unwrap_or_default()
    }

    pub fn len(&self, class_id: u32) -> usize {
        self.banks.get(&class_id).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.banks.values().all(VecDeque::is_empty)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Result of the exact two-cluster split of a score bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSplit<R = f64> {
    /// Minimum of the high cluster; kept scores satisfy `s >= threshold`.
    pub threshold: R,
    pub mu_low: R,
    pub mu_high: R,
    /// Optimal within-cluster sum of squares.
    pub wcss: R,
    /// Number of samples in the low cluster.
    pub low_len: usize,
}

/// Exact 1-D 2-means over the scores.
///
/// The optimal 2-partition of reals under WCSS is always a contiguous split
/// of the sorted sequence, so every split point is enumerated with prefix
/// sums: O(n) after the sort, globally optimal, no initialization
/// sensitivity. WCSS ties pick the split with the lower threshold.
///
/// Returns `None` for fewer than two samples or all-identical scores; the
/// caller then falls back to a static threshold.
pub fn kmeans2_threshold<R: Real>(scores: &[R]) -> Option<TwoSplit<R>> {
    let n = scores.len();
    if n < 2 {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    if sorted[0] == sorted[n - 1] {
        return None;
    }

    // prefix[i] = sum of the first i values (and squares).
    let mut prefix = vec![R::zero(); n + 1];
    let mut prefix_sq = vec![R::zero(); n + 1];
    for (i, &s) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s;
        prefix_sq[i + 1] = prefix_sq[i] + s * s;
    }
    let css = |a: usize, b: usize| -> R {
        let len = R::of_usize(b - a);
        let sum = prefix[b] - prefix[a];
        prefix_sq[b] - prefix_sq[a] - sum * sum / len
    };

    let mut best_m = 1;
    let mut best_wcss = R::infinity();
    for m in 1..n {
        let wcss = css(0, m) + css(m, n);
        // Strict improvement keeps the smallest split index, i.e. the lowest
        // threshold, on exact ties.
        if wcss < best_wcss {
            best_wcss = wcss;
            best_m = m;
        }
    }
    let m = best_m;
    Some(TwoSplit {
        threshold: sorted[m],
        mu_low: (prefix[m] - prefix[0]) / R::of_usize(m),
        mu_high: (prefix[n] - prefix[m]) / R::of_usize(n - m),
        wcss: best_wcss,
        low_len: m,
    })
}

/// How a class threshold was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    Clustered,
    Fallback,
}

/// One class's effective score threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThreshold<R = f64> {
    pub threshold: R,
    pub source: ThresholdSource,
    pub bank_len: usize,
    /// `(mu_low, mu_high)` when the threshold came from clustering.
    pub centroids: Option<(R, R)>,
}

/// Thresholds for every old class; the key set is the old-class set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdTable<R = f64> {
    entries: BTreeMap<u32, ClassThreshold<R>>,
}

impl<R: Real> ThresholdTable<R> {
    pub fn get(&self, class_id: u32) -> Option<&ClassThreshold<R>> {
        self.entries.get(&class_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u32, &ClassThreshold<R>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds the threshold table for the given old classes from the current
/// bank snapshot. Cold banks (fewer than `min_samples` entries) and
/// degenerate banks (all-identical scores) use the fallback threshold.
pub fn threshold_table<R: Real + Serialize + for<'de> Deserialize<'de>>(
    banks: &ScoreBanks<R>,
    old_classes: &BTreeSet<u32>,
    config: &CpgConfig<R>,
) -> ThresholdTable<R> {
    let mut entries = BTreeMap::new();
    for &class_id in old_classes {
        let scores = banks.scores(class_id);
        let clustered = if scores.len() >= config.min_samples {
            kmeans2_threshold(&scores)
        } else {
            None
        };
        let entry = match clustered {
            Some(split) => ClassThreshold {
                threshold: split.threshold,
                source: ThresholdSource::Clustered,
                bank_len: scores.len(),
                centroids: Some((split.mu_low, split.mu_high)),
            },
            None => ClassThreshold {
                threshold: config.fallback_threshold,
                source: ThresholdSource::Fallback,
                bank_len: scores.len(),
                centroids: None,
            },
        };
        entries.insert(class_id, entry);
    }
    ThresholdTable { entries }
}

/// Turns one image's teacher detections into pseudo annotations.
///
/// Keeps exactly the detections of old classes with `score >= threshold`
/// (inclusive). New-class detections are never emitted. An old class present
/// in the predictions but missing from the table is an error.
pub fn generate_pseudo_labels<R: Real>(
    image_id: u64,
    teacher_preds: &[Detection<R>],
    old_classes: &BTreeSet<u32>,
    thresholds: &ThresholdTable<R>,
) -> Result<Vec<Annotation<R>>> {
    let mut out = Vec::new();
    for pred in teacher_preds {
        if !old_classes.contains(&pred.class_id) {
            continue;
        }
        let entry = thresholds
            .get(pred.class_id)
            .ok_or(Error::MissingThreshold { class_id: pred.class_id })?;
        if pred.score >= entry.threshold {
            out.push(Annotation {
                image_id,
                bbox: pred.bbox,
                class_id: pred.class_id,
                is_pseudo: true,
            });
        }
    }
    Ok(out)
}

/// Drops pseudo-labels overlapping ground truth.
///
/// A pseudo-label survives iff its IoU against every ground-truth box on the
/// same image is strictly below `theta_nms`, regardless of class. Order is
/// preserved.
pub fn deduplicate<R: Real>(
    pseudo: Vec<Annotation<R>>,
    gt: &[Annotation<R>],
    theta_nms: R,
) -> Vec<Annotation<R>> {
    pseudo
        .into_iter()
        .filter(|p| {
            gt.iter()
                .filter(|g| g.image_id == p.image_id)
                .all(|g| iou(&p.bbox, &g.bbox) < theta_nms)
        })
        .collect()
}
