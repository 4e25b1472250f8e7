//! Area-based scale bucketing of predicted boxes.
//!
//! Queries are split into Small / Medium / Large groups before any relational
//! statistics are computed, so that objects of very different scales never
//! share a topology. Bucket boundaries follow the COCO convention of pixel
//! area thresholds: `32^2 = 1024` and `96^2 = 9216` by default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Real;

/// Scale group of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScaleBucket {
    Small,
    Medium,
    Large,
}

impl ScaleBucket {
    pub const ALL: [ScaleBucket; 3] = [ScaleBucket::Small, ScaleBucket::Medium, ScaleBucket::Large];

    pub fn name(self) -> &'static str {
        match self {
            ScaleBucket::Small => "small",
            ScaleBucket::Medium => "medium",
            ScaleBucket::Large => "large",
        }
    }

    pub fn index(self) -> usize {
        match self {
            ScaleBucket::Small => 0,
            ScaleBucket::Medium => 1,
            ScaleBucket::Large => 2,
        }
    }
}

/// Bucket boundaries. `Small: area < tau_s`, `Medium: tau_s <= area < tau_m`,
/// `Large: area >= tau_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig<R = f64> {
    pub tau_s: R,
    pub tau_m: R,
}

impl<R: Real> Default for ScaleConfig<R> {
    fn default() -> Self {
        Self { tau_s: R::of(1024.0), tau_m: R::of(9216.0) }
    }
}

impl<R: Real> ScaleConfig<R> {
    pub fn new(tau_s: R, tau_m: R) -> Result<Self> {
        if !(tau_s.is_finite() && tau_m.is_finite()) || tau_s <= R::zero() || tau_s >= tau_m {
            return Err(Error::InvalidScaleThresholds { tau_s: tau_s.to64(), tau_m: tau_m.to64() });
        }
        Ok(Self { tau_s, tau_m })
    }

    /// Bucket of a raw pixel area. Boundaries belong to the upper bucket.
    pub fn bucket_of_area(&self, area: R) -> ScaleBucket {
        if area < self.tau_s {
            ScaleBucket::Small
        } else if area < self.tau_m {
            ScaleBucket::Medium
        } else {
            ScaleBucket::Large
        }
    }

    pub fn bucket_of(&self, bbox: &BBox<R>) -> ScaleBucket {
        self.bucket_of_area(bbox.area())
    }
}

/// Query indices grouped by scale bucket, original order preserved.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScalePartition {
    groups: [Vec<usize>; 3],
}

impl ScalePartition {
    pub fn group(&self, bucket: ScaleBucket) -> &[usize] {
        &self.groups[bucket.index()]
    }

    /// Total number of partitioned queries.
    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.iter().all(Vec::is_empty)
    }
}

/// Splits query indices `0..boxes.len()` into the three scale groups.
/// Every index lands in exactly one group; an empty input yields three empty
/// groups.
pub fn partition_queries<R: Real>(boxes: &[BBox<R>], config: &ScaleConfig<R>) -> ScalePartition {
    let mut partition = ScalePartition::default();
    for (i, b) in boxes.iter().enumerate() {
        partition.groups[config.bucket_of(b).index()].push(i);
    }
    partition
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_of_area(area: f64) -> BBox<f64> {
        // 1 x area box: area is exact in floating point for the values used.
        BBox::new(0.0, 0.0, 1.0, area).unwrap()
    }

    #[test]
    fn boundary_areas_belong_to_the_upper_bucket() {
        let cfg = ScaleConfig::default();
        assert_eq!(cfg.bucket_of_area(900.0), ScaleBucket::Small);
        assert_eq!(cfg.bucket_of_area(1024.0), ScaleBucket::Medium);
        assert_eq!(cfg.bucket_of_area(9215.0), ScaleBucket::Medium);
        assert_eq!(cfg.bucket_of_area(9216.0), ScaleBucket::Large);
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let boxes: Vec<BBox<f64>> =
            [1.0, 1023.0, 1024.0, 5000.0, 9216.0, 100000.0].map(box_of_area).to_vec();
        let p = partition_queries(&boxes, &ScaleConfig::default());
        assert_eq!(p.group(ScaleBucket::Small), &[0, 1]);
        assert_eq!(p.group(ScaleBucket::Medium), &[2, 3]);
        assert_eq!(p.group(ScaleBucket::Large), &[4, 5]);
        assert_eq!(p.len(), boxes.len());
    }

    #[test]
    fn empty_batch_yields_empty_groups() {
        let p = partition_queries::<f64>(&[], &ScaleConfig::default());
        assert!(p.is_empty());
        for b in ScaleBucket::ALL {
            assert!(p.group(b).is_empty());
        }
    }

    #[test]
    fn thresholds_must_be_ordered_and_positive() {
        assert!(ScaleConfig::new(1024.0, 9216.0).is_ok());
        assert!(ScaleConfig::new(9216.0, 1024.0).is_err());
        assert!(ScaleConfig::new(0.0, 9216.0).is_err());
        assert!(ScaleConfig::new(1024.0, 1024.0).is_err());
        assert!(ScaleConfig::new(f64::NAN, 9216.0).is_err());
    }

    #[test]
    fn buckets_are_monotone_in_area() {
        let cfg = ScaleConfig::default();
        let mut last = ScaleBucket::Small;
        for area in [0.5, 1.0, 500.0, 1023.0, 1024.0, 2000.0, 9215.0, 9216.0, 1e7] {
            let b = cfg.bucket_of_area(area);
            assert!(b >= last, "bucket regressed at area {area}");
            last = b;
        }
    }
}
