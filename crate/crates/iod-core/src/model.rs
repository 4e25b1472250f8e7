//! Shared detection vocabulary: predictions, ground-truth annotations, query
//! batches, and the line-oriented detection stream format.

use std::io::{BufRead, Write};

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Real;

/// One predicted box for one query slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<R = f64> {
    pub bbox: BBox<R>,
    /// Classification confidence in `[0, 1]`.
    pub score: R,
    pub class_id: u32,
    /// Index of the decoder query that produced this box; unique per image.
    pub query_index: u32,
}

impl<R: Real> Detection<R> {
    pub fn new(bbox: BBox<R>, score: R, class_id: u32, query_index: u32) -> Result<Self> {
        validate_score(score)?;
        Ok(Self { bbox, score, class_id, query_index })
    }
}

pub(crate) fn validate_score<R: Real>(score: R) -> Result<()> {
    if !score.is_finite() || score < R::zero() || score > R::one() {
        return Err(Error::InvalidScore { score: score.to64() });
    }
    Ok(())
}

/// One ground-truth (or pseudo ground-truth) box on one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation<R = f64> {
    pub image_id: u64,
    pub bbox: BBox<R>,
    pub class_id: u32,
    /// True when the box was generated from teacher predictions rather than
    /// human labels.
    pub is_pseudo: bool,
}

/// Dense per-pixel feature map, `H x W x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<R = f64> {
    data: Array3<R>,
}

impl<R: Real> FeatureMap<R> {
    pub fn new(data: Array3<R>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyFeatureMap);
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<R> {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> ArrayView1<'_, R> {
        self.data.slice(ndarray::s![y, x, ..])
    }
}

/// Per-image decoder output: one feature row per query, aligned with the
/// detections, plus the optional image-level feature map.
#[derive(Debug, Clone)]
pub struct QueryBatch<R = f64> {
    /// `N x D` query features; row `i` belongs to `detections[i]`.
    pub features: Array2<R>,
    pub detections: Vec<Detection<R>>,
    pub image_features: Option<FeatureMap<R>>,
}

impl<R: Real> QueryBatch<R> {
    pub fn new(
        features: Array2<R>,
        detections: Vec<Detection<R>>,
        image_features: Option<FeatureMap<R>>,
    ) -> Result<Self> {
        if features.nrows() != detections.len() {
            return Err(Error::BatchMisaligned {
                features: features.nrows(),
                detections: detections.len(),
            });
        }
        let mut seen: Vec<u32> = detections.iter().map(|d| d.query_index).collect();
        seen.sort_unstable();
        for pair in seen.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::DuplicateQueryIndex { query_index: pair[0] });
            }
        }
        Ok(Self { features, detections, image_features })
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// One line of a detection stream file.
///
/// The stream holds a model's raw predictions over a dataset, one record per
/// line, whitespace separated: `image_id x y w h score class_id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetRecord<R = f64> {
    pub image_id: u64,
    pub bbox: BBox<R>,
    pub score: R,
    pub class_id: u32,
}

/// Parses a detection stream. Blank lines and `#` comment lines are skipped;
/// any malformed record fails with its line number.
pub fn read_detections<R: Real, B: BufRead>(reader: B) -> Result<Vec<DetRecord<R>>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_record(trimmed).map_err(|message| Error::ParseRecord {
            line: idx + 1,
            message,
        })?);
    }
    Ok(out)
}

fn parse_record<R: Real>(line: &str) -> std::result::Result<DetRecord<R>, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 7 {
        return Err(format!("expected 7 fields, found {}", fields.len()));
    }
    let image_id: u64 = fields[0].parse().map_err(|_| format!("bad image_id '{}'", fields[0]))?;
    let mut nums = [0.0f64; 5];
    for (slot, raw) in nums.iter_mut().zip(&fields[1..6]) {
        *slot = raw.parse().map_err(|_| format!("bad number '{raw}'"))?;
    }
    let class_id: u32 = fields[6].parse().map_err(|_| format!("bad class_id '{}'", fields[6]))?;
    let bbox = BBox::new(R::of(nums[0]), R::of(nums[1]), R::of(nums[2]), R::of(nums[3]))
        .map_err(|e| e.to_string())?;
    let score = R::of(nums[4]);
    validate_score(score).map_err(|e| e.to_string())?;
    Ok(DetRecord { image_id, bbox, score, class_id })
}

/// Writes a detection stream in the format accepted by [`read_detections`].
/// Floats are printed in shortest round-trip form, so read-back is lossless.
pub fn write_detections<R: Real, W: Write>(writer: &mut W, records: &[DetRecord<R>]) -> Result<()> {
    for r in records {
        writeln!(
            writer,
            "{} {} {} {} {} {} {}",
            r.image_id, r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.score, r.class_id
        )?;
    }
    Ok(())
}
