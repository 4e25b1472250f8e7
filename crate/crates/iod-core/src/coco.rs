//! COCO-format JSON ingestion and emission.
//!
//! Only the box-detection subset of the format is supported: images,
//! axis-aligned box annotations, and categories. Crowd regions are rejected
//! at validation. An optional `is_pseudo` flag on annotations marks boxes
//! produced by the pseudo-labeler; standard tools ignore the extra key.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::Annotation;

/// Provenance header of a generated file. All fields are optional so that
/// third-party COCO files parse cleanly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CocoInfo {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// SHA-256 of the source file a split was derived from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    /// 1-based stage index of a split output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    #[serde(default)]
    pub width: u32,
    #[serde(default)]
    pub height: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    /// `[x, y, width, height]` in absolute pixels.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_pseudo: bool,
}

impl CocoAnnotation {
    pub fn to_model(&self) -> Result<Annotation<f64>> {
        Ok(Annotation {
            image_id: self.image_id,
            bbox: BBox::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])?,
            class_id: self.category_id,
            is_pseudo: self.is_pseudo,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    #[serde(default)]
    pub info: CocoInfo,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoDataset {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let ds: Self = serde_json::from_reader(BufReader::new(reader))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        self.to_writer(std::fs::File::create(path)?)
    }

    /// Referential and shape checks: unique ids, known image and category
    /// references, valid boxes, no crowd regions.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = BTreeSet::new();
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(Error::Config { message: format!("duplicate image id {}", img.id) });
            }
        }
        let mut category_ids = BTreeSet::new();
        for cat in &self.categories {
            if cat.name.trim().is_empty() {
                return Err(Error::Config {
                    message: format!("category {} has an empty name", cat.id),
                });
            }
            if !category_ids.insert(cat.id) {
                return Err(Error::Config { message: format!("duplicate category id {}", cat.id) });
            }
        }
        let mut ann_ids = BTreeSet::new();
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(Error::Config {
                    message: format!("duplicate annotation id {}", ann.id),
                });
            }
            if ann.iscrowd != 0 {
                return Err(Error::CrowdAnnotation { ann_id: ann.id });
            }
            if !image_ids.contains(&ann.image_id) {
                return Err(Error::UnknownImage { ann_id: ann.id, image_id: ann.image_id });
            }
            if !category_ids.contains(&ann.category_id) {
                return Err(Error::UnknownClass { class_id: ann.category_id });
            }
            BBox::new(ann.bbox[0], ann.bbox[1], ann.bbox[2], ann.bbox[3])?;
        }
        Ok(())
    }

    pub fn category_ids(&self) -> BTreeSet<u32> {
        self.categories.iter().map(|c| c.id).collect()
    }

    /// Canonicalized name -> id map for schedule resolution.
    pub fn categories_by_name(&self) -> BTreeMap<String, u32> {
        self.categories.iter().map(|c| (canonical_name(&c.name), c.id)).collect()
    }

    pub fn to_annotations(&self) -> Result<Vec<Annotation<f64>>> {
        self.annotations.iter().map(CocoAnnotation::to_model).collect()
    }
}

/// Category-name normalization: lowercase with separators removed, so
/// "Ground-track-field", "ground track field", and "Groundtrackfield" all
/// compare equal.
pub fn canonical_name(name: &str) -> String {
    name.chars()
        .filter(|c| !matches!(c, ' ' | '-' | '_'))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Resolves a human-entered class name against dataset categories.
///
/// Exact canonical match wins; otherwise a unique canonical-suffix match is
/// accepted (the DIOR names "Expressway-Service-area" and
/// "Expressway-toll-station" are commonly abbreviated to "service-area" and
/// "toll-station"). Missing or ambiguous names are errors.
pub fn resolve_category(name: &str, categories: &[CocoCategory]) -> Result<u32> {
    let wanted = canonical_name(name);
    if wanted.is_empty() {
        return Err(Error::UnknownCategory { name: name.to_string() });
    }
    let mut suffix_hits = Vec::new();
    for cat in categories {
        let canon = canonical_name(&cat.name);
        if canon == wanted {
            return Ok(cat.id);
        }
        if canon.ends_with(&wanted) {
            suffix_hits.push(cat.id);
        }
    }
    match suffix_hits.as_slice() {
        [id] => Ok(*id),
        _ => Err(Error::UnknownCategory { name: name.to_string() }),
    }
}

/// Hex SHA-256 of a source file's raw bytes, recorded as split provenance.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        let _ = write!(out, "{b:02x}");
    }
    out
}
