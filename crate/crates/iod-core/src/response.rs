//! Response distillation between teacher and student decoder outputs.
//!
//! The frozen teacher's per-query class distributions and boxes supervise the
//! student on the old classes. Each query's contribution is gated by the
//! teacher's own confidence on the old classes, so background queries barely
//! distill. Queries correspond by index: query `i` of the student is trained
//! against query `i` of the teacher, layer by layer.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::CenterBox;
use crate::scalar::Real;
use crate::setloss::box_loss_with_grad;

/// One decoder layer's outputs: `N x C` class logits plus `N` normalized
/// center-form boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerResponses<R = f64> {
    pub logits: Array2<R>,
    pub boxes: Vec<CenterBox<R>>,
    pub layer_index: usize,
}

impl<R: Real> LayerResponses<R> {
    /// Validates that boxes align with logits rows and have finite, positive
    /// extent.
    pub fn new(logits: Array2<R>, boxes: Vec<CenterBox<R>>, layer_index: usize) -> Result<Self> {
        if boxes.len() != logits.nrows() {
            return Err(Error::BatchMisaligned {
                features: logits.nrows(),
                detections: boxes.len(),
            });
        }
        for b in &boxes {
            let fields = [b.cx, b.cy, b.w, b.h];
            if fields.iter().any(|v| !v.is_finite()) || b.w <= R::zero() || b.h <= R::zero() {
                return Err(Error::InvalidBox {
                    x: b.cx.to64(),
                    y: b.cy.to64(),
                    w: b.w.to64(),
                    h: b.h.to64(),
                    reason: "center box must be finite with positive extent",
                });
            }
        }
        Ok(Self { logits, boxes, layer_index })
    }

    pub fn num_queries(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.ncols()
    }

    fn shape(&self) -> (usize, usize) {
        (self.num_queries(), self.num_classes())
    }
}

/// Response-distillation coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrdConfig<R = f64> {
    pub temperature: R,
    pub bbox_l1_weight: R,
    pub bbox_giou_weight: R,
    /// Multiply the alignment term by `temperature^2` (classic distillation
    /// gradient rescaling). Off by default: with the default temperature of 1
    /// the factor is inert, and the reference training setup omits it.
    pub tau_squared: bool,
}

impl<R: Real> Default for CrdConfig<R> {
    fn default() -> Self {
        Self {
            temperature: R::one(),
            bbox_l1_weight: R::of(5.0),
            bbox_giou_weight: R::of(2.0),
            tau_squared: false,
        }
    }
}

impl<R: Real> CrdConfig<R> {
    fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= R::zero() {
            return Err(Error::InvalidTemperature { value: self.temperature.to64() });
        }
        Ok(())
    }
}

fn check_pair<R: Real>(teacher: &LayerResponses<R>, student: &LayerResponses<R>) -> Result<()> {
    if teacher.shape() != student.shape() {
        return Err(Error::ResponseShapeMismatch {
            layer: student.layer_index,
            teacher: teacher.shape(),
            student: student.shape(),
        });
    }
    Ok(())
}

fn check_old_classes(old_classes: &BTreeSet<u32>, num_classes: usize) -> Result<()> {
    if old_classes.is_empty() {
        return Err(Error::EmptyOldClasses);
    }
    for &c in old_classes {
        if c as usize >= num_classes {
            return Err(Error::UnknownClass { class_id: c });
        }
    }
    Ok(())
}

/// Row-wise temperature-scaled softmax and log-softmax.
fn softmax_rows<R: Real>(logits: &Array2<R>, temperature: R) -> (Array2<R>, Array2<R>) {
    let (n, c) = logits.dim();
    let mut probs = Array2::zeros((n, c));
    let mut log_probs = Array2::zeros((n, c));
    for q in 0..n {
        let row = logits.row(q);
        let max = row.iter().fold(R::neg_infinity(), |m, &z| m.max(z / temperature));
        let mut sum = R::zero();
        for &z in row.iter() {
            sum += (z / temperature - max).exp();
        }
        let log_sum = sum.ln();
        for (j, &z) in row.iter().enumerate() {
            let shifted = z / temperature - max;
            log_probs[[q, j]] = shifted - log_sum;
            probs[[q, j]] = (shifted - log_sum).exp();
        }
    }
    (probs, log_probs)
}

/// Teacher confidence per query: the maximum temperature-scaled softmax
/// probability over the old classes. Always in `[0, 1]`.
pub fn confidence_weights<R: Real>(
    teacher: &LayerResponses<R>,
    old_classes: &BTreeSet<u32>,
    temperature: R,
) -> Result<Array1<R>> {
    check_old_classes(old_classes, teacher.num_classes())?;
    if !temperature.is_finite() || temperature <= R::zero() {
        return Err(Error::InvalidTemperature { value: temperature.to64() });
    }
    let (probs, _) = softmax_rows(&teacher.logits, temperature);
    let mut weights = Array1::zeros(teacher.num_queries());
    for q in 0..teacher.num_queries() {
        let mut best = R::zero();
        for &c in old_classes {
            best = best.max(probs[[q, c as usize]]);
        }
        weights[q] = best;
    }
    Ok(weights)
}

/// Alignment loss of one layer with its gradient.
#[derive(Debug, Clone)]
pub struct CrdAlignOutput<R = f64> {
    pub loss: R,
    /// `N x C` gradient with respect to the student logits.
    pub logits_grad: Array2<R>,
    /// The confidence weights used, for reuse by the regression term.
    pub weights: Array1<R>,
}

/// Confidence-weighted KL divergence from the teacher's temperature-scaled
/// class distribution to the student's, summed over queries.
///
/// The KL runs over the full class simplex (old and new classes together);
/// only the per-query weight is restricted to the old classes.
pub fn crd_align<R: Real>(
    teacher: &LayerResponses<R>,
    student: &LayerResponses<R>,
    old_classes: &BTreeSet<u32>,
    cfg: &CrdConfig<R>,
) -> Result<CrdAlignOutput<R>> {
    cfg.validate()?;
    check_pair(teacher, student)?;
    let weights = confidence_weights(teacher, old_classes, cfg.temperature)?;

    let tau = cfg.temperature;
    let scale = if cfg.tau_squared { tau * tau } else { R::one() };
    let (t_probs, t_log) = softmax_rows(&teacher.logits, tau);
    let (s_probs, s_log) = softmax_rows(&student.logits, tau);

    let (n, c) = teacher.logits.dim();
    let mut loss = R::zero();
    let mut grad = Array2::zeros((n, c));
    for q in 0..n {
        let w = weights[q];
        let mut kl = R::zero();
        for j in 0..c {
            kl += t_probs[[q, j]] * (t_log[[q, j]] - s_log[[q, j]]);
            grad[[q, j]] = scale * w * (s_probs[[q, j]] - t_probs[[q, j]]) / tau;
        }
        loss += w * kl;
    }
    Ok(CrdAlignOutput { loss: scale * loss, logits_grad: grad, weights })
}

/// Regression loss of one layer with its gradient.
#[derive(Debug, Clone)]
pub struct CrdRegOutput<R = f64> {
    pub loss: R,
    /// `N x 4` gradient with respect to the student center boxes.
    pub boxes_grad: Array2<R>,
}

/// Confidence-weighted box regression against the teacher's boxes:
/// `w_l1 * L1 + w_giou * (1 - GIoU)` per query, over all queries.
pub fn crd_reg<R: Real>(
    teacher: &LayerResponses<R>,
    student: &LayerResponses<R>,
    weights: &Array1<R>,
    cfg: &CrdConfig<R>,
) -> Result<CrdRegOutput<R>> {
    check_pair(teacher, student)?;
    let n = teacher.num_queries();
    if weights.len() != n {
        return Err(Error::BatchMisaligned { features: n, detections: weights.len() });
    }
    let mut loss = R::zero();
    let mut grad = Array2::zeros((n, 4));
    for q in 0..n {
        let (value, g) = box_loss_with_grad(
            &student.boxes[q],
            &teacher.boxes[q],
            cfg.bbox_l1_weight,
            cfg.bbox_giou_weight,
        );
        loss += weights[q] * value;
        for k in 0..4 {
            grad[[q, k]] = weights[q] * g[k];
        }
    }
    Ok(CrdRegOutput { loss, boxes_grad: grad })
}

/// Gradients of one decoder layer.
#[derive(Debug, Clone)]
pub struct CrdLayerGrads<R = f64> {
    pub layer_index: usize,
    pub logits_grad: Array2<R>,
    pub boxes_grad: Array2<R>,
}

/// Full response-distillation result across decoder layers.
#[derive(Debug, Clone)]
pub struct CrdOutput<R = f64> {
    pub loss: R,
    pub align: R,
    pub reg: R,
    pub layers: Vec<CrdLayerGrads<R>>,
}

/// Sums alignment and regression distillation over all decoder layers.
/// Teacher and student must expose the same number of layers with matching
/// shapes.
pub fn crd_total<R: Real>(
    teacher_layers: &[LayerResponses<R>],
    student_layers: &[LayerResponses<R>],
    old_classes: &BTreeSet<u32>,
    cfg: &CrdConfig<R>,
) -> Result<CrdOutput<R>> {
    if teacher_layers.len() != student_layers.len() {
        return Err(Error::LayerMismatch {
            teacher: teacher_layers.len(),
            student: student_layers.len(),
        });
    }
    let mut out = CrdOutput { loss: R::zero(), align: R::zero(), reg: R::zero(), layers: Vec::new() };
    for (teacher, student) in teacher_layers.iter().zip(student_layers) {
        let align = crd_align(teacher, student, old_classes, cfg)?;
        let reg = crd_reg(teacher, student, &align.weights, cfg)?;
        out.align += align.loss;
        out.reg += reg.loss;
        out.layers.push(CrdLayerGrads {
            layer_index: student.layer_index,
            logits_grad: align.logits_grad,
            boxes_grad: reg.boxes_grad,
        });
    }
    out.loss = out.align + out.reg;
    Ok(out)
}
