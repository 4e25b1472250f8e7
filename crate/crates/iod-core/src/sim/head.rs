//! Linear detection head over world features.
//!
//! Classification runs through a trainable feature adapter:
//! `adapted = features . adapterᵀ`, `logits = adapted . cls_wᵀ + cls_b`.
//! The box branch reads the world features directly,
//! `boxes = sigmoid(features . box_wᵀ + box_b)` in normalized center form,
//! so localization and recognition degrade independently. Feature-topology
//! distillation acts on `adapted`, giving it a gradient path that shapes the
//! same features classification consumes.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::geometry::CenterBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentHead {
    pub adapter: Array2<f64>,
    pub cls_w: Array2<f64>,
    pub cls_b: Array1<f64>,
    pub box_w: Array2<f64>,
    pub box_b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub adapted: Array2<f64>,
    pub logits: Array2<f64>,
    pub box_logits: Array2<f64>,
    pub boxes: Vec<CenterBox<f64>>,
}

impl StudentHead {
    /// Identity adapter, silent classifier (bias -2), and a box branch that
    /// starts as a selector of the last four feature dimensions.
    pub fn new(feature_dim: usize, num_classes: usize) -> Self {
        let mut box_w = Array2::zeros((4, feature_dim));
        for k in 0..4 {
            box_w[[k, feature_dim - 4 + k]] = 1.0;
        }
        Self {
            adapter: Array2::eye(feature_dim),
            cls_w: Array2::zeros((num_classes, feature_dim)),
            cls_b: Array1::from_elem(num_classes, -2.0),
            box_w,
            box_b: Array1::zeros(4),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.adapter.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.cls_w.nrows()
    }

    pub fn forward(&self, features: &Array2<f64>) -> HeadOutput {
        let adapted = features.dot(&self.adapter.t());
        let logits = adapted.dot(&self.cls_w.t()) + &self.cls_b;
        let box_logits = features.dot(&self.box_w.t()) + &self.box_b;
        // Saturated logits must still decode to a valid (positive-extent)
        // box, so the sigmoid is kept off the exact 0/1 rails.
        let squash = |z: f64| sigmoid(z).clamp(1e-9, 1.0 - 1e-9);
        let boxes = box_logits
            .rows()
            .into_iter()
            .map(|r| CenterBox { cx: squash(r[0]), cy: squash(r[1]), w: squash(r[2]), h: squash(r[3]) })
            .collect();
        HeadOutput { adapted, logits, box_logits, boxes }
    }

    /// Chains loss gradients w.r.t. logits, decoded boxes, and (optionally)
    /// the adapted features back to every parameter.
    pub fn backward(
        &self,
        features: &Array2<f64>,
        out: &HeadOutput,
        logits_grad: &Array2<f64>,
        boxes_grad: &Array2<f64>,
        adapted_grad_extra: Option<&Array2<f64>>,
    ) -> HeadGrads {
        // boxes = sigmoid(box_logits), so d/dlogit = g * b * (1 - b).
        let mut box_logits_grad = boxes_grad.clone();
        for (mut row, cbox) in box_logits_grad.rows_mut().into_iter().zip(&out.boxes) {
            let b = [cbox.cx, cbox.cy, cbox.w, cbox.h];
            for k in 0..4 {
                row[k] *= b[k] * (1.0 - b[k]);
            }
        }

        let cls_w = logits_grad.t().dot(&out.adapted);
        let cls_b = logits_grad.sum_axis(Axis(0));
        let box_w = box_logits_grad.t().dot(features);
        let box_b = box_logits_grad.sum_axis(Axis(0));

        let mut adapted_grad = logits_grad.dot(&self.cls_w);
        if let Some(extra) = adapted_grad_extra {
            adapted_grad += extra;
        }
        let adapter = adapted_grad.t().dot(features);

        HeadGrads { adapter, cls_w, cls_b, box_w, box_b }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub adapter: Array2<f64>,
    pub cls_w: Array2<f64>,
    pub cls_b: Array1<f64>,
    pub box_w: Array2<f64>,
    pub box_b: Array1<f64>,
}

impl HeadGrads {
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            adapter: Array2::zeros((feature_dim, feature_dim)),
            cls_w: Array2::zeros((num_classes, feature_dim)),
            cls_b: Array1::zeros(num_classes),
            box_w: Array2::zeros((4, feature_dim)),
            box_b: Array1::zeros(4),
        }
    }
}

/// Plain SGD with optional momentum. Velocity persists across images and
/// stages of one mode run.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: HeadGrads,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, feature_dim: usize, num_classes: usize) -> Self {
        Self { learning_rate, momentum, velocity: HeadGrads::zeros(feature_dim, num_classes) }
    }

    pub fn step(&mut self, head: &mut StudentHead, grads: &HeadGrads) {
        let lr = self.learning_rate;
        let m = self.momentum;
        let v = &mut self.velocity;
        v.adapter = &v.adapter * m + &grads.adapter;
        v.cls_w = &v.cls_w * m + &grads.cls_w;
        v.cls_b = &v.cls_b * m + &grads.cls_b;
        v.box_w = &v.box_w * m + &grads.box_w;
        v.box_b = &v.box_b * m + &grads.box_b;
        head.adapter.scaled_add(-lr, &v.adapter);
        head.cls_w.scaled_add(-lr, &v.cls_w);
        head.cls_b.scaled_add(-lr, &v.cls_b);
        head.box_w.scaled_add(-lr, &v.box_w);
        head.box_b.scaled_add(-lr, &v.box_b);
    }
}
