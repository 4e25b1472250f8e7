//! Hungarian set matching and the DETR-style detection loss.
//!
//! Queries carry sigmoid class logits and normalized center-form boxes.
//! Targets (ground truth plus CPG pseudo-labels) are matched one-to-one to
//! queries by minimizing focal alignment cost plus box regression cost;
//! unmatched queries train against the all-zeros "no object" target.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{giou_center_grad, CenterBox};
use crate::model::Annotation;
use crate::response::LayerResponses;
use crate::scalar::Real;

/// Coefficients of the matching cost and detection loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetLossConfig<R = f64> {
    pub focal_alpha: R,
    pub focal_gamma: R,
    /// Weight of the L1 box term (shared with the response-distillation
    /// regression loss, which uses the same formulation).
    pub bbox_l1_weight: R,
    /// Weight of the `1 - GIoU` box term.
    pub bbox_giou_weight: R,
    /// Loss multiplier for targets generated by the pseudo-labeler.
    pub pseudo_weight: R,
}

impl<R: Real> Default for SetLossConfig<R> {
    fn default() -> Self {
        Self {
            focal_alpha: R::of(0.25),
            focal_gamma: R::of(2.0),
            bbox_l1_weight: R::of(5.0),
            bbox_giou_weight: R::of(2.0),
            pseudo_weight: R::one(),
        }
    }
}

/// Outcome of Hungarian matching: per-query target index (or none for the
/// padded "no object" symbol) plus the total assignment cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult<R = f64> {
    pub assignment: Vec<Option<usize>>,
    pub total_cost: R,
}

impl<R: Real> MatchResult<R> {
    /// `(query_index, target_index)` pairs in ascending query order.
    pub fn matched_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment.iter().enumerate().filter_map(|(q, t)| t.map(|t| (q, t)))
    }
}

/// Loss components of one training step. `total` is always computed as
/// `detr + lambda1 * std + crd`, so the decomposition identity holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown<R = f64> {
    pub detr: R,
    pub detr_align: R,
    pub detr_reg: R,
    pub std: R,
    pub crd: R,
    pub crd_align: R,
    pub crd_reg: R,
    pub total: R,
}

/// Combines the three objectives: `detr + lambda1 * std + crd`.
pub fn total_loss<R: Real>(detr: R, std: R, crd: R, lambda1: R) -> LossBreakdown<R> {
    LossBreakdown {
        detr,
        std,
        crd,
        total: detr + lambda1 * std + crd,
        ..LossBreakdown::default()
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<R: Real>(x: R) -> R {
    if x > R::zero() {
        x + x.neg().exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-logit pieces of the sigmoid focal loss: probability and the two
/// stable log terms.
#[derive(Clone, Copy)]
struct FocalParts<R> {
    p: R,
    log_p: R,
    log_1mp: R,
}

impl<R: Real> FocalParts<R> {
    fn of(logit: R) -> Self {
        let p = R::one() / (R::one() + (-logit).exp());
        Self { p, log_p: -softplus(-logit), log_1mp: -softplus(logit) }
    }

    /// `-alpha * (1-p)^gamma * ln p`: loss of a positive (target = 1) logit.
    fn pos_loss(&self, alpha: R, gamma: R) -> R {
        -alpha * (R::one() - self.p).powf(gamma) * self.log_p
    }

    /// `-(1-alpha) * p^gamma * ln(1-p)`: loss of a negative (target = 0) logit.
    fn neg_loss(&self, alpha: R, gamma: R) -> R {
        -(R::one() - alpha) * self.p.powf(gamma) * self.log_1mp
    }

    /// d(pos_loss)/d(logit).
    fn pos_grad(&self, alpha: R, gamma: R) -> R {
        let q = R::one() - self.p;
        alpha * q.powf(gamma) * (gamma * self.p * self.log_p - q)
    }

    /// d(neg_loss)/d(logit).
    fn neg_grad(&self, alpha: R, gamma: R) -> R {
        (R::one() - alpha) * self.p.powf(gamma) * (self.p - gamma * (R::one() - self.p) * self.log_1mp)
    }
}

/// L1 plus weighted `1 - GIoU` between two center-form boxes, with the
/// gradient with respect to `pred`.
fn box_loss_grad<R: Real>(
    pred: &CenterBox<R>,
    target: &CenterBox<R>,
    cfg: &SetLossConfig<R>,
) -> (R, [R; 4]) {
    let diffs = [pred.cx - target.cx, pred.cy - target.cy, pred.w - target.w, pred.h - target.h];
    let l1: R = diffs.iter().map(|d| d.abs()).sum();
    let (giou, giou_grad) = giou_center_grad(pred, target);
    let loss = cfg.bbox_l1_weight * l1 + cfg.bbox_giou_weight * (R::one() - giou);
    // A converged box sits on the L1 kink; rounding noise on the order of an
    // ulp must not re-excite it, so displacements below this floor take the
    // zero element of the subdifferential.
    let kink = R::of(1e-9);
    if diffs.iter().all(|d| d.abs() <= kink) {
        return (loss, [R::zero(); 4]);
    }
    let mut grad = [R::zero(); 4];
    for k in 0..4 {
        let sign = if diffs[k] > R::zero() {
            R::one()
        } else if diffs[k] < R::zero() {
            -R::one()
        } else {
            R::zero()
        };
        grad[k] = cfg.bbox_l1_weight * sign - cfg.bbox_giou_weight * giou_grad[k];
    }
    (loss, grad)
}

pub(crate) fn box_loss_with_grad<R: Real>(
    pred: &CenterBox<R>,
    target: &CenterBox<R>,
    l1_weight: R,
    giou_weight: R,
) -> (R, [R; 4]) {
    let cfg = SetLossConfig {
        bbox_l1_weight: l1_weight,
        bbox_giou_weight: giou_weight,
        ..SetLossConfig::default()
    };
    box_loss_grad(pred, target, &cfg)
}

/// Target in matching form: class plus normalized center box.
#[derive(Debug, Clone, Copy)]
struct EncodedTarget<R> {
    class_id: u32,
    cbox: CenterBox<R>,
    is_pseudo: bool,
}

fn encode_targets<R: Real>(
    targets: &[Annotation<R>],
    image_width: R,
    image_height: R,
    num_classes: usize,
) -> Result<Vec<EncodedTarget<R>>> {
    targets
        .iter()
        .map(|a| {
            if (a.class_id as usize) >= num_classes {
                return Err(Error::UnknownClass { class_id: a.class_id });
            }
            Ok(EncodedTarget {
                class_id: a.class_id,
                cbox: a.bbox.to_center(image_width, image_height),
                is_pseudo: a.is_pseudo,
            })
        })
        .collect()
}

/// Minimum-cost assignment of rows (targets) to columns (queries) for a
/// `T x N` cost matrix with `T <= N`, via shortest augmenting paths with
/// potentials, O(T^2 N).
///
/// Deterministic: columns are scanned in ascending order and only strict
/// improvements are taken, so exact cost ties resolve to the lowest
/// (query, target) indices.
pub fn assign_min_cost<R: Real>(cost: &Array2<R>) -> (Vec<Option<usize>>, R) {
    let t = cost.nrows();
    let n = cost.ncols();
    assert!(t <= n, "assign_min_cost requires rows <= cols");
    let inf = R::infinity();
    let mut u = vec![R::zero(); t + 1];
    let mut v = vec![R::zero(); n + 1];
    let mut matched_row = vec![0usize; n + 1]; // 1-based row matched to column j
    let mut way = vec![0usize; n + 1];

    for i in 1..=t {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; n + 1];
    let mut total = R::zero();
    for j in 1..=n {
        if matched_row[j] != 0 {
            let row = matched_row[j] - 1;
            assignment[j] = Some(row);
            total += cost[[row, j - 1]];
        }
    }
    assignment.remove(0);
    (assignment, total)
}

/// Hungarian matching of queries to targets.
///
/// The matching cost per (query, target) pair is the standard focal
/// classification cost (positive-minus-negative at the target's class) plus
/// the weighted L1 + GIoU box cost. Unmatched queries map to the no-object
/// symbol. Requires at least as many queries as targets.
pub fn match_targets<R: Real>(
    preds: &LayerResponses<R>,
    targets: &[Annotation<R>],
    image_width: R,
    image_height: R,
    cfg: &SetLossConfig<R>,
) -> Result<MatchResult<R>> {
    let n = preds.num_queries();
    let c = preds.num_classes();
    if targets.len() > n {
        return Err(Error::TooManyTargets { targets: targets.len(), queries: n });
    }
    let encoded = encode_targets(targets, image_width, image_height, c)?;
    if encoded.is_empty() {
        return Ok(MatchResult { assignment: vec![None; n], total_cost: R::zero() });
    }

    let mut cost = Array2::zeros((encoded.len(), n));
    for (ti, target) in encoded.iter().enumerate() {
        for q in 0..n {
            let parts = FocalParts::of(preds.logits[[q, target.class_id as usize]]);
            let align = parts.pos_loss(cfg.focal_alpha, cfg.focal_gamma)
                - parts.neg_loss(cfg.focal_alpha, cfg.focal_gamma);
            let (reg, _) = box_loss_grad(&preds.boxes[q], &target.cbox, cfg);
            let entry = align + reg;
            // A NaN cost would make the augmenting-path search cycle.
            if !entry.is_finite() {
                return Err(Error::Config {
                    message: format!(
                        "non-finite matching cost for query {q}, target {ti}; \
                         predictions have diverged"
                    ),
                });
            }
            cost[[ti, q]] = entry;
        }
    }
    let (assignment, total_cost) = assign_min_cost(&cost);
    Ok(MatchResult { assignment, total_cost })
}

/// Detection loss and gradients of one layer's responses.
#[derive(Debug, Clone)]
pub struct DetrLossOutput<R = f64> {
    pub loss: R,
    pub align: R,
    pub reg: R,
    /// `N x C` gradient with respect to the class logits.
    pub logits_grad: Array2<R>,
    /// `N x 4` gradient with respect to the center-form boxes.
    pub boxes_grad: Array2<R>,
}

fn validate_match<R: Real>(
    match_result: &MatchResult<R>,
    num_queries: usize,
    num_targets: usize,
) -> Result<()> {
    let stale = |reason: String| Error::Config { message: format!("stale match result: {reason}") };
    if match_result.assignment.len() != num_queries {
        return Err(stale(format!(
            "{} assignment slots for {num_queries} queries",
            match_result.assignment.len()
        )));
    }
    let mut seen = vec![false; num_targets];
    for t in match_result.assignment.iter().flatten() {
        if *t >= num_targets {
            return Err(stale(format!("target index {t} out of range {num_targets}")));
        }
        if seen[*t] {
            return Err(stale(format!("target {t} matched twice")));
        }
        seen[*t] = true;
    }
    if seen.iter().filter(|&&s| s).count() != num_targets {
        return Err(stale("not every target is matched".into()));
    }
    Ok(())
}

/// DETR-style loss under a fixed assignment.
///
/// Every query contributes focal alignment loss against its one-hot target
/// (all zeros for no-object queries); matched queries additionally contribute
/// the L1 + GIoU regression loss. Terms belonging to pseudo-label targets are
/// scaled by `cfg.pseudo_weight`. Gradients are analytic with respect to both
/// logits and boxes; the assignment is treated as a constant.
pub fn detr_loss<R: Real>(
    preds: &LayerResponses<R>,
    targets: &[Annotation<R>],
    image_width: R,
    image_height: R,
    match_result: &MatchResult<R>,
    cfg: &SetLossConfig<R>,
) -> Result<DetrLossOutput<R>> {
    let n = preds.num_queries();
    let c = preds.num_classes();
    validate_match(match_result, n, targets.len())?;
    let encoded = encode_targets(targets, image_width, image_height, c)?;

    let mut align = R::zero();
    let mut reg = R::zero();
    let mut logits_grad = Array2::zeros((n, c));
    let mut boxes_grad = Array2::zeros((n, 4));

    for q in 0..n {
        let matched = match_result.assignment[q].map(|t| &encoded[t]);
        let weight = match matched {
            Some(t) if t.is_pseudo => cfg.pseudo_weight,
            _ => R::one(),
        };
        let positive_class = matched.map(|t| t.class_id as usize);
        for cls in 0..c {
            let parts = FocalParts::of(preds.logits[[q, cls]]);
            if positive_class == Some(cls) {
                align += weight * parts.pos_loss(cfg.focal_alpha, cfg.focal_gamma);
                logits_grad[[q, cls]] = weight * parts.pos_grad(cfg.focal_alpha, cfg.focal_gamma);
            } else {
                align += weight * parts.neg_loss(cfg.focal_alpha, cfg.focal_gamma);
                logits_grad[[q, cls]] = weight * parts.neg_grad(cfg.focal_alpha, cfg.focal_gamma);
            }
        }
        if let Some(target) = matched {
            let (loss, grad) = box_loss_grad(&preds.boxes[q], &target.cbox, cfg);
            reg += weight * loss;
            for k in 0..4 {
                boxes_grad[[q, k]] = weight * grad[k];
            }
        }
    }

    Ok(DetrLossOutput { loss: align + reg, align, reg, logits_grad, boxes_grad })
}
