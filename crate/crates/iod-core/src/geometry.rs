//! Axis-aligned boxes and overlap measures.
//!
//! Two box representations are used:
//!
//! * [`BBox`] is the storage form, `(x, y, w, h)` in absolute pixels with the
//!   origin at the top-left corner. This is also the COCO JSON layout.
//! * [`CenterBox`] is the normalized center form `(cx, cy, w, h)` divided by
//!   image size, used only inside the regression losses.
//!
//! Degenerate boxes are rejected at construction; nothing downstream has to
//! guard against zero areas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Absolute pixel box: top-left corner plus extent. `w > 0`, `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<R = f64> {
    pub x: R,
    pub y: R,
    pub w: R,
    pub h: R,
}

impl<R: Real> BBox<R> {
    /// Builds a box, rejecting non-finite values and non-positive extents.
    /// Inputs are never clamped: a degenerate box is an input error.
    pub fn new(x: R, y: R, w: R, h: R) -> Result<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        let reason = if !finite {
            Some("coordinates must be finite")
        } else if w <= R::zero() || h <= R::zero() {
            Some("width and height must be strictly positive")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidBox {
                x: x.to64(),
                y: y.to64(),
                w: w.to64(),
                h: h.to64(),
                reason,
            }),
            None => Ok(Self { x, y, w, h }),
        }
    }

    #[inline]
    pub fn area(&self) -> R {
        self.w * self.h
    }

    #[inline]
    pub fn right(&self) -> R {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> R {
        self.y + self.h
    }

    /// Normalized center form relative to an image of size `(width, height)`.
    pub fn to_center(&self, width: R, height: R) -> CenterBox<R> {
        let two = R::of(2.0);
        CenterBox {
            cx: (self.x + self.w / two) / width,
            cy: (self.y + self.h / two) / height,
            w: self.w / width,
            h: self.h / height,
        }
    }
}

/// Normalized center-form box. Coordinates are fractions of the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterBox<R = f64> {
    pub cx: R,
    pub cy: R,
    pub w: R,
    pub h: R,
}

impl<R: Real> CenterBox<R> {
    /// Back to absolute pixels on an image of size `(width, height)`.
    pub fn to_bbox(&self, width: R, height: R) -> Result<BBox<R>> {
        let two = R::of(2.0);
        BBox::new(
            (self.cx - self.w / two) * width,
            (self.cy - self.h / two) * height,
            self.w * width,
            self.h * height,
        )
    }

    /// `[x1, y1, x2, y2]` corner form.
    #[inline]
    pub fn corners(&self) -> [R; 4] {
        let two = R::of(2.0);
        [
            self.cx - self.w / two,
            self.cy - self.h / two,
            self.cx + self.w / two,
            self.cy + self.h / two,
        ]
    }
}

/// Intersection over union of two boxes. Zero when disjoint.
pub fn iou<R: Real>(a: &BBox<R>, b: &BBox<R>) -> R {
    let ix = a.x.max(b.x);
    let iy = a.y.max(b.y);
    let ix2 = a.right().min(b.right());
    let iy2 = a.bottom().min(b.bottom());
    if ix2 <= ix || iy2 <= iy {
        return R::zero();
    }
    let inter = (ix2 - ix) * (iy2 - iy);
    inter / (a.area() + b.area() - inter)
}

/// Generalized IoU: IoU minus the fraction of the smallest enclosing box not
/// covered by the union. Ranges over `(-1, 1]`; equals IoU when the union
/// fills the enclosing box.
pub fn generalized_iou<R: Real>(a: &BBox<R>, b: &BBox<R>) -> R {
    giou_corners(
        [a.x, a.y, a.right(), a.bottom()],
        [b.x, b.y, b.right(), b.bottom()],
    )
}

fn giou_corners<R: Real>(a: [R; 4], b: [R; 4]) -> R {
    let [ax1, ay1, ax2, ay2] = a;
    let [bx1, by1, bx2, by2] = b;
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(R::zero());
    let ih = (ay2.min(by2) - ay1.max(by1)).max(R::zero());
    let inter = iw * ih;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    let cw = ax2.max(bx2) - ax1.min(bx1);
    let ch = ay2.max(by2) - ay1.min(by1);
    let enclose = cw * ch;
    inter / union - (enclose - union) / enclose
}

/// GIoU of two center-form boxes.
pub fn giou_center<R: Real>(a: &CenterBox<R>, b: &CenterBox<R>) -> R {
    giou_corners(a.corners(), b.corners())
}

/// GIoU of `pred` against a fixed `target`, plus the gradient with respect to
/// `pred`'s `(cx, cy, w, h)`.
///
/// The gradient is exact wherever GIoU is differentiable; at corner ties the
/// left branch of the subgradient is taken.
pub fn giou_center_grad<R: Real>(pred: &CenterBox<R>, target: &CenterBox<R>) -> (R, [R; 4]) {
    let p = pred.corners();
    let t = target.corners();
    let [px1, py1, px2, py2] = p;
    let [tx1, ty1, tx2, ty2] = t;
    let zero = R::zero();

    let iw = px2.min(tx2) - px1.max(tx1);
    let ih = py2.min(ty2) - py1.max(ty1);
    let overlap = iw > zero && ih > zero;
    let inter = if overlap { iw * ih } else { zero };

    let pw = px2 - px1;
    let ph = py2 - py1;
    let area_p = pw * ph;
    let area_t = (tx2 - tx1) * (ty2 - ty1);
    let union = area_p + area_t - inter;

    let cw = px2.max(tx2) - px1.min(tx1);
    let ch = py2.max(ty2) - py1.min(ty1);
    let enclose = cw * ch;

    let giou = inter / union - (enclose - union) / enclose;

    // Partials with respect to pred corners (x1, y1, x2, y2).
    let mut d_inter = [zero; 4];
    if overlap {
        if px1 > tx1 {
            d_inter[0] = -ih;
        }
        if px2 < tx2 {
            d_inter[2] = ih;
        }
        if py1 > ty1 {
            d_inter[1] = -iw;
        }
        if py2 < ty2 {
            d_inter[3] = iw;
        }
    }
    let d_area = [-ph, -pw, ph, pw];
    let mut d_enclose = [zero; 4];
    if px1 < tx1 {
        d_enclose[0] = -ch;
    }
    if px2 > tx2 {
        d_enclose[2] = ch;
    }
    if py1 < ty1 {
        d_enclose[1] = -cw;
    }
    if py2 > ty2 {
        d_enclose[3] = cw;
    }

    let mut d_corners = [zero; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        // d(I/U) + d(U/C - 1)
        d_corners[k] = (d_inter[k] * union - inter * d_union) / (union * union)
            + (d_union * enclose - union * d_enclose[k]) / (enclose * enclose);
    }

    // Chain corners -> (cx, cy, w, h).
    let half = R::of(0.5);
    let grad = [
        d_corners[0] + d_corners[2],
        d_corners[1] + d_corners[3],
        half * (d_corners[2] - d_corners[0]),
        half * (d_corners[3] - d_corners[1]),
    ];
    (giou, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox<f64> {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn area_of_scale_threshold_boxes() {
        assert_eq!(bb(0.0, 0.0, 32.0, 32.0).area(), 1024.0);
        assert_eq!(bb(5.0, 7.0, 1.0, 1.0).area(), 1.0);
        assert_eq!(bb(0.0, 0.0, 96.0, 96.0).area(), 9216.0);
    }

    #[test]
    fn degenerate_boxes_are_rejected_not_clamped() {
        assert!(matches!(
            BBox::new(0.0, 0.0, 0.0, 5.0),
            Err(Error::InvalidBox { .. })
        ));
        assert!(BBox::new(0.0, 0.0, -1.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, 5.0, f64::NAN).is_err());
        assert!(BBox::new(f64::INFINITY, 0.0, 5.0, 5.0).is_err());
    }

    #[test]
    fn iou_identical_boxes() {
        let a = bb(3.0, 4.0, 10.0, 12.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_boxes() {
        assert_eq!(iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(20.0, 0.0, 10.0, 10.0)), 0.0);
        // Touching edges count as disjoint: zero intersection area.
        assert_eq!(iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn iou_half_offset_overlap() {
        // Intersection 5x10 = 50, union 100 + 100 - 50 = 150.
        let v = iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(5.0, 0.0, 10.0, 10.0));
        assert!((v - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn giou_identical_boxes() {
        let a = bb(1.0, 2.0, 8.0, 4.0);
        assert_eq!(generalized_iou(&a, &a), 1.0);
    }

    #[test]
    fn giou_touching_boxes_fill_their_enclosure() {
        // Union 200 fills the 20x10 enclosing box exactly; IoU is 0.
        let v = generalized_iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(10.0, 0.0, 10.0, 10.0));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn giou_separated_boxes_go_negative() {
        // IoU 0, enclosing 30x10 = 300, union 200: giou = -(300-200)/300.
        let v = generalized_iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(20.0, 0.0, 10.0, 10.0));
        assert!((v - (-1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn giou_never_exceeds_iou() {
        let boxes = [
            bb(0.0, 0.0, 10.0, 10.0),
            bb(5.0, 3.0, 4.0, 9.0),
            bb(100.0, 50.0, 30.0, 2.0),
            bb(7.5, 7.5, 1.0, 1.0),
        ];
        for a in &boxes {
            for b in &boxes {
                let g = generalized_iou(a, b);
                assert!(g <= iou(a, b) + 1e-12);
                assert!((-1.0..=1.0).contains(&g));
            }
        }
    }

    #[test]
    fn center_form_round_trip() {
        let b = bb(10.0, 20.0, 30.0, 40.0);
        let c = b.to_center(100.0, 200.0);
        assert_eq!(c, CenterBox { cx: 0.25, cy: 0.2, w: 0.3, h: 0.2 });
        let back = c.to_bbox(100.0, 200.0).unwrap();
        assert!((back.x - b.x).abs() < 1e-12);
        assert!((back.h - b.h).abs() < 1e-12);
    }

    #[test]
    fn giou_center_matches_absolute_form() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(5.0, 0.0, 10.0, 10.0);
        let (g, _) = giou_center_grad(&a.to_center(64.0, 64.0), &b.to_center(64.0, 64.0));
        assert!((g - generalized_iou(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn giou_gradient_matches_central_differences() {
        let target = CenterBox { cx: 0.45, cy: 0.52, w: 0.31, h: 0.27 };
        let pred = CenterBox { cx: 0.61, cy: 0.40, w: 0.22, h: 0.35 };
        let (_, grad) = giou_center_grad(&pred, &target);
        let h = 1e-6;
        let fields: [fn(&mut CenterBox<f64>) -> &mut f64; 4] =
            [|b| &mut b.cx, |b| &mut b.cy, |b| &mut b.w, |b| &mut b.h];
        for (k, field) in fields.iter().enumerate() {
            let mut hi = pred;
            *field(&mut hi) += h;
            let mut lo = pred;
            *field(&mut lo) -= h;
            let num = (giou_center(&hi, &target) - giou_center(&lo, &target)) / (2.0 * h);
            assert!(
                (num - grad[k]).abs() < 1e-6,
                "component {k}: numeric {num} vs analytic {}",
                grad[k]
            );
        }
    }
}
