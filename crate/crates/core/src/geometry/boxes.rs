use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Rectangle in normalized BEV coordinates.
///
/// `width` runs along the heading direction `(cos theta, sin theta)`, `height`
/// perpendicular to it. Image conventions apply: `x` grows to the right, `y`
/// grows downward, and the ego vehicle faces `-y` (image top).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub theta: f64,
}

impl OrientedBox {
    /// Validating constructor; `theta` is wrapped into `(-pi, pi]`.
    pub fn new(cx: f64, cy: f64, width: f64, height: f64, theta: f64) -> Result<Self> {
        let b = OrientedBox {
            cx,
            cy,
            width,
            height,
            theta: normalize_angle(theta),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::Validation(format!(
                "box center ({}, {}) is not finite",
                self.cx, self.cy
            )));
        }
        if !(self.width > 0.0 && self.height > 0.0)
            || !self.width.is_finite()
            || !self.height.is_finite()
        {
            return Err(Error::Validation(format!(
                "box extents must be positive, got {} x {}",
                self.width, self.height
            )));
        }
        if !(self.theta > -PI && self.theta <= PI) {
            return Err(Error::Validation(format!(
                "box angle {} outside (-pi, pi]",
                self.theta
            )));
        }
        Ok(())
    }

    /// Half-extents of the tight axis-aligned bound.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (s, c) = (s.abs(), c.abs());
        (
            (self.width * c + self.height * s) / 2.0,
            (self.width * s + self.height * c) / 2.0,
        )
    }

    /// Corners in order front-right, front-left, rear-left, rear-right
    /// relative to the heading.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        [(hw, hh), (hw, -hh), (-hw, -hh), (-hw, hh)]
            .map(|(u, v)| (self.cx + u * c - v * s, self.cy + u * s + v * c))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.width / 2.0 && v.abs() <= self.height / 2.0
    }

    pub fn to_aabb(&self) -> Aabb {
        to_aabb(self)
    }

    /// True when the tight bound lies inside the unit square.
    pub fn inside_unit_square(&self) -> bool {
        let a = self.to_aabb();
        a.xmin >= 0.0 && a.ymin >= 0.0 && a.xmax <= 1.0 && a.ymax <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Aabb {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmin <= xmax && ymin <= ymax) {
            return Err(Error::Validation(format!(
                "aabb [{xmin}, {ymin}, {xmax}, {ymax}] has inverted bounds"
            )));
        }
        Ok(Aabb {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn union_bound(&self, other: &Aabb) -> Aabb {
        Aabb {
            xmin: self.xmin.min(other.xmin),
            ymin: self.ymin.min(other.ymin),
            xmax: self.xmax.max(other.xmax),
            ymax: self.ymax.max(other.ymax),
        }
    }
}

/// Tight axis-aligned bound via the closed-form half-extents
/// `ex = (w|cos| + h|sin|)/2`, `ey = (w|sin| + h|cos|)/2`.
pub fn to_aabb(b: &OrientedBox) -> Aabb {
    let (ex, ey) = b.half_extents();
    Aabb {
        xmin: b.cx - ex,
        ymin: b.cy - ey,
        xmax: b.cx + ex,
        ymax: b.cy + ey,
    }
}

/// Intersection over union; 0 for disjoint boxes and for two empty boxes.
pub fn iou_aabb(a: &Aabb, b: &Aabb) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// AABB IoU of two oriented boxes.
pub fn iou_boxes(a: &OrientedBox, b: &OrientedBox) -> f64 {
    iou_aabb(&to_aabb(a), &to_aabb(b))
}

/// Pixel-count IoU of the true rotated rectangles, rasterized on a
/// `resolution x resolution` grid over their joint bound. Test oracle only.
pub fn iou_oriented_oracle(a: &OrientedBox, b: &OrientedBox, resolution: usize) -> f64 {
    let resolution = resolution.max(100);
    let bound = to_aabb(a).union_bound(&to_aabb(b));
    let (w, h) = (bound.xmax - bound.xmin, bound.ymax - bound.ymin);
    let (mut ca, mut cb, mut both) = (0u64, 0u64, 0u64);
    for j in 0..resolution {
        let y = bound.ymin + (j as f64 + 0.5) * h / resolution as f64;
        for i in 0..resolution {
            let x = bound.xmin + (i as f64 + 0.5) * w / resolution as f64;
            let (ia, ib) = (a.contains(x, y), b.contains(x, y));
            ca += ia as u64;
            cb += ib as u64;
            both += (ia && ib) as u64;
        }
    }
    let union = ca + cb - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Aabb, b: [f64; 4], tol: f64) -> bool {
        [a.xmin - b[0], a.ymin - b[1], a.xmax - b[2], a.ymax - b[3]]
            .iter()
            .all(|d| d.abs() <= tol)
    }

    /// Bound of the four corners, the slow way.
    fn corner_bound(b: &OrientedBox) -> Aabb {
        let cs = b.corners();
        let xs = cs.map(|c| c.0);
        let ys = cs.map(|c| c.1);
        Aabb {
            xmin: xs.iter().copied().fold(f64::INFINITY, f64::min),
            ymin: ys.iter().copied().fold(f64::INFINITY, f64::min),
            xmax: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ymax: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    #[test]
    fn axis_aligned_box() {
        let b = OrientedBox::new(0.5, 0.5, 0.2, 0.1, 0.0).unwrap();
        assert!(close(&b.to_aabb(), [0.4, 0.45, 0.6, 0.55], 1e-15));
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let b = OrientedBox::new(0.5, 0.5, 0.2, 0.1, PI / 2.0).unwrap();
        assert!(close(&b.to_aabb(), [0.45, 0.4, 0.55, 0.6], 1e-15));
    }

    #[test]
    fn diagonal_box_matches_corner_enumeration() {
        let b = OrientedBox::new(0.5, 0.5, 0.2, 0.1, PI / 4.0).unwrap();
        let a = b.to_aabb();
        let e = 0.15 / 2f64.sqrt();
        assert!(close(&a, [0.5 - e, 0.5 - e, 0.5 + e, 0.5 + e], 1e-15));
        let c = corner_bound(&b);
        assert!(close(&a, [c.xmin, c.ymin, c.xmax, c.ymax], 1e-15));
    }

    #[test]
    fn iou_examples() {
        let a = Aabb::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = Aabb::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert!((iou_aabb(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou_aabb(&a, &a), 1.0);
        let far = Aabb::new(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(iou_aabb(&a, &far), 0.0);
        let p = Aabb::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(iou_aabb(&p, &p), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(OrientedBox::new(0.5, 0.5, 0.0, 0.1, 0.0).is_err());
        assert!(OrientedBox::new(f64::NAN, 0.5, 0.1, 0.1, 0.0).is_err());
        assert!(Aabb::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert_eq!(OrientedBox::new(0.5, 0.5, 0.1, 0.1, -PI).unwrap().theta, PI);
    }

    #[test]
    fn oracle_identical_boxes() {
        for &t in &[0.0, 0.3, 1.2, -2.0] {
            let b = OrientedBox::new(0.4, 0.6, 0.12, 0.05, t).unwrap();
            assert!((iou_oriented_oracle(&b, &b, 1000) - 1.0).abs() <= 2e-3);
        }
    }

    #[test]
    fn oracle_agrees_on_axis_aligned_pairs() {
        let a = OrientedBox::new(0.5, 0.5, 0.2, 0.1, 0.0).unwrap();
        let b = OrientedBox::new(0.55, 0.52, 0.1, 0.1, PI / 2.0).unwrap();
        let exact = iou_boxes(&a, &b);
        assert!((iou_oriented_oracle(&a, &b, 1000) - exact).abs() <= 2e-3);
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox> {
        (
            0.0..1.0f64,
            0.0..1.0f64,
            0.01..0.3f64,
            0.01..0.3f64,
            -PI..PI,
        )
            .prop_map(|(x, y, w, h, t)| OrientedBox::new(x, y, w, h, t).unwrap())
    }

    proptest! {
        #[test]
        fn aabb_invariant_under_half_turn(b in arb_box()) {
            let flipped = OrientedBox::new(b.cx, b.cy, b.width, b.height, b.theta + PI).unwrap();
            let (a1, a2) = (b.to_aabb(), flipped.to_aabb());
            prop_assert!(close(&a1, [a2.xmin, a2.ymin, a2.xmax, a2.ymax], 1e-12));
        }

        #[test]
        fn closed_form_matches_corners(b in arb_box()) {
            let c = corner_bound(&b);
            prop_assert!(close(&b.to_aabb(), [c.xmin, c.ymin, c.xmax, c.ymax], 1e-12));
        }

        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let (x, y) = (iou_boxes(&a, &b), iou_boxes(&b, &a));
            prop_assert_eq!(x, y);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(iou_boxes(&a, &a), 1.0);
            let (aa, ab) = (a.to_aabb(), b.to_aabb());
            if aa != ab {
                prop_assert!(x < 1.0);
            }
        }
    }
}
