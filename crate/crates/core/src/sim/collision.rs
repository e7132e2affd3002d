//! Separating-axis overlap test for oriented rectangles.

use super::geometry::Vec2;

/// A rectangle centered at `center`, with `length` along `heading`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn corners(&self) -> [Vec2; 4] {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let f = [c * hl, s * hl];
        let l = [-s * hw, c * hw];
        let [x, y] = self.center;
        [
            [x + f[0] + l[0], y + f[1] + l[1]],
            [x + f[0] - l[0], y + f[1] - l[1]],
            [x - f[0] - l[0], y - f[1] - l[1]],
            [x - f[0] + l[0], y - f[1] + l[1]],
        ]
    }

    fn axes(&self) -> [Vec2; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// True when the interiors or boundaries touch.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let (a, b) = (self.corners(), other.corners());
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (amin, amax) = project(&a, axis);
            let (bmin, bmax) = project(&b, axis);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }

    /// Whether `p` lies inside (boundary inclusive).
    pub fn contains(&self, p: Vec2) -> bool {
        let (s, c) = self.heading.sin_cos();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let along = d[0] * c + d[1] * s;
        let across = -d[0] * s + d[1] * c;
        along.abs() <= self.length / 2.0 && across.abs() <= self.width / 2.0
    }
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners
        .iter()
        .map(|p| p[0] * axis[0] + p[1] * axis[1])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}
