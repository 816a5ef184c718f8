//! Oriented-rectangle overlap by the separating-axis test.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.heading.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let along = (c * hl, s * hl);
        let across = (-s * hw, c * hw);
        [
            (self.cx + along.0 + across.0, self.cy + along.1 + across.1),
            (self.cx + along.0 - across.0, self.cy + along.1 - across.1),
            (self.cx - along.0 - across.0, self.cy - along.1 - across.1),
            (self.cx - along.0 + across.0, self.cy - along.1 + across.1),
        ]
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.heading.sin_cos();
        [(c, s), (-s, c)]
    }

    fn bounding_radius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

fn project(corners: &[(f64, f64); 4], axis: (f64, f64)) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in corners {
        let p = x * axis.0 + y * axis.1;
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo, hi)
}

/// True when the two rectangles share interior area. Touching edges do not count.
pub fn rects_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let reach = a.bounding_radius() + b.bounding_radius();
    if dx * dx + dy * dy >= reach * reach {
        return false;
    }
    let ca = a.corners();
    let cb = b.corners();
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (a_lo, a_hi) = project(&ca, axis);
        let (b_lo, b_hi) = project(&cb, axis);
        if a_hi <= b_lo || b_hi <= a_lo {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(cx: f64, cy: f64, heading: f64) -> OrientedRect {
        OrientedRect {
            cx,
            cy,
            heading,
            length: 5.0,
            width: 2.0,
        }
    }

    #[test]
    fn aligned_cases() {
        assert!(rects_overlap(&rect(0.0, 0.0, 0.0), &rect(4.9, 0.0, 0.0)));
        assert!(!rects_overlap(&rect(0.0, 0.0, 0.0), &rect(5.1, 0.0, 0.0)));
        assert!(!rects_overlap(&rect(0.0, 0.0, 0.0), &rect(0.0, 2.1, 0.0)));
        assert!(rects_overlap(&rect(0.0, 0.0, 0.0), &rect(0.0, 1.9, 0.0)));
    }

    #[test]
    fn rotated_corner_miss() {
        // A rectangle rotated 45° whose bounding circle intersects but whose body does not.
        let a = rect(0.0, 0.0, 0.0);
        let b = rect(4.2, 2.9, std::f64::consts::FRAC_PI_4);
        assert!(!rects_overlap(&a, &b));
        let c = rect(3.5, 1.5, std::f64::consts::FRAC_PI_4);
        assert!(rects_overlap(&a, &c));
    }
}
