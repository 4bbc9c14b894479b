//! Minimal 2D geometry: vectors, oriented rectangles, and convex overlap
//! queries used by the collision detector.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Unit vector at `angle` radians from the +x axis.
    pub fn from_angle(angle: f64) -> Vec2 {
        Vec2::new(angle.cos(), angle.sin())
    }

    /// Rotate by `angle` radians (counterclockwise).
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2*pi for inputs just below -pi due to
    // rounding, which would leave w == pi; fold that back.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Oriented rectangle: center, unit long axis, and half extents.
#[derive(Clone, Copy, Debug)]
pub struct Obb {
    pub center: Vec2,
    pub axis: Vec2,
    pub half_len: f64,
    pub half_wid: f64,
}

impl Obb {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Obb {
            center,
            axis: Vec2::from_angle(heading),
            half_len: length / 2.0,
            half_wid: width / 2.0,
        }
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let u = self.axis * self.half_len;
        let v = self.axis.perp() * self.half_wid;
        [
            self.center + u + v,
            self.center + u - v,
            self.center - u - v,
            self.center - u + v,
        ]
    }

    /// Half extent of this rectangle projected onto a unit direction.
    fn projected_radius(&self, dir: Vec2) -> f64 {
        self.half_len * self.axis.dot(dir).abs() + self.half_wid * self.axis.perp().dot(dir).abs()
    }

    /// Signed separation over the four face normals: positive means the
    /// rectangles overlap along every candidate axis (hence intersect),
    /// negative means some axis separates them. Magnitude is the smallest
    /// overlap / largest gap, so |margin| is a translation distance to the
    /// contact boundary.
    pub fn overlap_margin(&self, other: &Obb) -> f64 {
        let d = other.center - self.center;
        let axes = [self.axis, self.axis.perp(), other.axis, other.axis.perp()];
        let mut margin = f64::INFINITY;
        for ax in axes {
            let overlap = self.projected_radius(ax) + other.projected_radius(ax) - d.dot(ax).abs();
            margin = margin.min(overlap);
        }
        margin
    }

    pub fn overlaps(&self, other: &Obb) -> bool {
        self.overlap_margin(other) > 0.0
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.center;
        d.dot(self.axis).abs() <= self.half_len && d.dot(self.axis.perp()).abs() <= self.half_wid
    }
}

/// Intersection polygon of two oriented rectangles (Sutherland-Hodgman:
/// clip `b`'s corners against `a`'s four half-planes). Empty when disjoint.
pub fn intersection_polygon(a: &Obb, b: &Obb) -> Vec<Vec2> {
    let mut poly: Vec<Vec2> = b.corners().to_vec();
    // Half-plane: points p with (p - center) . n <= extent.
    let planes = [
        (a.axis, a.half_len),
        (-a.axis, a.half_len),
        (a.axis.perp(), a.half_wid),
        (-a.axis.perp(), a.half_wid),
    ];
    for (n, ext) in planes {
        if poly.is_empty() {
            break;
        }
        let mut out = Vec::with_capacity(poly.len() + 1);
        for i in 0..poly.len() {
            let cur = poly[i];
            let nxt = poly[(i + 1) % poly.len()];
            let dc = (cur - a.center).dot(n) - ext;
            let dn = (nxt - a.center).dot(n) - ext;
            if dc <= 0.0 {
                out.push(cur);
            }
            if (dc < 0.0) != (dn < 0.0) && dc != dn {
                let t = dc / (dc - dn);
                out.push(cur + (nxt - cur) * t);
            }
        }
        poly = out;
    }
    poly
}

/// Area centroid of a convex polygon; falls back to the vertex mean when the
/// polygon is degenerate (touching contact with near-zero area).
pub fn polygon_centroid(poly: &[Vec2]) -> Vec2 {
    if poly.is_empty() {
        return Vec2::ZERO;
    }
    let mut area2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let cross = p.x * q.y - q.x * p.y;
        area2 += cross;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    if area2.abs() < 1e-12 {
        let n = poly.len() as f64;
        let sum = poly.iter().fold(Vec2::ZERO, |acc, p| acc + *p);
        return sum * (1.0 / n);
    }
    Vec2::new(cx / (3.0 * area2), cy / (3.0 * area2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_basics() {
        assert!((wrap_angle(0.0) - 0.0).abs() < 1e-12);
        assert!((wrap_angle(2.0 * PI) - 0.0).abs() < 1e-12);
        assert!((wrap_angle(PI) - (-PI)).abs() < 1e-12);
        assert!((wrap_angle(-PI) - (-PI)).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) - (-PI / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_overlap() {
        let a = Obb::new(Vec2::ZERO, 0.0, 4.0, 2.0);
        let b = Obb::new(Vec2::new(3.0, 0.0), 0.0, 4.0, 2.0);
        assert!(a.overlaps(&b));
        assert!((a.overlap_margin(&b) - 1.0).abs() < 1e-12);
        let c = Obb::new(Vec2::new(5.0, 0.0), 0.0, 4.0, 2.0);
        assert!(!a.overlaps(&c));
        assert!((a.overlap_margin(&c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_overlap() {
        // Diamond (45 deg) whose corner pokes into the box on the right.
        let a = Obb::new(Vec2::ZERO, 0.0, 4.0, 2.0);
        let b = Obb::new(Vec2::new(3.0, 0.0), PI / 4.0, 2.0, 2.0);
        assert!(a.overlaps(&b));
        // Same diamond pulled away.
        let c = Obb::new(Vec2::new(4.0, 0.0), PI / 4.0, 2.0, 2.0);
        assert!(!a.overlaps(&c));
    }

    #[test]
    fn clip_centroid_of_known_square() {
        let a = Obb::new(Vec2::ZERO, 0.0, 4.0, 4.0);
        let b = Obb::new(Vec2::new(2.0, 2.0), 0.0, 4.0, 4.0);
        // Overlap is the unit-area-ish square [0,2]x[0,2]; centroid (1,1).
        let poly = intersection_polygon(&a, &b);
        let c = polygon_centroid(&poly);
        assert!((c.x - 1.0).abs() < 1e-9 && (c.y - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn wrap_angle_in_range(a in -1.0e6f64..1.0e6) {
            let w = wrap_angle(a);
            prop_assert!((-PI..PI).contains(&w));
        }

        #[test]
        fn overlap_is_symmetric(
            x in -10.0f64..10.0, y in -10.0f64..10.0,
            ha in -PI..PI, hb in -PI..PI,
        ) {
            let a = Obb::new(Vec2::ZERO, ha, 4.5, 1.8);
            let b = Obb::new(Vec2::new(x, y), hb, 4.5, 1.8);
            prop_assert_eq!(a.overlaps(&b), b.overlaps(&a));
        }
    }
}
