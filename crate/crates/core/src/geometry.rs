//! Planar primitives and the circle/rectangle coverage relation.
//!
//! All comparisons are exact double-precision comparisons on squared
//! distances. Subtraction and multiplication are monotone under IEEE
//! rounding, so a rectangle classified [`Coverage::Full`] never holds a point
//! for which [`Circle::contains`] is false, and a [`Coverage::Disjoint`]
//! rectangle never holds one for which it is true.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Squared Euclidean distance.
    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Axis-aligned rectangle, half-open for point membership:
/// `x_lo <= x < x_hi` and `y_lo <= y < y_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_lo: f64,
    pub y_lo: f64,
    pub x_hi: f64,
    pub y_hi: f64,
}

impl Rect {
    /// Panics if the bounds are not finite or not strictly ordered.
    pub fn new(x_lo: f64, y_lo: f64, x_hi: f64, y_hi: f64) -> Self {
        Self::try_new(x_lo, y_lo, x_hi, y_hi)
            .unwrap_or_else(|| panic!("invalid rect [{x_lo},{x_hi})x[{y_lo},{y_hi})"))
    }

    pub fn try_new(x_lo: f64, y_lo: f64, x_hi: f64, y_hi: f64) -> Option<Self> {
        let finite = [x_lo, y_lo, x_hi, y_hi].iter().all(|v| v.is_finite());
        (finite && x_lo < x_hi && y_lo < y_hi).then_some(Rect { x_lo, y_lo, x_hi, y_hi })
    }

    pub fn unit() -> Self {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> f64 {
        self.y_hi - self.y_lo
    }

    pub fn center(&self) -> Point {
        Point::new(
            self.x_lo + 0.5 * self.width(),
            self.y_lo + 0.5 * self.height(),
        )
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x_lo, self.y_lo),
            Point::new(self.x_hi, self.y_lo),
            Point::new(self.x_lo, self.y_hi),
            Point::new(self.x_hi, self.y_hi),
        ]
    }

    /// Half-open membership.
    pub fn contains(&self, p: &Point) -> bool {
        self.x_lo <= p.x && p.x < self.x_hi && self.y_lo <= p.y && p.y < self.y_hi
    }

    /// Closed membership (both max edges included).
    pub fn contains_closed(&self, p: &Point) -> bool {
        self.x_lo <= p.x && p.x <= self.x_hi && self.y_lo <= p.y && p.y <= self.y_hi
    }

    /// Half-open membership, except that the max edges shared with `outer`
    /// are closed. This is how cells and tree nodes own points on the
    /// domain boundary.
    pub fn admits(&self, p: &Point, outer: &Rect) -> bool {
        let x_ok = self.x_lo <= p.x && (p.x < self.x_hi || (p.x == self.x_hi && self.x_hi == outer.x_hi));
        let y_ok = self.y_lo <= p.y && (p.y < self.y_hi || (p.y == self.y_hi && self.y_hi == outer.y_hi));
        x_ok && y_ok
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}) x [{}, {})", self.x_lo, self.x_hi, self.y_lo, self.y_hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    /// Panics on a non-finite center or a radius that is not finite and positive.
    pub fn new(center: Point, radius: f64) -> Self {
        Self::try_new(center, radius)
            .unwrap_or_else(|| panic!("invalid circle at {center} with radius {radius}"))
    }

    pub fn try_new(center: Point, radius: f64) -> Option<Self> {
        (center.is_finite() && radius.is_finite() && radius > 0.0).then_some(Circle { center, radius })
    }

    /// Boundary-inclusive point membership.
    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        self.center.dist2(p) <= self.radius * self.radius
    }

    /// Axis-aligned bounding box as `(x_lo, y_lo, x_hi, y_hi)`; may leave the domain.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        (
            self.center.x - self.radius,
            self.center.y - self.radius,
            self.center.x + self.radius,
            self.center.y + self.radius,
        )
    }
}

/// How much of a rectangle a circle covers.
///
/// The derived ordering `Disjoint < Partial < Full` is meaningful: growing a
/// circle never moves a rectangle down it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Coverage {
    Disjoint,
    Partial,
    Full,
}

impl Coverage {
    pub fn intersects(self) -> bool {
        self != Coverage::Disjoint
    }

    pub fn tag(self) -> u8 {
        match self {
            Coverage::Disjoint => 0,
            Coverage::Partial => 1,
            Coverage::Full => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Coverage::Disjoint),
            1 => Some(Coverage::Partial),
            2 => Some(Coverage::Full),
            _ => None,
        }
    }
}

/// Classifies `r` (as a closed region) against `c`. Touching counts as inside.
pub fn classify(c: &Circle, r: &Rect) -> Coverage {
    let r2 = c.radius * c.radius;
    let cx = c.center.x;
    let cy = c.center.y;

    let near_x = cx.clamp(r.x_lo, r.x_hi);
    let near_y = cy.clamp(r.y_lo, r.y_hi);
    let (ndx, ndy) = (near_x - cx, near_y - cy);
    if ndx * ndx + ndy * ndy > r2 {
        return Coverage::Disjoint;
    }

    // The farthest corner decides full coverage.
    let fdx = (r.x_lo - cx).abs().max((r.x_hi - cx).abs());
    let fdy = (r.y_lo - cy).abs().max((r.y_hi - cy).abs());
    if fdx * fdx + fdy * fdy <= r2 {
        Coverage::Full
    } else {
        Coverage::Partial
    }
}

/// Point membership in a circle; see [`Circle::contains`].
pub fn contains(c: &Circle, p: &Point) -> bool {
    c.contains(p)
}
