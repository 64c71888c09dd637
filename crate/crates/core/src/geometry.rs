//! Planar geometry: points, convex polygons and the position normalization
//! that maps the scene bounding box onto `[-1, 1]^2`.

use std::ops::{Add, Mul, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    /// Unit vector in the same direction; the zero vector maps to itself.
    pub fn unit(self) -> Point2 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self * (1.0 / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(p: [f64; 2]) -> Self {
        Point2::new(p[0], p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point2,
    pub max: Point2,
}

impl BoundingBox {
    pub fn of(points: &[Point2]) -> Option<Self> {
        let first = *points.first()?;
        let mut bb = BoundingBox { min: first, max: first };
        for p in &points[1..] {
            bb.min.x = bb.min.x.min(p.x);
            bb.min.y = bb.min.y.min(p.y);
            bb.max.x = bb.max.x.max(p.x);
            bb.max.y = bb.max.y.max(p.y);
        }
        Some(bb)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point2 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    /// Convex hull of a point set (monotone chain). Collinear points are dropped.
    pub fn hull(points: &[Point2]) -> Self {
        let mut pts: Vec<Point2> = points.to_vec();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup();
        if pts.len() < 3 {
            return Self { vertices: pts };
        }
        let turn = |o: Point2, a: Point2, b: Point2| (a - o).cross(b - o);
        let mut lower: Vec<Point2> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<Point2> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Self { vertices: lower }
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let twice: f64 = (0..n)
            .map(|i| self.vertices[i].cross(self.vertices[(i + 1) % n]))
            .sum();
        0.5 * twice.abs()
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.vertices.len() as f64;
        self.vertices.iter().fold(Point2::default(), |acc, &p| acc + p) * (1.0 / n)
    }

    /// Inclusive containment test (boundary points count as inside).
    pub fn contains(&self, p: Point2) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let scale = self.bounding_box().width().max(self.bounding_box().height()).max(1.0);
        let tol = 1e-12 * scale * scale;
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (b - a).cross(p - a) >= -tol
        })
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::of(&self.vertices).unwrap_or(BoundingBox {
            min: Point2::default(),
            max: Point2::default(),
        })
    }

    /// Uniform draw by rejection from the bounding box.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Result<Point2> {
        if self.area() <= 0.0 {
            return Err(Error::Config("spawn polygon has zero area".into()));
        }
        let bb = self.bounding_box();
        for _ in 0..10_000 {
            let p = Point2::new(
                rng.random_range(bb.min.x..=bb.max.x),
                rng.random_range(bb.min.y..=bb.max.y),
            );
            if self.contains(p) {
                return Ok(p);
            }
        }
        Err(Error::Config("rejection sampling inside the spawn polygon failed".into()))
    }
}

/// Affine map between meters and the normalized position space `[-1, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionNorm {
    pub bbox: BoundingBox,
}

impl PositionNorm {
    pub fn new(bbox: BoundingBox) -> Result<Self> {
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            return Err(Error::Config("position bounding box must have positive extent".into()));
        }
        Ok(Self { bbox })
    }

    pub fn half_extent(&self) -> Point2 {
        Point2::new(0.5 * self.bbox.width(), 0.5 * self.bbox.height())
    }

    pub fn normalize(&self, p: Point2) -> [f64; 2] {
        let c = self.bbox.center();
        let h = self.half_extent();
        [(p.x - c.x) / h.x, (p.y - c.y) / h.y]
    }

    pub fn denormalize(&self, v: [f64; 2]) -> Point2 {
        let c = self.bbox.center();
        let h = self.half_extent();
        Point2::new(c.x + v[0] * h.x, c.y + v[1] * h.y)
    }

    /// Scale a length in meters along each axis into normalized units.
    pub fn scale_meters(&self, dx: f64, dy: f64) -> [f64; 2] {
        let h = self.half_extent();
        [dx / h.x, dy / h.y]
    }
}
