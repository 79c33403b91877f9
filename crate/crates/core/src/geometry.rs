//! Planar convex polygons with vertex and halfspace representations.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// `normal . x <= offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Point,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Point, offset: f64) -> Self {
        let n = norm(normal);
        Self {
            normal: [normal[0] / n, normal[1] / n],
            offset: offset / n,
        }
    }

    pub fn slack(&self, p: Point) -> f64 {
        self.offset - dot(self.normal, p)
    }
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull in counter-clockwise order (Andrew's monotone chain); collinear
/// points are dropped. Degenerate inputs give a point or a segment.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let scale = pts.iter().map(|p| norm(*p)).fold(0.0, f64::max).max(1e-300);
    let eps = 1e-14 * scale * scale;
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= eps {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 2 {
        // all points (numerically) coincide or are collinear
        let first = pts[0];
        let far = *pts
            .iter()
            .max_by(|a, b| norm(sub(**a, first)).total_cmp(&norm(sub(**b, first))))
            .unwrap();
        return if far == first { vec![first] } else { vec![first, far] };
    }
    hull
}

/// Bounded convex polygon. Vertices are counter-clockwise; halfspaces are the
/// supporting lines of the edges (empty when the polygon is a point or segment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    vertices: Vec<Point>,
    halfspaces: Vec<Halfspace>,
}

impl Polytope {
    pub fn from_points(points: &[Point]) -> Self {
        let vertices = convex_hull(points);
        let mut halfspaces = Vec::new();
        if vertices.len() >= 3 {
            for i in 0..vertices.len() {
                let p = vertices[i];
                let q = vertices[(i + 1) % vertices.len()];
                // outward normal of a CCW edge
                let n = [q[1] - p[1], p[0] - q[0]];
                halfspaces.push(Halfspace::new(n, dot(n, p)));
            }
        }
        let poly = Self { vertices, halfspaces };
        debug_assert!(poly.representations_agree());
        poly
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    fn scale(&self) -> f64 {
        self.vertices.iter().map(|p| norm(*p)).fold(1.0, f64::max)
    }

    /// Every vertex satisfies every halfspace (up to rounding).
    pub fn representations_agree(&self) -> bool {
        let tol = 1e-9 * self.scale();
        self.halfspaces
            .iter()
            .all(|h| self.vertices.iter().all(|v| h.slack(*v) >= -tol))
    }

    /// Euclidean distance from `p` to the polygon (0 inside).
    pub fn distance(&self, p: Point) -> f64 {
        match self.vertices.len() {
            0 => f64::INFINITY,
            1 => norm(sub(p, self.vertices[0])),
            _ => {
                if self.halfspaces.len() >= 3 && self.halfspaces.iter().all(|h| h.slack(p) >= 0.0) {
                    return 0.0;
                }
                let n = self.vertices.len();
                let edges = if n == 2 { 1 } else { n };
                (0..edges)
                    .map(|i| segment_distance(p, self.vertices[i], self.vertices[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        self.distance(p) <= tol
    }

    pub fn min_norm(&self) -> f64 {
        self.distance([0.0, 0.0])
    }

    pub fn max_norm(&self) -> f64 {
        self.vertices.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }

    /// Image under a linear map (vertex mapping followed by a new hull).
    pub fn map(&self, m: &Matrix2<f64>) -> Self {
        let pts: Vec<Point> = self
            .vertices
            .iter()
            .map(|v| {
                [
                    m[(0, 0)] * v[0] + m[(0, 1)] * v[1],
                    m[(1, 0)] * v[0] + m[(1, 1)] * v[1],
                ]
            })
            .collect();
        Self::from_points(&pts)
    }

    /// Outer polygon of `self ⊕ ball(r)`: each vertex is replaced by a regular
    /// `sides`-gon circumscribing the ball. Hausdorff error `r (sec(pi/sides) - 1)`.
    pub fn dilate_outer(&self, r: f64, sides: usize) -> Self {
        if r <= 0.0 || self.is_empty() {
            return self.clone();
        }
        let sides = sides.max(3);
        let rho = r / (PI / sides as f64).cos();
        let mut pts = Vec::with_capacity(self.vertices.len() * sides);
        for v in &self.vertices {
            for j in 0..sides {
                let t = 2.0 * PI * j as f64 / sides as f64;
                pts.push([v[0] + rho * t.cos(), v[1] + rho * t.sin()]);
            }
        }
        Self::from_points(&pts)
    }

    /// Intersection with `h` (Sutherland–Hodgman on one line).
    pub fn clip(&self, h: &Halfspace) -> Self {
        let n = self.vertices.len();
        if n == 0 {
            return self.clone();
        }
        let mut out = Vec::with_capacity(n + 1);
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let sp = h.slack(p);
            let sq = h.slack(q);
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        Self::from_points(&out)
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    norm(sub(p, [a[0] + t * ab[0], a[1] + t * ab[1]]))
}
