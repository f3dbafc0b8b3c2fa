use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

/// A rotated rectangle in BEV meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: [f64; 2],
    /// Half length (along heading) and half width.
    pub half_extents: [f64; 2],
    /// Radians in `(-π, π]`.
    pub heading: f64,
}

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

impl OrientedRect {
    pub fn new(center: [f64; 2], half_extents: [f64; 2], heading: f64) -> Result<Self> {
        if !(half_extents[0] > 0.0 && half_extents[1] > 0.0) {
            return Err(Error::invalid(
                "OrientedRect::new",
                format!("half extents must be positive, got {half_extents:?}"),
            ));
        }
        Ok(OrientedRect {
            center,
            half_extents,
            heading: normalize_angle(heading),
        })
    }

    /// From full length and width.
    pub fn from_size(center: [f64; 2], length: f64, width: f64, heading: f64) -> Result<Self> {
        Self::new(center, [length / 2.0, width / 2.0], heading)
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_extents[0] * self.half_extents[1]
    }

    /// Point expressed in the rectangle's own frame.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Closed containment test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [u, v] = self.to_local(p);
        u.abs() <= self.half_extents[0] + EPS && v.abs() <= self.half_extents[1] + EPS
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let [hl, hw] = self.half_extents;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v])
    }

    pub fn polygon(&self) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.corners().to_vec(),
        }
    }
}

/// Convex polygon with counter-clockwise vertices. Empty when it has fewer
/// than three vertices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvexPolygon {
    pub vertices: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl ConvexPolygon {
    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Shoelace area.
    pub fn area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let n = self.vertices.len();
        let mut s = 0.0;
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            s += x0 * y1 - x1 * y0;
        }
        0.5 * s
    }

    /// Closed containment test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        if self.is_empty() {
            return false;
        }
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt().max(1.0);
            cross(a, b, p) >= -EPS * len
        })
    }
}

/// Region shared by two rectangles: `a`'s outline clipped against each of
/// `b`'s edges (Sutherland–Hodgman).
pub fn rect_intersection_region(a: &OrientedRect, b: &OrientedRect) -> ConvexPolygon {
    let mut poly: Vec<[f64; 2]> = a.corners().to_vec();
    let clip = b.corners();
    for i in 0..4 {
        if poly.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % 4];
        let inside = |p: [f64; 2]| cross(e0, e1, p) >= 0.0;
        let intersect = |p: [f64; 2], q: [f64; 2]| {
            let cp = cross(e0, e1, p);
            let cq = cross(e0, e1, q);
            let t = cp / (cp - cq);
            [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
        };
        let input = std::mem::take(&mut poly);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            match (inside(prev), inside(cur)) {
                (true, true) => poly.push(cur),
                (true, false) => poly.push(intersect(prev, cur)),
                (false, true) => {
                    poly.push(intersect(prev, cur));
                    poly.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    // Drop near-duplicate vertices produced by touching edges.
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(poly.len());
    for p in poly {
        let dup = out
            .last()
            .is_some_and(|q: &[f64; 2]| (q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        if !dup {
            out.push(p);
        }
    }
    if out.len() > 1 {
        let (f, l) = (out[0], out[out.len() - 1]);
        if (f[0] - l[0]).abs() < 1e-12 && (f[1] - l[1]).abs() < 1e-12 {
            out.pop();
        }
    }
    let poly = ConvexPolygon { vertices: out };
    if poly.area() <= 1e-12 {
        ConvexPolygon::default()
    } else {
        poly
    }
}
