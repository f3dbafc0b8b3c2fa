//! Constant-curvature road frame: arc length `s` along the ego lane center,
//! lateral offset `l` to the left.

use crate::geometry::BevSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Road {
    /// Signed curvature, positive to the left.
    pub kappa: f64,
}

impl Road {
    pub fn point(&self, s: f64, l: f64) -> [f64; 2] {
        let k = self.kappa;
        if k.abs() < 1e-12 {
            return [s, l];
        }
        let (sin, cos) = (k * s).sin_cos();
        [sin / k - l * sin, (1.0 - cos) / k + l * cos]
    }

    pub fn heading(&self, s: f64) -> f64 {
        self.kappa * s
    }

    /// Polyline of the line at offset `l`, clipped to the window (longest
    /// contiguous run) and resampled to `n` evenly spaced points. `None`
    /// when less than a meter of it is visible.
    pub fn clipped_line(&self, l: f64, spec: &BevSpec, n: usize) -> Option<Vec<[f64; 2]>> {
        let pts: Vec<[f64; 2]> = (0..=400).map(|i| self.point(-30.0 + 0.2 * i as f64, l)).collect();
        longest_inside_run(&pts, spec).and_then(|run| resample(&run, n))
    }
}

pub(crate) fn longest_inside_run(pts: &[[f64; 2]], spec: &BevSpec) -> Option<Vec<[f64; 2]>> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for i in 0..=pts.len() {
        let inside = i < pts.len() && spec.contains(pts[i]);
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(a, b)| i - s > b - a) {
                    best = Some((s, i));
                }
                start = None;
            }
            _ => {}
        }
    }
    best.map(|(a, b)| pts[a..b].to_vec())
}

/// Evenly spaced points by arc length, endpoints included.
pub fn resample(pts: &[[f64; 2]], n: usize) -> Option<Vec<[f64; 2]>> {
    if pts.len() < 2 || n < 2 {
        return None;
    }
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if total < 1.0 {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for j in 0..n {
        let target = total * j as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((target - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    Some(out)
}

/// `6t⁵ − 15t⁴ + 10t³` on `[0, 1]`, clamped outside.
pub fn smootherstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}
