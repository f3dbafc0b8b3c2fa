use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Metric window and cell size of the BEV grid.
///
/// Grid coordinates are continuous `(column, row)` pairs in which integer
/// values sit on cell centers: `(0, 0)` is the center of the cell at
/// `(x_min, y_min)`. Columns run along x, rows along y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BevSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub resolution: f64,
}

impl Default for BevSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl BevSpec {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2], resolution: f64) -> Result<Self> {
        let spec = BevSpec {
            x_range,
            y_range,
            resolution,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 30 m × 15 m at 0.5 m.
    pub fn desk() -> Self {
        BevSpec {
            x_range: [-15.0, 15.0],
            y_range: [-7.5, 7.5],
            resolution: 0.5,
        }
    }

    /// 60 m × 30 m at 0.15 m.
    pub fn reference_scale() -> Self {
        BevSpec {
            x_range: [-30.0, 30.0],
            y_range: [-15.0, 15.0],
            resolution: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |lo: f64, hi: f64, axis: &str| -> Result<()> {
            let cells = (hi - lo) / self.resolution;
            if !(self.resolution > 0.0) || !(cells >= 1.0 - 1e-9) || (cells - cells.round()).abs() > 1e-6
            {
                return Err(Error::Config(format!(
                    "BEV {axis} range [{lo}, {hi}] is not a positive whole number of {} m cells",
                    self.resolution
                )));
            }
            Ok(())
        };
        check(self.x_range[0], self.x_range[1], "x")?;
        check(self.y_range[0], self.y_range[1], "y")
    }

    /// Cell count along x.
    pub fn width(&self) -> usize {
        ((self.x_range[1] - self.x_range[0]) / self.resolution).round() as usize
    }

    /// Cell count along y.
    pub fn height(&self) -> usize {
        ((self.y_range[1] - self.y_range[0]) / self.resolution).round() as usize
    }

    pub fn length_m(&self) -> f64 {
        self.x_range[1] - self.x_range[0]
    }

    pub fn width_m(&self) -> f64 {
        self.y_range[1] - self.y_range[0]
    }

    pub fn world_to_grid(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.x_range[0]) / self.resolution - 0.5,
            (p[1] - self.y_range[0]) / self.resolution - 0.5,
        ]
    }

    pub fn grid_to_world(&self, g: [f64; 2]) -> [f64; 2] {
        [
            (g[0] + 0.5) * self.resolution + self.x_range[0],
            (g[1] + 0.5) * self.resolution + self.y_range[0],
        ]
    }

    /// World position of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        self.grid_to_world([col as f64, row as f64])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_range[0]
            && p[0] <= self.x_range[1]
            && p[1] >= self.y_range[0]
            && p[1] <= self.y_range[1]
    }
}

/// A `C×H×W` feature map over a [`BevSpec`] window.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub spec: BevSpec,
    pub features: Tensor,
}

impl BevGrid {
    pub fn new(spec: BevSpec, features: Tensor) -> Result<Self> {
        let s = features.shape();
        if s.len() != 3 || s[1] != spec.height() || s[2] != spec.width() {
            return Err(Error::shape(
                "BevGrid::new",
                s,
                &[0, spec.height(), spec.width()],
            ));
        }
        Ok(BevGrid { spec, features })
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[0]
    }

    /// Bilinear feature lookup at continuous grid coordinates.
    pub fn sample(&self, q: [f64; 2]) -> Vec<f64> {
        bilinear_sample_value(&self.features, q)
    }
}

/// Bilinear lookup on a plain tensor; zero padding outside the grid.
pub fn bilinear_sample_value(features: &Tensor, q: [f64; 2]) -> Vec<f64> {
    let s = features.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let hw = h * w;
    let b = crate::tensor::kernels::Bilinear::new(q[0], q[1]);
    let mut out = vec![0.0; c];
    for (cell, wt, _, _) in b.corners(h, w) {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += wt * features.data()[ch * hw + cell];
        }
    }
    out
}

/// Differentiable bilinear sampling of `grid: C×H×W` at `points: N×2`
/// grid coordinates, returning `N×C`.
pub fn bilinear_sample<'t>(grid: Var<'t>, points: Var<'t>) -> Result<Var<'t>> {
    grid.grid_sample(points)
}
