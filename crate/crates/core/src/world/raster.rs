use crate::error::Result;
use crate::geometry::{BevSpec, OrientedRect};
use crate::tensor::Tensor;
use crate::types::MapClass;

use super::Scenario;

pub const CHANNELS: usize = 6;
pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "agents",
    "lane_divider",
    "boundary",
    "crossing",
    "agent_distance",
    "ego_trail",
];
/// Distance channel saturates here, meters.
pub const DISTANCE_CLIP: f64 = 5.0;
const TRAIL_SPAN: f64 = 2.5;

/// `CHANNELS × H × W` pseudo-sensor raster.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorObservation(pub Tensor);

impl Default for SensorObservation {
    fn default() -> Self {
        SensorObservation(Tensor::zeros(&[0]))
    }
}

impl SensorObservation {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

fn cell_of(spec: &BevSpec, p: [f64; 2]) -> Option<(usize, usize)> {
    let col = ((p[0] - spec.x_range[0]) / spec.resolution).floor();
    let row = ((p[1] - spec.y_range[0]) / spec.resolution).floor();
    (col >= 0.0 && row >= 0.0 && (col as usize) < spec.width() && (row as usize) < spec.height())
        .then(|| (row as usize, col as usize))
}

/// Walk a polyline in quarter-cell steps; `value(t)` receives the
/// fraction along the whole line.
fn paint_polyline(
    plane: &mut [f64],
    spec: &BevSpec,
    pts: &[[f64; 2]],
    value: impl Fn(f64) -> f64,
) {
    let w = spec.width();
    let n_seg = pts.len().saturating_sub(1);
    for (i, seg) in pts.windows(2).enumerate() {
        let len = (seg[1][0] - seg[0][0]).hypot(seg[1][1] - seg[0][1]);
        let steps = (len / (spec.resolution / 4.0)).ceil().max(1.0) as usize;
        for j in 0..=steps {
            let f = j as f64 / steps as f64;
            let p = [seg[0][0] + f * (seg[1][0] - seg[0][0]), seg[0][1] + f * (seg[1][1] - seg[0][1])];
            if let Some((r, c)) = cell_of(spec, p) {
                let v = value((i as f64 + f) / n_seg as f64);
                let cell = &mut plane[r * w + c];
                *cell = cell.max(v);
            }
        }
    }
}

fn rect_distance(r: &OrientedRect, p: [f64; 2]) -> f64 {
    let [u, v] = r.to_local(p);
    let du = (u.abs() - r.half_extents[0]).max(0.0);
    let dv = (v.abs() - r.half_extents[1]).max(0.0);
    du.hypot(dv)
}

/// Paint agents, map polylines, the agent distance field and the recent ego
/// trail. Reads positions only; the ego status is never consulted.
pub fn rasterize(scenario: &Scenario, spec: &BevSpec) -> Result<SensorObservation> {
    spec.validate()?;
    let (h, w) = (spec.height(), spec.width());
    let hw = h * w;
    let mut data = vec![0.0; CHANNELS * hw];
    let (occ, rest) = data.split_at_mut(hw);
    let (maps, rest) = rest.split_at_mut(3 * hw);
    let (dist, trail) = rest.split_at_mut(hw);

    for row in 0..h {
        for col in 0..w {
            let p = spec.cell_center(row, col);
            let mut d = DISTANCE_CLIP;
            for a in &scenario.agents {
                if a.rect.contains(p) {
                    occ[row * w + col] = 1.0;
                }
                d = d.min(rect_distance(&a.rect, p));
            }
            dist[row * w + col] = d;
        }
    }
    for inst in &scenario.map.instances {
        let ch = match inst.class {
            MapClass::LaneDivider => 0,
            MapClass::Boundary => 1,
            MapClass::Crossing => 2,
        };
        paint_polyline(&mut maps[ch * hw..(ch + 1) * hw], spec, &inst.points, |_| 1.0);
    }
    // Brightest at the ego, fading with age.
    let mut path = vec![[0.0, 0.0]];
    path.extend_from_slice(&scenario.ego_history);
    let span = scenario.ego_history.len() as f64 * scenario.gt_plan.dt;
    paint_polyline(trail, spec, &path, |f| 1.0 - f * span / TRAIL_SPAN);
    Ok(SensorObservation(Tensor::new(&[CHANNELS, h, w], data)?))
}
