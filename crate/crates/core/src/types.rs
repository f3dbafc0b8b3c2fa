//! Domain types shared by the world generator, model, losses and metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrientedRect;

/// Navigation command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Straight,
    Left,
    Right,
}

impl Command {
    pub const ALL: [Command; 3] = [Command::Straight, Command::Left, Command::Right];

    pub fn index(self) -> usize {
        match self {
            Command::Straight => 0,
            Command::Left => 1,
            Command::Right => 2,
        }
    }

    /// Evaluation split label: `ST` for straight, `LR` for turns.
    pub fn split(self) -> &'static str {
        match self {
            Command::Straight => "ST",
            Command::Left | Command::Right => "LR",
        }
    }
}

/// Ego kinematic state at t = 0 plus the navigation command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoStatus {
    /// m/s in the ego frame.
    pub velocity: [f64; 2],
    /// Longitudinal, m/s².
    pub acceleration: f64,
    /// rad/s.
    pub yaw_rate: f64,
    pub command: Command,
}

impl EgoStatus {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    /// Kinematic features fed to learned ego encoders.
    pub fn features(&self) -> [f64; 4] {
        [
            self.velocity[0],
            self.velocity[1],
            self.acceleration,
            self.yaw_rate,
        ]
    }
}

/// Future ego path in ego-frame meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<[f64; 2]>,
    /// Seconds per waypoint.
    pub dt: f64,
}

impl Trajectory {
    pub fn new(waypoints: Vec<[f64; 2]>, dt: f64) -> Self {
        Trajectory { waypoints, dt }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.waypoints.len() as f64 * self.dt
    }

    /// Headings from consecutive waypoint differences, starting from the
    /// origin; a step shorter than 1e-6 m reuses the previous heading.
    pub fn headings(&self) -> Vec<f64> {
        let mut prev = [0.0, 0.0];
        let mut heading = 0.0;
        self.waypoints
            .iter()
            .map(|&p| {
                let d = [p[0] - prev[0], p[1] - prev[1]];
                if d[0].hypot(d[1]) >= 1e-6 {
                    heading = d[1].atan2(d[0]);
                }
                prev = p;
                heading
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapClass {
    LaneDivider,
    Boundary,
    Crossing,
}

impl MapClass {
    pub const ALL: [MapClass; 3] = [MapClass::LaneDivider, MapClass::Boundary, MapClass::Crossing];

    pub fn index(self) -> usize {
        match self {
            MapClass::LaneDivider => 0,
            MapClass::Boundary => 1,
            MapClass::Crossing => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapInstance {
    pub class: MapClass,
    pub points: Vec<[f64; 2]>,
}

/// Vectorized map: polylines with class labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapInstanceSet {
    pub instances: Vec<MapInstance>,
}

impl MapInstanceSet {
    /// Pad to `n_map` rows; returns points and validity flags. Every
    /// instance must already have `n_point` points.
    pub fn padded(&self, n_map: usize, n_point: usize) -> Result<(Vec<Vec<[f64; 2]>>, Vec<bool>)> {
        if self.instances.len() > n_map {
            return Err(Error::invalid(
                "MapInstanceSet::padded",
                format!("{} instances exceed capacity {n_map}", self.instances.len()),
            ));
        }
        let mut pts = Vec::with_capacity(n_map);
        let mut valid = Vec::with_capacity(n_map);
        for inst in &self.instances {
            if inst.points.len() != n_point {
                return Err(Error::invalid(
                    "MapInstanceSet::padded",
                    format!("instance has {} points, expected {n_point}", inst.points.len()),
                ));
            }
            pts.push(inst.points.clone());
            valid.push(true);
        }
        while pts.len() < n_map {
            pts.push(vec![[0.0, 0.0]; n_point]);
            valid.push(false);
        }
        Ok((pts, valid))
    }
}

/// Position and heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// A dynamic agent: footprint at t = 0 and its future poses at the planning
/// timesteps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub rect: OrientedRect,
    pub future: Vec<Pose>,
}

impl Agent {
    /// Footprint at future step `k` (0-based, i.e. time `(k + 1)·dt`).
    pub fn rect_at(&self, k: usize) -> OrientedRect {
        let p = self.future[k];
        OrientedRect {
            center: [p.x, p.y],
            half_extents: self.rect.half_extents,
            heading: crate::geometry::normalize_angle(p.heading),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headings_reuse_previous_on_stall() {
        let t = Trajectory::new(vec![[1.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 0.5);
        let h = t.headings();
        assert_eq!(h[0], 0.0);
        assert_eq!(h[1], 0.0);
        assert!((h[2] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn command_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&Command::Left).unwrap(), "\"left\"");
        assert_eq!(Command::Right.split(), "LR");
    }
}
