//! Synthetic driving scenarios rendered straight into BEV rasters.
//!
//! Every scenario is a pure function of its seed and the [`WorldConfig`].
//! Roads are constant-curvature two-lane strips in the ego frame; the ego
//! starts at the origin heading +x. Straight episodes may contain a stopped
//! vehicle blocking the ego lane, in which case the ground-truth plan
//! changes into the left lane.

mod dataset;
mod perturb;
mod raster;
pub mod road;

pub use dataset::{load_dataset, save_dataset, SCHEMA};
pub use perturb::{perturb_ego, PerturbMode};
pub use raster::{rasterize, SensorObservation, CHANNELS, CHANNEL_NAMES, DISTANCE_CLIP};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rect_intersection_region, BevSpec, OrientedRect};
use crate::metrics::{ego_footprints, EgoDims};
use crate::types::{Agent, Command, EgoStatus, MapClass, MapInstance, MapInstanceSet, Pose, Trajectory};
use road::{smootherstep, Road};

pub const LANE_WIDTH: f64 = 3.5;
pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.9;
pub const MAX_CURVATURE: f64 = 0.2;
pub const MAX_SPEED: f64 = 20.0;

/// Fractions of straight and turning episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMix {
    pub straight: f64,
    pub turn: f64,
}

impl Default for CommandMix {
    fn default() -> Self {
        CommandMix {
            straight: 0.75,
            turn: 0.25,
        }
    }
}

impl CommandMix {
    pub fn validate(&self) -> Result<()> {
        if !(self.straight >= 0.0 && self.turn >= 0.0) || (self.straight + self.turn - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "command_mix fractions must be non-negative and sum to 1, got {} + {}",
                self.straight, self.turn
            )));
        }
        Ok(())
    }

    /// Number of turning episodes among `n`: rounded down.
    pub fn turn_count(&self, n: usize) -> usize {
        (n as f64 * self.turn + 1e-9).floor() as usize
    }

    /// Whether episode `i` of a dataset is a turn; spreads the
    /// [`turn_count`](Self::turn_count) turns evenly.
    pub fn is_turn(&self, i: usize) -> bool {
        self.turn_count(i + 1) > self.turn_count(i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub bev: BevSpec,
    /// Planning steps.
    pub horizon: usize,
    pub dt: f64,
    /// Past ego positions kept for the trail channel.
    pub history: usize,
    pub n_point: usize,
    pub command_mix: CommandMix,
    /// In `[0, 1]`; scales agent count and obstacle frequency.
    pub difficulty: f64,
    pub speed_range: [f64; 2],
    pub curvature_range: [f64; 2],
    /// Ego acceleration is drawn from `±accel_noise` m/s².
    pub accel_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            bev: BevSpec::desk(),
            horizon: 6,
            dt: 0.5,
            history: 4,
            n_point: 20,
            command_mix: CommandMix::default(),
            difficulty: 0.5,
            speed_range: [2.0, 4.5],
            curvature_range: [0.04, 0.12],
            accel_noise: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.bev.validate()?;
        self.command_mix.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 || !(self.dt > 0.0) || self.n_point < 2 || self.history == 0 {
            return bad("world horizon, dt, history and n_point must be positive (n_point ≥ 2)".into());
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return bad(format!("difficulty {} outside [0, 1]", self.difficulty));
        }
        let [v0, v1] = self.speed_range;
        if !(v0 > 0.0 && v0 <= v1 && v1 <= MAX_SPEED) {
            return bad(format!("speed_range {:?} must lie in (0, {MAX_SPEED}]", self.speed_range));
        }
        let [k0, k1] = self.curvature_range;
        if !(k0 > 0.0 && k0 <= k1 && k1 <= MAX_CURVATURE) {
            return bad(format!("curvature_range {:?} must lie in (0, {MAX_CURVATURE}]", self.curvature_range));
        }
        if !(self.accel_noise >= 0.0 && self.accel_noise < v0 / (self.history as f64 * self.dt).max(self.horizon as f64 * self.dt)) {
            return bad(format!("accel_noise {} too large for the slowest speed", self.accel_noise));
        }
        Ok(())
    }

    pub fn max_agents(&self) -> usize {
        (self.difficulty * 6.0).round() as usize
    }

    pub fn obstacle_prob(&self) -> f64 {
        0.4 * self.difficulty
    }
}

/// Episode family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Straight,
    Turn,
    Obstacle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub kind: EpisodeKind,
    /// Signed road curvature, 1/m.
    pub curvature: f64,
    pub ego_status: EgoStatus,
    pub gt_plan: Trajectory,
    /// Past ego positions, most recent first, one per `dt`.
    pub ego_history: Vec<[f64; 2]>,
    pub agents: Vec<Agent>,
    pub map: MapInstanceSet,
    #[serde(skip)]
    pub obs: SensorObservation,
}

impl Scenario {
    pub fn command(&self) -> Command {
        self.ego_status.command
    }

    pub fn gt_speed(&self) -> f64 {
        self.ego_status.speed()
    }
}

/// Generate one episode, drawing the straight/turn choice from the mix.
pub fn generate_scenario(seed: u64, cfg: &WorldConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turn = rng.random::<f64>() < cfg.command_mix.turn;
    build(seed, turn, &mut rng, cfg)
}

/// Generate episode `seed` with the straight/turn choice fixed by the caller.
pub fn generate_with(seed: u64, turn: bool, cfg: &WorldConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let _ = rng.random::<f64>();
    build(seed, turn, &mut rng, cfg)
}

/// `n` episodes with seeds `first_seed..first_seed + n` and exactly
/// [`CommandMix::turn_count`] turns.
pub fn generate_dataset(first_seed: u64, n: usize, cfg: &WorldConfig) -> Result<Vec<Scenario>> {
    (0..n)
        .map(|i| generate_with(first_seed + i as u64, cfg.command_mix.is_turn(i), cfg))
        .collect()
}

fn build(seed: u64, turn: bool, rng: &mut ChaCha8Rng, cfg: &WorldConfig) -> Result<Scenario> {
    let speed = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
    let accel = if cfg.accel_noise > 0.0 {
        rng.random_range(-cfg.accel_noise..=cfg.accel_noise)
    } else {
        0.0
    };
    let travel = |t: f64| speed * t + 0.5 * accel * t * t;
    let times: Vec<f64> = (1..=cfg.horizon).map(|k| k as f64 * cfg.dt).collect();
    let half_y = (cfg.bev.y_range[1] - cfg.bev.y_range[0]) / 2.0 - 1.5;

    let (kind, kappa) = if turn {
        let left = rng.random::<bool>();
        let reach = travel(cfg.horizon as f64 * cfg.dt);
        let mut k = cfg.curvature_range[0];
        for _ in 0..64 {
            let c = rng.random_range(cfg.curvature_range[0]..=cfg.curvature_range[1]);
            if (1.0 - (c * reach).cos()) / c <= half_y && c * reach < 1.5 {
                k = c;
                break;
            }
        }
        (EpisodeKind::Turn, if left { k } else { -k })
    } else if rng.random::<f64>() < cfg.obstacle_prob() {
        (EpisodeKind::Obstacle, 0.0)
    } else {
        (EpisodeKind::Straight, 0.0)
    };
    let road = Road { kappa };

    // Obstacle: stopped car on the ego lane; lane change completes 4.5 m
    // before its center.
    let obstacle_s = rng.random_range(10.0..12.5);
    let lateral = |s: f64| match kind {
        EpisodeKind::Obstacle => LANE_WIDTH * smootherstep(s / (obstacle_s - 4.5)),
        _ => 0.0,
    };
    let waypoints: Vec<[f64; 2]> = times
        .iter()
        .map(|&t| {
            let s = travel(t);
            road.point(s, lateral(s))
        })
        .collect();
    let gt_plan = Trajectory::new(waypoints, cfg.dt);
    let ego_history = (1..=cfg.history)
        .map(|k| {
            let t = k as f64 * cfg.dt;
            road.point(-(speed * t - 0.5 * accel * t * t), 0.0)
        })
        .collect();
    let command = match kind {
        EpisodeKind::Turn if kappa > 0.0 => Command::Left,
        EpisodeKind::Turn => Command::Right,
        _ => Command::Straight,
    };
    let ego_status = EgoStatus {
        velocity: [speed, 0.0],
        acceleration: accel,
        yaw_rate: speed * kappa,
        command,
    };

    // Ego footprints at t = 0 and along the plan, padded for clearance.
    let pad = EgoDims {
        length: EgoDims::default().length + 1.0,
        width: EgoDims::default().width + 0.6,
    };
    let mut ego_rects = vec![OrientedRect::from_size([0.0, 0.0], pad.length, pad.width, 0.0)?];
    ego_rects.extend(ego_footprints(&gt_plan, &pad));

    let mut agents: Vec<Agent> = Vec::new();
    if kind == EpisodeKind::Obstacle {
        let p = road.point(obstacle_s, 0.0);
        let pose = Pose { x: p[0], y: p[1], heading: 0.0 };
        agents.push(Agent {
            rect: OrientedRect::from_size(p, VEHICLE_LENGTH, VEHICLE_WIDTH, 0.0)?,
            future: vec![pose; cfg.horizon],
        });
    }
    let wanted = rng.random_range(0..=cfg.max_agents());
    for _ in 0..wanted {
        for _attempt in 0..50 {
            let lane = if rng.random::<bool>() { 0.0 } else { LANE_WIDTH };
            let s0 = rng.random_range(-12.0..25.0);
            let u = rng.random_range(0.0..6.0);
            let stop_at = if rng.random::<f64>() < 0.2 {
                rng.random_range(1..=cfg.horizon)
            } else {
                usize::MAX
            };
            let pose_at = |k: usize| {
                let s = s0 + u * cfg.dt * k.min(stop_at) as f64;
                let p = road.point(s, lane);
                Pose { x: p[0], y: p[1], heading: road.heading(s) }
            };
            let now = pose_at(0);
            let cand = Agent {
                rect: OrientedRect::from_size([now.x, now.y], VEHICLE_LENGTH, VEHICLE_WIDTH, now.heading)?,
                future: (1..=cfg.horizon).map(pose_at).collect(),
            };
            if accepts(&cand, &agents, &ego_rects, &cfg.bev) {
                agents.push(cand);
                break;
            }
        }
    }

    let mut instances = Vec::new();
    for (class, l) in [
        (MapClass::Boundary, -LANE_WIDTH / 2.0),
        (MapClass::LaneDivider, LANE_WIDTH / 2.0),
        (MapClass::Boundary, 1.5 * LANE_WIDTH),
    ] {
        if let Some(points) = road.clipped_line(l, &cfg.bev, cfg.n_point) {
            instances.push(MapInstance { class, points });
        }
    }
    if rng.random::<f64>() < 0.3 {
        let s = rng.random_range(6.0..14.0);
        let across: Vec<[f64; 2]> = (0..=70)
            .map(|i| road.point(s, -LANE_WIDTH / 2.0 + 0.1 * i as f64))
            .collect();
        if let Some(run) = road::longest_inside_run(&across, &cfg.bev) {
            if let Some(points) = road::resample(&run, cfg.n_point) {
                instances.push(MapInstance { class: MapClass::Crossing, points });
            }
        }
    }

    let mut scenario = Scenario {
        seed,
        kind,
        curvature: kappa,
        ego_status,
        gt_plan,
        ego_history,
        agents,
        map: MapInstanceSet { instances },
        obs: SensorObservation::default(),
    };
    scenario.obs = rasterize(&scenario, &cfg.bev)?;
    Ok(scenario)
}

fn accepts(cand: &Agent, placed: &[Agent], ego: &[OrientedRect], spec: &BevSpec) -> bool {
    let steps = cand.future.len();
    let at = |a: &Agent, k: usize| if k == 0 { a.rect } else { a.rect_at(k - 1) };
    let overlaps = |a: &OrientedRect, b: &OrientedRect| !rect_intersection_region(a, b).is_empty();
    let padded = |r: OrientedRect| OrientedRect {
        half_extents: [r.half_extents[0] + 0.5, r.half_extents[1] + 0.25],
        ..r
    };
    (0..=steps).all(|k| {
        let r = at(cand, k);
        r.corners().iter().all(|&c| spec.contains(c))
            && !overlaps(&r, &ego[k])
            && placed.iter().all(|p| !overlaps(&padded(r), &at(p, k)))
    })
}
