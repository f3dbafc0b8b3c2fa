use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::EgoStatus;

/// Inference-time corruption of the ego velocity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PerturbMode {
    None,
    Scale0,
    Scale05,
    Scale15,
    Abs100,
}

impl PerturbMode {
    pub const ALL: [PerturbMode; 5] = [
        PerturbMode::None,
        PerturbMode::Scale0,
        PerturbMode::Scale05,
        PerturbMode::Scale15,
        PerturbMode::Abs100,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::None => "none",
            PerturbMode::Scale0 => "x0.0",
            PerturbMode::Scale05 => "x0.5",
            PerturbMode::Scale15 => "x1.5",
            PerturbMode::Abs100 => "abs100",
        }
    }
}

impl fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "perturb_ego",
                    format!("unknown mode {s:?}; expected one of none, x0.0, x0.5, x1.5, abs100"),
                )
            })
    }
}

impl TryFrom<String> for PerturbMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PerturbMode> for String {
    fn from(m: PerturbMode) -> String {
        m.name().to_string()
    }
}

pub fn perturb_ego(ego: &EgoStatus, mode: PerturbMode) -> EgoStatus {
    let scale = |k: f64| EgoStatus {
        velocity: ego.velocity.map(|v| v * k),
        ..*ego
    };
    match mode {
        PerturbMode::None => *ego,
        PerturbMode::Scale0 => scale(0.0),
        PerturbMode::Scale05 => scale(0.5),
        PerturbMode::Scale15 => scale(1.5),
        PerturbMode::Abs100 => {
            let speed = ego.speed();
            let velocity = if speed > 0.0 {
                ego.velocity.map(|v| 100.0 * v / speed)
            } else {
                [100.0, 0.0]
            };
            EgoStatus { velocity, ..*ego }
        }
    }
}
