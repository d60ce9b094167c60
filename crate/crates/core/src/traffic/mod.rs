//! Traffic generation: lane networks, IDM car following, domain
//! randomization of vehicle poses, and footprint collision filtering.

mod collision;
mod network;
mod randomize;
mod sim;

pub use collision::{collision_filter, footprints_intersect, Footprint};
pub use network::{Lane, LaneNetwork, LaneRecord, NetworkFile, Route, RouteRecord};
pub use randomize::{randomize_poses, RandomizationParams};
pub use sim::{simulate, Flows, IdmParams, SimParams, VehicleType};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Snapshot of one simulated vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u64,
    /// ENU meters on the road plane.
    pub position: [f64; 2],
    /// Radians counter-clockwise from east, in `[-pi, pi)`.
    pub heading: f64,
    pub route: String,
    pub model_id: String,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn footprint(&self) -> Footprint {
        Footprint {
            center: self.position,
            heading: self.heading,
            length: self.length,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScene {
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Scenes as JSON lines, one scene per line.
pub fn write_scenes_jsonl<W: std::io::Write>(mut out: W, scenes: &[FrameScene]) -> std::io::Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scenes_jsonl<R: std::io::BufRead>(input: R) -> std::io::Result<Vec<FrameScene>> {
    let mut scenes = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(scenes)
}
