//! Network input sets, all expressed in the robot frame.
//!
//! * `I3`: nearest waypoint (x, y) and the reference heading relative to the vehicle.
//! * `I21`: lateral coordinate of the next `N` waypoints, then the relative heading.
//! * `I40`: (x, y) of the next `N` waypoints, interleaved `x1, y1, x2, y2, ...`.
//!
//! `I21` and `I40` are named for the default horizon `N = 20`; other horizons
//! give `N + 1` and `2N` values.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::trajgen::RefTrajectory;
use crate::vehicle::{world_to_robot, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    I3,
    I21,
    I40,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::I3, FeatureKind::I21, FeatureKind::I40];

    pub fn dim(self, horizon: usize) -> usize {
        match self {
            FeatureKind::I3 => 3,
            FeatureKind::I21 => horizon + 1,
            FeatureKind::I40 => 2 * horizon,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::I3 => "i3",
            FeatureKind::I21 => "i21",
            FeatureKind::I40 => "i40",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "i3" => Ok(FeatureKind::I3),
            "i21" => Ok(FeatureKind::I21),
            "i40" => Ok(FeatureKind::I40),
            other => Err(Error::invalid(format!("unknown input set `{other}` (expected i3, i21 or i40)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

fn relative_heading(state: &VehicleState, traj: &RefTrajectory, k: usize) -> f64 {
    wrap_angle(traj.headings()[k] - state.theta)
}

pub fn build_i3(state: &VehicleState, traj: &RefTrajectory, k: usize) -> FeatureVector {
    let k = k.min(traj.len() - 1);
    let p = world_to_robot(state, &traj.points()[k]);
    FeatureVector {
        kind: FeatureKind::I3,
        values: vec![p.x, p.y, relative_heading(state, traj, k)],
    }
}

pub fn build_i21(state: &VehicleState, traj: &RefTrajectory, k: usize, horizon: usize) -> FeatureVector {
    let k = k.min(traj.last_usable_index(horizon));
    let mut values: Vec<f64> = traj.points()[k + 1..=k + horizon]
        .iter()
        .map(|p| world_to_robot(state, p).y)
        .collect();
    values.push(relative_heading(state, traj, k));
    FeatureVector {
        kind: FeatureKind::I21,
        values,
    }
}

pub fn build_i40(state: &VehicleState, traj: &RefTrajectory, k: usize, horizon: usize) -> FeatureVector {
    let mut values = Vec::with_capacity(2 * horizon);
    fill_i40(state, traj, k, horizon, &mut values);
    FeatureVector {
        kind: FeatureKind::I40,
        values,
    }
}

fn fill_i40(state: &VehicleState, traj: &RefTrajectory, k: usize, horizon: usize, out: &mut Vec<f64>) {
    let k = k.min(traj.last_usable_index(horizon));
    out.clear();
    for p in &traj.points()[k + 1..=k + horizon] {
        let r = world_to_robot(state, p);
        out.push(r.x);
        out.push(r.y);
    }
}

pub fn build_features(
    kind: FeatureKind,
    state: &VehicleState,
    traj: &RefTrajectory,
    k: usize,
    horizon: usize,
) -> FeatureVector {
    match kind {
        FeatureKind::I3 => build_i3(state, traj, k),
        FeatureKind::I21 => build_i21(state, traj, k, horizon),
        FeatureKind::I40 => build_i40(state, traj, k, horizon),
    }
}

/// Allocation-free variant of [`build_features`] writing into `out`.
pub fn fill_features(
    kind: FeatureKind,
    state: &VehicleState,
    traj: &RefTrajectory,
    k: usize,
    horizon: usize,
    out: &mut Vec<f64>,
) {
    match kind {
        FeatureKind::I40 => fill_i40(state, traj, k, horizon, out),
        _ => {
            let f = build_features(kind, state, traj, k, horizon);
            out.clear();
            out.extend_from_slice(&f.values);
        }
    }
}
