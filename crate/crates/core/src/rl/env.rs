use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::{fill_features, FeatureKind};
use crate::trajgen::{
    nearest_ref_index, sample_initial_pose, DatasetId, GeneratorConfig, PoseRanges, RefTrajectory, TrajectoryKind,
    TrajectoryLibrary, SEARCH_WINDOW,
};
use crate::vehicle::{step_unchecked, VehicleParams, VehicleState};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Trajectory kinds to draw episodes from.
    pub dataset: DatasetId,
    pub ranges: PoseRanges,
    pub generator: GeneratorConfig,
    pub episode_len: usize,
    /// Deviation (m) from the nearest waypoint that ends an episode as a failure.
    pub abort_radius: f64,
    pub horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetId::THREE,
            ranges: PoseRanges::default(),
            generator: GeneratorConfig::default(),
            episode_len: 500,
            abort_radius: 2.0,
            horizon: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The episode is over, for any reason.
    pub done: bool,
    /// The episode ended by leaving the abort radius.
    pub terminal: bool,
}

/// Tracking task on the training trajectories with I40 observations and
/// reward `-|p_{t+1} - ref_{k+1}|^2`.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    params: VehicleParams,
    lib: TrajectoryLibrary,
    current: (TrajectoryKind, bool),
    state: VehicleState,
    k: usize,
    t: usize,
    obs_buf: Vec<f64>,
}

impl Env {
    pub fn new(cfg: EnvConfig, params: VehicleParams) -> Result<Self> {
        params.validate()?;
        let lib = TrajectoryLibrary::new(&params, &cfg.generator)?;
        let first = cfg.dataset.kinds()[0];
        Ok(Self {
            state: lib.get(first, false).pose_at(0),
            lib,
            cfg,
            params,
            current: (first, false),
            k: 0,
            t: 0,
            obs_buf: Vec::with_capacity(2 * cfg.horizon),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn state(&self) -> VehicleState {
        self.state
    }

    pub fn index(&self) -> usize {
        self.k
    }

    pub fn trajectory(&self) -> &RefTrajectory {
        self.lib.get(self.current.0, self.current.1)
    }

    /// Puts the vehicle at `state` on the current trajectory with nearest
    /// index searched from `k`, restarting the step count.
    pub fn place(&mut self, state: VehicleState, k: usize) -> Vec<f64> {
        self.state = state;
        self.k = nearest_ref_index(self.trajectory(), &state.position(), k, self.cfg.horizon);
        self.t = 0;
        self.observe()
    }

    /// Starts an episode on a random (possibly mirrored) training trajectory
    /// from a perturbed pose; returns the first observation.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let kinds = self.cfg.dataset.kinds();
        let kind = kinds[rng.random_range(0..kinds.len())];
        let mirrored = rng.random_bool(0.5);
        self.current = (kind, mirrored);
        let traj = self.lib.get(kind, mirrored);
        let pose = sample_initial_pose(traj, &self.cfg.ranges, self.cfg.horizon, rng);
        self.state = pose.state;
        self.k = nearest_ref_index(
            traj,
            &pose.state.position(),
            pose.anchor.saturating_sub(SEARCH_WINDOW / 2),
            self.cfg.horizon,
        );
        self.t = 0;
        self.observe()
    }

    fn observe(&mut self) -> Vec<f64> {
        let traj = self.lib.get(self.current.0, self.current.1);
        fill_features(FeatureKind::I40, &self.state, traj, self.k, self.cfg.horizon, &mut self.obs_buf);
        self.obs_buf.clone()
    }

    /// Applies `action` (clamped to the steering bound) for one step.
    pub fn step(&mut self, action: f64) -> StepResult {
        let delta = if action.is_finite() { self.params.clamp_steering(action) } else { 0.0 };
        let traj = self.lib.get(self.current.0, self.current.1);
        let target = traj.points()[(self.k + 1).min(traj.len() - 1)];
        self.state = step_unchecked(&self.state, delta, &self.params);
        let reward = -self.state.position().distance_squared(&target);
        let last = traj.last_usable_index(self.cfg.horizon);
        self.k = nearest_ref_index(traj, &self.state.position(), self.k, self.cfg.horizon);
        self.t += 1;
        let deviation = self.state.position().distance(&traj.points()[self.k]);
        let terminal = deviation > self.cfg.abort_radius;
        let done = terminal || self.t >= self.cfg.episode_len || self.k >= last;
        StepResult {
            obs: self.observe(),
            reward,
            done,
            terminal,
        }
    }
}

/// `reset` as a free function over an environment.
pub fn env_reset<R: Rng + ?Sized>(env: &mut Env, rng: &mut R) -> Vec<f64> {
    env.reset(rng)
}

pub fn env_step(env: &mut Env, action: f64) -> StepResult {
    env.step(action)
}
