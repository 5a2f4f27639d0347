//! Closed-loop rollouts, deviation metrics and latency benchmarks.
//!
//! Every controller drives the same loop: find the nearest waypoint, ask for
//! a steering command, clamp it, step the bicycle. Deviation between two
//! rollouts is the distance between their positions at the same step.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{features_for, label_poses, DatasetSpec, LabeledPose};
use crate::error::{Error, Result};
use crate::features::{fill_features, FeatureKind};
use crate::mpc::{ControlSequence, MpcConfig, MpcInput, MpcSolver};
use crate::nn::{ForwardScratch, Mlp};
use crate::trajgen::{nearest_ref_index, validation_circuit, DatasetId, RefTrajectory, Track, TrajectoryLibrary, SEARCH_WINDOW};
use crate::vehicle::{step_unchecked, Observation, VehicleParams, VehicleState};

/// Rollouts stop once the vehicle is farther than this from the reference (m).
pub const ABORT_RADIUS: f64 = 2.0;

/// Anything that maps the current pose and reference to a steering angle.
pub trait Controller {
    /// Clears per-rollout state such as a warm start.
    fn reset(&mut self) {}

    fn control(&mut self, state: &VehicleState, traj: &RefTrajectory, k: usize) -> f64;
}

/// The MPC expert, warm-started from its previous shifted solution.
#[derive(Debug, Clone)]
pub struct MpcController {
    solver: MpcSolver,
    warm: Option<ControlSequence>,
    pub warm_start: bool,
    /// Calls whose solve did not meet the gradient tolerance.
    pub unconverged: usize,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, params: VehicleParams) -> Self {
        Self {
            solver: MpcSolver::new(cfg, params),
            warm: None,
            warm_start: true,
            unconverged: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.solver.cfg.horizon
    }
}

impl Controller for MpcController {
    fn reset(&mut self) {
        self.warm = None;
        self.unconverged = 0;
    }

    fn control(&mut self, state: &VehicleState, traj: &RefTrajectory, k: usize) -> f64 {
        let input = MpcInput::from_trajectory(*state, traj, k, self.horizon());
        let warm = if self.warm_start { self.warm.as_ref() } else { None };
        let sol = self.solver.solve(&input, warm);
        if !sol.status.is_converged() {
            self.unconverged += 1;
        }
        let first = sol.controls.first();
        self.warm = Some(sol.controls.shifted());
        first
    }
}

/// A trained network fed with one of the input sets.
#[derive(Debug, Clone)]
pub struct NetController {
    net: Mlp,
    kind: FeatureKind,
    horizon: usize,
    buf: Vec<f64>,
    scratch: ForwardScratch,
}

impl NetController {
    pub fn new(net: Mlp, kind: FeatureKind, horizon: usize) -> Result<Self> {
        let expected = kind.dim(horizon);
        if net.input_dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: net.input_dim(),
            });
        }
        Ok(Self {
            net,
            kind,
            horizon,
            buf: Vec::with_capacity(expected),
            scratch: ForwardScratch::default(),
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }
}

impl Controller for NetController {
    fn control(&mut self, state: &VehicleState, traj: &RefTrajectory, k: usize) -> f64 {
        fill_features(self.kind, state, traj, k, self.horizon, &mut self.buf);
        self.net.forward_with(&self.buf, &mut self.scratch)
    }
}

/// Always steers straight.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn control(&mut self, _: &VehicleState, _: &RefTrajectory, _: usize) -> f64 {
        0.0
    }
}

/// A reference, a start pose and a number of control steps.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub traj: RefTrajectory,
    pub start: VehicleState,
    pub steps: usize,
    pub horizon: usize,
}

impl Scenario {
    /// `laps` around `track` starting on its first waypoint; the reference is
    /// padded so the horizon and search window never run off the end.
    pub fn from_track(track: &Track, laps: usize, params: &VehicleParams, horizon: usize) -> Result<Self> {
        let (traj, steps) = track.unrolled(laps, horizon + SEARCH_WINDOW, params.spacing())?;
        Ok(Self {
            start: traj.pose_at(0),
            traj,
            steps,
            horizon,
        })
    }

    /// Two laps of the bundled circuit.
    pub fn validation(params: &VehicleParams, horizon: usize) -> Result<Self> {
        Self::from_track(&validation_circuit(), 2, params, horizon)
    }

    /// Follows `traj` from its first pose for as many steps as it supports.
    pub fn along(traj: RefTrajectory, horizon: usize) -> Self {
        let steps = traj.last_usable_index(horizon);
        Self {
            start: traj.pose_at(0),
            traj,
            steps,
            horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Pose before each control call.
    pub states: Vec<VehicleState>,
    /// Applied (clamped) steering per step.
    pub commands: Vec<f64>,
    /// Nearest waypoint index per step.
    pub indices: Vec<usize>,
    /// Wall time of each control call, seconds.
    pub call_times: Vec<f64>,
    pub final_state: VehicleState,
    /// Step at which the vehicle left the abort radius, if it did.
    pub diverged_at: Option<usize>,
}

impl RolloutResult {
    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    /// Position after each step.
    pub fn path(&self) -> Vec<Observation> {
        self.states[1..]
            .iter()
            .chain(std::iter::once(&self.final_state))
            .map(VehicleState::position)
            .collect()
    }

    /// Dumps `step,x,y,theta,delta,ref_index`, one row per control step.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use crate::io::fmt_f64;
        crate::io::write_atomically(path, |w| {
            let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
            wtr.write_record(["step", "x", "y", "theta", "delta", "ref_index"])?;
            for (t, ((s, d), k)) in self.states.iter().zip(&self.commands).zip(&self.indices).enumerate() {
                wtr.write_record([
                    t.to_string(),
                    fmt_f64(s.x),
                    fmt_f64(s.y),
                    fmt_f64(s.theta),
                    fmt_f64(*d),
                    k.to_string(),
                ])?;
            }
            wtr.flush()?;
            Ok(())
        })
    }
}

/// Runs `controller` in closed loop over the scenario.
///
/// A non-finite command or leaving [`ABORT_RADIUS`] ends the rollout early
/// and is recorded in `diverged_at`.
pub fn rollout(controller: &mut dyn Controller, sc: &Scenario, params: &VehicleParams) -> RolloutResult {
    controller.reset();
    let n = sc.steps;
    let mut out = RolloutResult {
        states: Vec::with_capacity(n),
        commands: Vec::with_capacity(n),
        indices: Vec::with_capacity(n),
        call_times: Vec::with_capacity(n),
        final_state: sc.start,
        diverged_at: None,
    };
    let mut state = sc.start;
    let mut k = 0;
    for t in 0..n {
        k = nearest_ref_index(&sc.traj, &state.position(), k, sc.horizon);
        let t0 = Instant::now();
        let cmd = controller.control(&state, &sc.traj, k);
        let elapsed = t0.elapsed().as_secs_f64();
        if !cmd.is_finite() {
            out.diverged_at = Some(t);
            break;
        }
        let delta = params.clamp_steering(cmd);
        out.states.push(state);
        out.commands.push(delta);
        out.indices.push(k);
        out.call_times.push(elapsed);
        state = step_unchecked(&state, delta, params);
        let near = nearest_ref_index(&sc.traj, &state.position(), k, sc.horizon);
        if state.position().distance(&sc.traj.points()[near]) > ABORT_RADIUS {
            out.diverged_at = Some(t);
            out.final_state = state;
            return out;
        }
    }
    out.final_state = state;
    out
}

/// The expert's rollout, the baseline every learned controller is compared to.
pub fn expert_rollout(sc: &Scenario, params: &VehicleParams, cfg: &MpcConfig) -> RolloutResult {
    let mut mpc = MpcController::new(*cfg, *params);
    rollout(&mut mpc, sc, params)
}

/// Deviation statistics in centimeters and the per-call controller time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_cm: f64,
    pub max_cm: f64,
    pub std_cm: f64,
    /// Median wall time of one control call of the tested rollout, seconds.
    pub latency_s: f64,
}

impl Metrics {
    /// Placeholder for runs that left the track.
    pub fn diverged(latency_s: f64) -> Self {
        Self {
            mean_cm: f64::INFINITY,
            max_cm: f64::INFINITY,
            std_cm: f64::INFINITY,
            latency_s,
        }
    }
}

/// Same-step position deviation of `test` from `expert`.
pub fn compute_metrics(test: &RolloutResult, expert: &RolloutResult) -> Result<Metrics> {
    if test.len() != expert.len() {
        return Err(Error::DimensionMismatch {
            expected: expert.len(),
            got: test.len(),
        });
    }
    if test.is_empty() {
        return Err(Error::invalid("empty rollouts"));
    }
    if test.states[0] != expert.states[0] {
        return Err(Error::invalid("rollouts start from different states"));
    }
    let d: Vec<f64> = test
        .path()
        .iter()
        .zip(expert.path())
        .map(|(a, b)| 100.0 * a.distance(&b))
        .collect();
    let (mean, max, std) = deviation_stats(&d);
    Ok(Metrics {
        mean_cm: mean,
        max_cm: max,
        std_cm: std,
        latency_s: median(&test.call_times),
    })
}

/// Metrics of a rollout that may have diverged: infinite deviation if it did.
pub fn metrics_or_diverged(test: &RolloutResult, expert: &RolloutResult) -> Result<Metrics> {
    if test.diverged_at.is_some() && expert.diverged_at.is_none() {
        return Ok(Metrics::diverged(median(&test.call_times)));
    }
    compute_metrics(test, expert)
}

/// Mean, maximum and population standard deviation.
pub fn deviation_stats(d: &[f64]) -> (f64, f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let max = d.iter().copied().fold(0.0, f64::max);
    (mean, max, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Median seconds per call.
    pub median_s: f64,
    pub p10_s: f64,
    pub p90_s: f64,
    /// Timed calls, excluding warm-up.
    pub calls: usize,
    /// Calls per timed chunk.
    pub chunk: usize,
}

/// Times `call(i)` over `calls` invocations cycling through `instances` inputs.
///
/// The first tenth of the calls is warm-up. Cheap calls are timed in chunks
/// (about 20 us each) so the clock overhead does not dominate; the report
/// holds quantiles of the per-call time across chunks.
pub fn bench_latency<F: FnMut(usize) -> f64>(instances: usize, calls: usize, mut call: F) -> LatencyReport {
    assert!(instances > 0 && calls >= 10, "need inputs and at least 10 calls");
    let warmup = calls / 10;
    let t0 = Instant::now();
    for i in 0..warmup {
        black_box(call(black_box(i % instances)));
    }
    let est = t0.elapsed().as_secs_f64() / warmup.max(1) as f64;
    let chunk = ((20e-6 / est.max(1e-9)).ceil() as usize).clamp(1, 1000);
    let timed = calls - warmup;
    let chunks = timed.div_ceil(chunk);
    let mut per_call = Vec::with_capacity(chunks);
    let mut i = warmup;
    for _ in 0..chunks {
        let t = Instant::now();
        for _ in 0..chunk {
            black_box(call(black_box(i % instances)));
            i += 1;
        }
        per_call.push(t.elapsed().as_secs_f64() / chunk as f64);
    }
    per_call.sort_by(f64::total_cmp);
    let q = |p: f64| per_call[((per_call.len() - 1) as f64 * p).round() as usize];
    LatencyReport {
        median_s: median(&per_call),
        p10_s: q(0.1),
        p90_s: q(0.9),
        calls: chunks * chunk,
        chunk,
    }
}

/// Sampled off-track poses (the data set 3 distribution) prepared for both
/// the expert and the networks, so timing starts from ready inputs.
#[derive(Debug, Clone)]
pub struct BenchInstances {
    pub inputs: Vec<MpcInput>,
    poses: Vec<LabeledPose>,
    lib: TrajectoryLibrary,
    horizon: usize,
}

impl BenchInstances {
    pub fn sample(count: usize, seed: u64, params: &VehicleParams, cfg: &MpcConfig) -> Result<Self> {
        let spec = DatasetSpec::new(DatasetId::THREE, count, seed);
        let (poses, _, lib) = label_poses(&spec, params, cfg)?;
        let inputs = poses
            .iter()
            .map(|p| MpcInput::from_trajectory(p.state, lib.get(p.trajectory, p.mirrored), p.nearest, cfg.horizon))
            .collect();
        Ok(Self {
            inputs,
            poses,
            lib,
            horizon: cfg.horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn features(&self, kind: FeatureKind) -> Array2<f64> {
        features_for(&self.poses, &self.lib, kind, self.horizon).features
    }
}

/// Cold-start expert solve per call.
pub fn bench_mpc(inputs: &[MpcInput], cfg: &MpcConfig, params: &VehicleParams, calls: usize) -> LatencyReport {
    let mut solver = MpcSolver::new(*cfg, *params);
    bench_latency(inputs.len(), calls, |i| solver.solve(&inputs[i], None).controls.first())
}

/// One network evaluation per call on prepared feature rows.
pub fn bench_net(net: &Mlp, features: ArrayView2<f64>, calls: usize) -> LatencyReport {
    let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut scratch = ForwardScratch::default();
    bench_latency(rows.len(), calls, |i| net.forward_with(&rows[i], &mut scratch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajgen::gen_straight;

    fn fake(offsets_cm: &[f64]) -> (RolloutResult, RolloutResult) {
        let s0 = VehicleState::new(0.0, 0.0, 0.0);
        let mk = |dy: &dyn Fn(usize) -> f64| {
            let mut states = vec![s0];
            for i in 1..offsets_cm.len() {
                states.push(VehicleState::new(i as f64, dy(i), 0.0));
            }
            let n = offsets_cm.len();
            RolloutResult {
                states,
                commands: vec![0.0; n],
                indices: (0..n).collect(),
                call_times: vec![1e-6; n],
                final_state: VehicleState::new(n as f64, dy(n), 0.0),
                diverged_at: None,
            }
        };
        let a = mk(&|_| 0.0);
        let b = mk(&|i| offsets_cm[i - 1] / 100.0);
        (a, b)
    }

    #[test]
    fn metrics_examples() {
        let (a, b) = fake(&[1.0, 1.0, 1.0, 1.0]);
        let m = compute_metrics(&b, &a).unwrap();
        assert!((m.mean_cm - 1.0).abs() < 1e-12 && (m.max_cm - 1.0).abs() < 1e-12 && m.std_cm < 1e-9);

        let (a, b) = fake(&[0.0, 2.0, 0.0, 2.0]);
        let m = compute_metrics(&b, &a).unwrap();
        assert!((m.mean_cm - 1.0).abs() < 1e-12);
        assert!((m.max_cm - 2.0).abs() < 1e-12);
        assert!((m.std_cm - 1.0).abs() < 1e-12);

        let m = compute_metrics(&a, &a).unwrap();
        assert_eq!((m.mean_cm, m.max_cm, m.std_cm), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metrics_reject_length_mismatch() {
        let (a, _) = fake(&[0.0; 4]);
        let (b, _) = fake(&[0.0; 5]);
        assert!(compute_metrics(&a, &b).is_err());
    }

    #[test]
    fn zero_controller_follows_aligned_straight() {
        let p = VehicleParams::default();
        let sc = Scenario::along(gen_straight(20.0, p.spacing()).unwrap(), 20);
        let r = rollout(&mut ZeroController, &sc, &p);
        assert_eq!(r.len(), sc.steps);
        assert!(r.diverged_at.is_none());
        for (t, q) in r.path().iter().enumerate() {
            assert!(q.distance(&sc.traj.points()[t + 1]) < 1e-12);
        }
        assert!(r.indices.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn expert_stays_on_validation_straight() {
        let p = VehicleParams::default();
        let cfg = MpcConfig::default();
        let sc = Scenario::validation(&p, cfg.horizon).unwrap();
        let r = expert_rollout(&sc, &p, &cfg);
        assert!(r.diverged_at.is_none());
        // The circuit opens with a straight along +x at y = 0.
        for s in r.states.iter().take_while(|s| s.x < 5.0) {
            assert!(s.y.abs() < 1e-3, "{s:?}");
        }
        let again = expert_rollout(&sc, &p, &cfg);
        assert_eq!(r.states, again.states);
        assert_eq!(r.commands, again.commands);
    }

    #[test]
    fn circling_and_nan_controllers_diverge() {
        struct Constant(f64);
        impl Controller for Constant {
            fn control(&mut self, _: &VehicleState, _: &RefTrajectory, _: usize) -> f64 {
                self.0
            }
        }
        let p = VehicleParams::default();
        let sc = Scenario::along(gen_straight(20.0, p.spacing()).unwrap(), 20);
        // Turning circle of about 3.2 m diameter drifts out of the abort radius.
        let r = rollout(&mut Constant(0.1), &sc, &p);
        let t = r.diverged_at.expect("left the corridor");
        assert_eq!(r.len(), t + 1);
        let r = rollout(&mut Constant(f64::NAN), &sc, &p);
        assert_eq!(r.diverged_at, Some(0));
        assert!(r.is_empty());
        // Over-bound commands are clamped.
        let r = rollout(&mut Constant(1.0), &sc, &p);
        assert!(r.commands.iter().all(|d| *d == p.delta_max));
    }

    #[test]
    fn median_and_bench_shapes() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let rep = bench_latency(4, 1000, |i| i as f64 * 2.0);
        assert!(rep.median_s > 0.0 && rep.p10_s <= rep.median_s && rep.median_s <= rep.p90_s);
        assert!(rep.calls >= 900);
    }
}
