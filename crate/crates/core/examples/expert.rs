//! The MPC expert driving two laps of the bundled validation circuit.

use mpc_imitation::harness::{expert_rollout, median, Scenario};
use mpc_imitation::mpc::MpcConfig;
use mpc_imitation::vehicle::VehicleParams;

fn main() -> mpc_imitation::Result<()> {
    let p = VehicleParams::default();
    let cfg = MpcConfig::default();
    let sc = Scenario::validation(&p, cfg.horizon)?;
    let run = expert_rollout(&sc, &p, &cfg);

    // Distance from each pose to the reference waypoint it was matched to. The
    // circuit is drivable exactly at this speed and spacing, so the expert sits
    // on it up to rounding.
    let offsets: Vec<f64> = run
        .states
        .iter()
        .zip(&run.indices)
        .map(|(s, &k)| s.position().distance(&sc.traj.points()[k]))
        .collect();
    let worst = offsets.iter().copied().fold(0.0, f64::max);
    println!("{} steps, diverged: {:?}", run.len(), run.diverged_at);
    println!("distance to the matched waypoint: median {:.1e} m, max {worst:.1e} m", median(&offsets));
    println!("median warm-started solve {:.1} us", median(&run.call_times) * 1e6);
    let saturated = run.commands.iter().filter(|d| d.abs() >= p.delta_max - 1e-9).count();
    println!("steps at the steering bound: {saturated}");
    Ok(())
}
