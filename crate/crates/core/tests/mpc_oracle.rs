//! The expert against exhaustive grid search on short horizons, and its
//! gradient against central differences.

use mpc_imitation::mpc::{grid_oracle, mpc_cost, mpc_cost_gradient, mpc_solve, ControlSequence, MpcConfig, MpcInput};
use mpc_imitation::rng::seeded;
use mpc_imitation::trajgen::{gen_sine, nearest_ref_index, sample_initial_pose, PoseRanges, RefTrajectory};
use mpc_imitation::vehicle::VehicleParams;
use rand::Rng;

fn reference(params: &VehicleParams) -> RefTrajectory {
    gen_sine(1.0, 1.0, 20.0, params.spacing(), params.max_curvature()).unwrap()
}

fn instance<R: Rng>(traj: &RefTrajectory, n: usize, rng: &mut R) -> MpcInput {
    let pose = sample_initial_pose(traj, &PoseRanges::default(), n, rng);
    let k = nearest_ref_index(traj, &pose.state.position(), pose.anchor.saturating_sub(10), n);
    MpcInput::from_trajectory(pose.state, traj, k, n)
}

#[test]
fn solver_is_no_worse_than_the_41_level_grid() {
    let p = VehicleParams::default();
    let traj = reference(&p);
    let mut rng = seeded(2024);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_first = 0.0f64;
    for i in 0..100 {
        let n = 2 + i % 2;
        let input = instance(&traj, n, &mut rng);
        let cfg = MpcConfig {
            horizon: n,
            ..MpcConfig::default()
        };
        let sol = mpc_solve(&input, &cfg, &p, None);
        let grid = grid_oracle(&input, &p, p.delta_max, 41).unwrap();
        let c_sol = mpc_cost(&input, &sol.controls, &p);
        let c_grid = mpc_cost(&input, &grid, &p);
        assert!(sol.controls.0.iter().all(|u| u.abs() <= p.delta_max));
        assert!(c_sol <= c_grid + 1e-6, "instance {i}: solver {c_sol} > grid {c_grid}");
        let d_first = (sol.controls.first() - grid.first()).abs();
        assert!(d_first <= 0.02, "instance {i}: first controls {} vs {}", sol.controls.first(), grid.first());
        worst_gap = worst_gap.max(c_sol - c_grid);
        worst_first = worst_first.max(d_first);
    }
    println!("largest cost excess over grid {worst_gap:e}, largest first-control gap {worst_first:.4} rad");
}

#[test]
fn adjoint_gradient_matches_central_differences_at_random_points() {
    let p = VehicleParams::default();
    let traj = reference(&p);
    let mut rng = seeded(77);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let input = instance(&traj, 20, &mut rng);
        let u = ControlSequence((0..20).map(|_| rng.random_range(-p.delta_max..p.delta_max)).collect());
        let (_, g) = mpc_cost_gradient(&input, &u, &p);
        let fd: Vec<f64> = (0..20)
            .map(|i| {
                let mut up = u.clone();
                up.0[i] += h;
                let mut um = u.clone();
                um.0[i] -= h;
                (mpc_cost(&input, &up, &p) - mpc_cost(&input, &um, &p)) / (2.0 * h)
            })
            .collect();
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(num / den);
    }
    assert!(worst < 1e-6, "relative gradient error {worst:e}");
}
