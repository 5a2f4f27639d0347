//! Deviation metrics between rollouts.

use mpc_imitation::harness::{compute_metrics, RolloutResult};
use mpc_imitation::vehicle::VehicleState;
use proptest::prelude::*;

fn rollout_from(start: VehicleState, path: &[(f64, f64)]) -> RolloutResult {
    let mut states = vec![start];
    states.extend(path[..path.len() - 1].iter().map(|&(x, y)| VehicleState::new(x, y, 0.0)));
    let last = path[path.len() - 1];
    RolloutResult {
        states,
        commands: vec![0.0; path.len()],
        indices: (0..path.len()).collect(),
        call_times: vec![1e-6; path.len()],
        final_state: VehicleState::new(last.0, last.1, 0.0),
        diverged_at: None,
    }
}

fn two_paths() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    (1usize..300).prop_flat_map(|n| {
        let pt = (-100.0..100.0f64, -100.0..100.0f64);
        (prop::collection::vec(pt.clone(), n), prop::collection::vec(pt, n))
    })
}

proptest! {
    #[test]
    fn symmetric_in_its_arguments((a, b) in two_paths()) {
        let start = VehicleState::new(1.0, 2.0, 0.3);
        let ra = rollout_from(start, &a);
        let rb = rollout_from(start, &b);
        let ab = compute_metrics(&ra, &rb).unwrap();
        let ba = compute_metrics(&rb, &ra).unwrap();
        prop_assert_eq!(ab.mean_cm, ba.mean_cm);
        prop_assert_eq!(ab.max_cm, ba.max_cm);
        prop_assert_eq!(ab.std_cm, ba.std_cm);
        prop_assert!(ab.mean_cm <= ab.max_cm && ab.std_cm >= 0.0);
    }

    #[test]
    fn zero_against_itself((a, _) in two_paths()) {
        let r = rollout_from(VehicleState::default(), &a);
        let m = compute_metrics(&r, &r).unwrap();
        prop_assert_eq!((m.mean_cm, m.max_cm, m.std_cm), (0.0, 0.0, 0.0));
    }
}
