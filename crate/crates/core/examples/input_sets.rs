//! The three robot-frame input encodings for one pose beside a sine reference.

use mpc_imitation::features::{build_features, FeatureKind};
use mpc_imitation::trajgen::{gen_sine, nearest_ref_index};
use mpc_imitation::vehicle::{VehicleParams, VehicleState};

fn main() -> mpc_imitation::Result<()> {
    let p = VehicleParams::default();
    let n = 20;
    let traj = gen_sine(1.0, 0.8, 15.0, p.spacing(), p.max_curvature())?;
    let w = traj.points()[30];
    // 20 cm to the left of the waypoint, turned 10 degrees off its heading.
    let h = traj.headings()[30];
    let s = VehicleState::new(w.x - 0.2 * h.sin(), w.y + 0.2 * h.cos(), h + 10f64.to_radians());
    let k = nearest_ref_index(&traj, &s.position(), 20, n);
    println!("nearest waypoint {k}");
    for kind in FeatureKind::ALL {
        let f = build_features(kind, &s, &traj, k, n);
        let head: Vec<String> = f.values.iter().take(6).map(|v| format!("{v:+.3}")).collect();
        println!("{kind} ({} values): {} ...", f.values.len(), head.join(" "));
    }
    Ok(())
}
