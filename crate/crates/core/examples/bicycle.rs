//! Kinematic bicycle basics: hold full lock for one circle and compare the
//! traced radius with the geometric one, then move a point between frames.

use mpc_imitation::vehicle::{robot_to_world, step_dynamics, world_to_robot, Observation, VehicleParams, VehicleState};

fn main() -> mpc_imitation::Result<()> {
    let p = VehicleParams::default();
    let mut s = VehicleState::new(0.0, 0.0, 0.0);
    let mut path = vec![s];
    // One full turn at the steering bound.
    while s.theta < 2.0 * std::f64::consts::PI {
        s = step_dynamics(&s, p.delta_max, &p)?;
        path.push(s);
    }
    let (cx, cy) = {
        let n = path.len() as f64;
        (path.iter().map(|q| q.x).sum::<f64>() / n, path.iter().map(|q| q.y).sum::<f64>() / n)
    };
    let radius = path.iter().map(|q| (q.x - cx).hypot(q.y - cy)).sum::<f64>() / path.len() as f64;
    println!("{} steps of {:.3} m for one turn", path.len() - 1, p.spacing());
    println!("traced radius {radius:.3} m, 1 / max curvature {:.3} m", 1.0 / p.max_curvature());

    let robot = VehicleState::new(1.0, 2.0, 0.5);
    let point = Observation::new(2.0, 3.0);
    let local = world_to_robot(&robot, &point);
    let back = robot_to_world(&robot, &local);
    println!("({}, {}) in the robot frame is ({:.4}, {:.4}); back: ({:.4}, {:.4})", point.x, point.y, local.x, local.y, back.x, back.y);
    Ok(())
}
