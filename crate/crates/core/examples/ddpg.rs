//! DDPG from scratch: a 400/300 actor learns to follow the training
//! references from the tracking reward alone, then drives the validation
//! circuit. A few thousand steps show the learning curve turn; tens of
//! thousands are needed for a lap.
//!
//! `cargo run --release --example ddpg -- [env steps] [seed]`

use mpc_imitation::features::FeatureKind;
use mpc_imitation::harness::{expert_rollout, metrics_or_diverged, rollout, NetController, Scenario};
use mpc_imitation::mpc::MpcConfig;
use mpc_imitation::rl::{train_ddpg_with, DdpgConfig};
use mpc_imitation::vehicle::VehicleParams;

fn main() -> mpc_imitation::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(5_000);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    let p = VehicleParams::default();
    let cfg = DdpgConfig {
        max_steps: Some(steps),
        seed,
        ..DdpgConfig::default()
    };
    let (actor, report) = train_ddpg_with(&cfg, &p, |e| {
        if e.episode % 10 == 0 {
            println!("episode {:>4}: return {:>8.2}, {} steps, critic loss {:.2e}", e.episode, e.ret, e.steps, e.critic_loss);
        }
    })?;
    if let Some((first, last)) = report.decile_returns(20) {
        println!("smoothed return, first vs last tenth: {first:.2} -> {last:.2}");
    }
    println!("best checkpoint: episode {} (evaluation return {:.2})", report.best_episode, report.best_eval_return);

    let mpc = MpcConfig::default();
    let sc = Scenario::validation(&p, mpc.horizon)?;
    let expert = expert_rollout(&sc, &p, &mpc);
    let mut ctl = NetController::new(actor, FeatureKind::I40, mpc.horizon)?;
    let run = rollout(&mut ctl, &sc, &p);
    match run.diverged_at {
        Some(k) => println!("left the circuit at step {k} of {}", sc.steps),
        None => {
            let m = metrics_or_diverged(&run, &expert)?;
            println!("completed: mean {:.2} cm, max {:.2} cm from the expert", m.mean_cm, m.max_cm);
        }
    }
    Ok(())
}
