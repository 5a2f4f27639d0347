//! Supervised imitation end to end: label poses, train the headline
//! 3 x 10 sigmoid network on I40 features, then drive the validation circuit
//! with it and measure the deviation from the expert's own run.
//!
//! `cargo run --release --example imitation -- [samples]`

use mpc_imitation::dataset::{build_datasets, DatasetSpec};
use mpc_imitation::features::FeatureKind;
use mpc_imitation::harness::{expert_rollout, metrics_or_diverged, rollout, NetController, Scenario};
use mpc_imitation::mpc::MpcConfig;
use mpc_imitation::sl::{train_supervised, Architecture, TrainConfig};
use mpc_imitation::trajgen::DatasetId;
use mpc_imitation::vehicle::VehicleParams;

fn main() -> mpc_imitation::Result<()> {
    let samples: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10_000);
    let p = VehicleParams::default();
    let cfg = MpcConfig::default();
    let arch = Architecture::headline();

    let (sets, _, _) = build_datasets(&DatasetSpec::new(DatasetId::THREE, samples, 1), &[arch.input], &p, &cfg)?;
    let (net, report) = train_supervised(&sets[0], &arch, &TrainConfig::default(), p.delta_max, cfg.horizon)?;
    println!(
        "{arch}: validation MSE {:.3e} -> {:.3e} rad^2 (best epoch {})",
        report.initial_val_loss, report.best_val_loss, report.best_epoch
    );

    let sc = Scenario::validation(&p, cfg.horizon)?;
    let expert = expert_rollout(&sc, &p, &cfg);
    let mut ctl = NetController::new(net, FeatureKind::I40, cfg.horizon)?;
    let run = rollout(&mut ctl, &sc, &p);
    let m = metrics_or_diverged(&run, &expert)?;
    println!(
        "deviation from the expert: mean {:.3} cm, max {:.3} cm, std {:.3} cm; {:.2} us per call",
        m.mean_cm,
        m.max_cm,
        m.std_cm,
        m.latency_s * 1e6
    );
    Ok(())
}
