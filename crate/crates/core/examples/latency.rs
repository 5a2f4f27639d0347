//! Per-call latency of the expert (cold solves) against an untrained 3 x 10
//! network and a 400/300 actor on the same sampled poses. Network latency
//! depends on shape only, so no training is needed.

use mpc_imitation::features::FeatureKind;
use mpc_imitation::harness::{bench_mpc, bench_net, BenchInstances};
use mpc_imitation::mpc::MpcConfig;
use mpc_imitation::rl::{DdpgAgent, DdpgConfig};
use mpc_imitation::sl::Architecture;
use mpc_imitation::vehicle::VehicleParams;

fn main() -> mpc_imitation::Result<()> {
    let p = VehicleParams::default();
    let cfg = MpcConfig::default();
    let inst = BenchInstances::sample(200, 0, &p, &cfg)?;
    let feats = inst.features(FeatureKind::I40);

    let mpc = bench_mpc(&inst.inputs, &cfg, &p, 2_000);
    let small = Architecture::headline().init(cfg.horizon, p.delta_max, 0)?;
    let net = bench_net(&small, feats.view(), 200_000);
    let actor = DdpgAgent::new(&DdpgConfig::default(), &p)?.actor;
    let act = bench_net(&actor, feats.view(), 50_000);

    for (name, r) in [("MPC expert", mpc), ("3 x 10 net", net), ("400/300 actor", act)] {
        println!(
            "{name:<14} median {:>9.3} us  (p10 {:.3}, p90 {:.3})",
            r.median_s * 1e6,
            r.p10_s * 1e6,
            r.p90_s * 1e6
        );
    }
    println!("expert / net: {:.0}x", mpc.median_s / net.median_s);
    Ok(())
}
