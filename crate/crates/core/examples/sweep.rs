//! A small architecture sweep: the three input sets at one hidden layer of
//! 20 ReLU units, each trained on the same labelled poses and scored in
//! closed loop.

use mpc_imitation::dataset::{build_datasets, DatasetSpec};
use mpc_imitation::features::FeatureKind;
use mpc_imitation::harness::{expert_rollout, Scenario};
use mpc_imitation::mpc::MpcConfig;
use mpc_imitation::nn::Activation;
use mpc_imitation::sl::{run_sweep, EvalContext, SweepData, SweepSpec, TrainConfig};
use mpc_imitation::trajgen::DatasetId;
use mpc_imitation::vehicle::VehicleParams;

fn main() -> mpc_imitation::Result<()> {
    let p = VehicleParams::default();
    let cfg = MpcConfig::default();
    let spec = SweepSpec {
        input_kinds: FeatureKind::ALL.to_vec(),
        hidden_layer_counts: vec![1],
        widths: vec![20],
        activations: vec![Activation::Relu],
        dataset_ids: vec![DatasetId::THREE],
        seeds: vec![0, 1],
    };
    let mut data = SweepData::new();
    let (sets, _, _) = build_datasets(&DatasetSpec::new(DatasetId::THREE, 10_000, 1), &FeatureKind::ALL, &p, &cfg)?;
    for s in sets {
        data.insert((DatasetId::THREE, s.kind), s);
    }
    let sc = Scenario::validation(&p, cfg.horizon)?;
    let ctx = EvalContext {
        expert: expert_rollout(&sc, &p, &cfg),
        params: p,
        scenario: sc,
    };
    println!("{:<24} {:>4} {:>10} {:>9} {:>9}", "architecture", "seed", "mse", "mean cm", "max cm");
    for r in run_sweep(&spec, &data, &TrainConfig::default(), &ctx)? {
        println!(
            "{:<24} {:>4} {:>10.2e} {:>9.3} {:>9.3}",
            r.arch.to_string(),
            r.seed,
            r.mse,
            r.metrics.mean_cm,
            r.metrics.max_cm
        );
    }
    Ok(())
}
