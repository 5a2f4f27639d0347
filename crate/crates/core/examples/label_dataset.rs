//! MPC-labelled training data: sample perturbed poses along the data set 3
//! references, solve the expert at each, encode as I40 and write a CSV.
//!
//! `cargo run --release --example label_dataset -- [samples] [out.csv]`

use mpc_imitation::dataset::{build_datasets, DatasetSpec};
use mpc_imitation::features::FeatureKind;
use mpc_imitation::mpc::MpcConfig;
use mpc_imitation::trajgen::DatasetId;
use mpc_imitation::vehicle::VehicleParams;
use std::path::PathBuf;

fn main() -> mpc_imitation::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2_000);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ds3_i40.csv"));

    let p = VehicleParams::default();
    let cfg = MpcConfig::default();
    let spec = DatasetSpec::new(DatasetId::THREE, samples, 7);
    let t = std::time::Instant::now();
    let (sets, report, _) = build_datasets(&spec, &[FeatureKind::I40], &p, &cfg)?;
    println!("labelled {} poses in {:.1?} ({} redrawn after solver failures)", report.samples, t.elapsed(), report.skipped);
    for (kind, count) in &report.per_kind {
        println!("  {kind:?}: {count}");
    }
    println!(
        "labels: mean {:+.4}, std {:.4}, range [{:+.4}, {:+.4}] rad",
        report.label_mean, report.label_std, report.label_min, report.label_max
    );
    sets[0].write_csv(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
