//! File-in, file-out recipes behind the CLI commands.
//!
//! Each recipe takes a resolved [`ExperimentConfig`], writes its artifacts
//! atomically, drops `config.json` next to them and returns a summary for
//! the caller to print.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{features_for, label_poses, write_provenance_csv, Dataset, LabelReport};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::harness::{
    bench_mpc, bench_net, expert_rollout, metrics_or_diverged, rollout, BenchInstances, LatencyReport, Metrics,
    NetController, Scenario,
};
use crate::nn::{self, Mlp};
use crate::rl::{train_ddpg, DdpgReport};
use crate::sl::{run_sweep, train_supervised, write_sweep_csv, EvalContext, SweepData, SweepRow, SweepSpec, TrainReport};
use crate::trajgen::{validation_circuit, Track};

/// Solver failures above this fraction of attempted poses abort data generation.
pub const MAX_FAILURE_RATE: f64 = 0.01;

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_owned(),
        _ => PathBuf::from("."),
    }
}

/// `<stem>.<suffix>` beside `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parent_dir(path).join(format!("{stem}.{suffix}"))
}

/// Labels `cfg.dataset`, encodes it as `kind` and writes the CSV plus a
/// `<stem>.provenance.csv` sidecar naming each row's source trajectory.
pub fn gen_data(cfg: &ExperimentConfig, kind: FeatureKind, out: &Path) -> Result<LabelReport> {
    cfg.validate()?;
    let (poses, report, lib) = label_poses(&cfg.dataset, &cfg.vehicle, &cfg.mpc)?;
    let rate = report.failure_rate();
    if rate > MAX_FAILURE_RATE {
        return Err(Error::SolverFailureRate {
            rate,
            allowed: MAX_FAILURE_RATE,
        });
    }
    features_for(&poses, &lib, kind, cfg.mpc.horizon).write_csv(out)?;
    write_provenance_csv(&sibling(out, "provenance.csv"), &poses)?;
    cfg.write_resolved(&parent_dir(out))?;
    Ok(report)
}

/// Trains `cfg.architecture` on a data set file. The input kind follows the file.
pub fn train_sl(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    let data = Dataset::read_csv(data)?;
    let mut cfg = cfg.clone();
    cfg.architecture.input = data.kind;
    let (net, report) = train_supervised(
        &data,
        &cfg.architecture,
        &cfg.train,
        cfg.vehicle.delta_max,
        cfg.mpc.horizon,
    )?;
    nn::save(&net, out)?;
    report.write_csv(&sibling(out, "curve.csv"))?;
    cfg.write_resolved(&parent_dir(out))?;
    Ok((net, report))
}

/// Runs DDPG and writes the actor, `<stem>.curve.csv` and `<stem>.report.json`.
pub fn train_rl(cfg: &ExperimentConfig, out: &Path) -> Result<(Mlp, DdpgReport)> {
    cfg.validate()?;
    let (actor, report) = train_ddpg(&cfg.ddpg, &cfg.vehicle)?;
    nn::save(&actor, out)?;
    report.write_curve_csv(&sibling(out, "curve.csv"))?;
    crate::io::write_json(&sibling(out, "report.json"), &report)?;
    cfg.write_resolved(&parent_dir(out))?;
    Ok((actor, report))
}

/// Input encoding implied by a network's input width.
pub fn infer_feature_kind(net: &Mlp, horizon: usize) -> Result<FeatureKind> {
    FeatureKind::ALL
        .into_iter()
        .find(|k| k.dim(horizon) == net.input_dim())
        .ok_or_else(|| {
            Error::ModelFormat(format!(
                "input width {} matches no feature set at horizon {horizon}",
                net.input_dim()
            ))
        })
}

pub fn load_track(cfg: &ExperimentConfig) -> Result<Track> {
    match &cfg.track {
        Some(p) => Track::read_csv(p),
        None => Ok(validation_circuit()),
    }
}

pub fn scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    Scenario::from_track(&load_track(cfg)?, cfg.laps, &cfg.vehicle, cfg.mpc.horizon)
}

/// What `eval` wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metrics: Metrics,
    pub steps: usize,
    pub diverged_at: Option<usize>,
}

/// Rolls out the expert and `model` (the expert again when `None`) on the
/// configured track. Writes `expert.csv`, `model.csv`, `reference.csv` and
/// `metrics.json` into `out_dir`.
pub fn eval(cfg: &ExperimentConfig, model: Option<&Path>, out_dir: &Path) -> Result<EvalSummary> {
    cfg.validate()?;
    let sc = scenario(cfg)?;
    let expert = expert_rollout(&sc, &cfg.vehicle, &cfg.mpc);
    let test = match model {
        Some(path) => {
            let net = nn::load(path)?;
            let kind = infer_feature_kind(&net, cfg.mpc.horizon)?;
            let mut ctl = NetController::new(net, kind, cfg.mpc.horizon)?;
            rollout(&mut ctl, &sc, &cfg.vehicle)
        }
        None => expert.clone(),
    };
    let metrics = metrics_or_diverged(&test, &expert)?;
    expert.write_csv(&out_dir.join("expert.csv"))?;
    test.write_csv(&out_dir.join("model.csv"))?;
    crate::trajgen::write_track_csv(&out_dir.join("reference.csv"), sc.traj.points())?;
    crate::io::write_json(&out_dir.join("metrics.json"), &metrics)?;
    cfg.write_resolved(out_dir)?;
    Ok(EvalSummary {
        metrics,
        steps: test.len(),
        diverged_at: test.diverged_at,
    })
}

/// Fixed schema of `latency.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    /// `"expert"` or the model file name.
    pub controller: String,
    pub instances: usize,
    pub latency: LatencyReport,
}

/// Times the expert (cold solves) or a network on sampled off-track poses.
pub fn bench(cfg: &ExperimentConfig, model: Option<&Path>, out_dir: &Path) -> Result<BenchSummary> {
    cfg.validate()?;
    let inst = BenchInstances::sample(
        cfg.bench_instances,
        crate::rng::derive_seed(cfg.seed, "bench"),
        &cfg.vehicle,
        &cfg.mpc,
    )?;
    let (controller, latency) = match model {
        Some(path) => {
            let net = nn::load(path)?;
            let kind = infer_feature_kind(&net, cfg.mpc.horizon)?;
            let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (name, bench_net(&net, inst.features(kind).view(), cfg.bench_calls))
        }
        None => (
            "expert".to_owned(),
            bench_mpc(&inst.inputs, &cfg.mpc, &cfg.vehicle, cfg.bench_calls),
        ),
    };
    let summary = BenchSummary {
        controller,
        instances: inst.len(),
        latency,
    };
    crate::io::write_json(&out_dir.join("latency.json"), &summary)?;
    cfg.write_resolved(out_dir)?;
    Ok(summary)
}

/// Labels every data set the spec names (once each, at `cfg.dataset`'s size
/// and seed) in every input encoding it names.
pub fn sweep_data(cfg: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepData> {
    let mut data = BTreeMap::new();
    let mut ids = spec.dataset_ids.clone();
    ids.sort();
    ids.dedup();
    for id in ids {
        let ds_spec = crate::dataset::DatasetSpec { id, ..cfg.dataset };
        let (poses, report, lib) = label_poses(&ds_spec, &cfg.vehicle, &cfg.mpc)?;
        if report.failure_rate() > MAX_FAILURE_RATE {
            return Err(Error::SolverFailureRate {
                rate: report.failure_rate(),
                allowed: MAX_FAILURE_RATE,
            });
        }
        for &kind in &spec.input_kinds {
            data.insert((id, kind), features_for(&poses, &lib, kind, cfg.mpc.horizon));
        }
    }
    Ok(data)
}

pub fn load_sweep_spec(path: &Path) -> Result<SweepSpec> {
    let spec: SweepSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    spec.validate()?;
    Ok(spec)
}

/// Runs every cell of `spec` and writes `sweep.csv` into `out_dir`.
pub fn sweep(cfg: &ExperimentConfig, spec: &SweepSpec, out_dir: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    spec.validate()?;
    let data = sweep_data(cfg, spec)?;
    let sc = scenario(cfg)?;
    let expert = expert_rollout(&sc, &cfg.vehicle, &cfg.mpc);
    let ctx = EvalContext {
        params: cfg.vehicle,
        scenario: sc,
        expert,
    };
    let rows = run_sweep(spec, &data, &cfg.train, &ctx)?;
    write_sweep_csv(&out_dir.join("sweep.csv"), &rows)?;
    crate::io::write_json(&out_dir.join("spec.json"), spec)?;
    cfg.write_resolved(out_dir)?;
    Ok(rows)
}
