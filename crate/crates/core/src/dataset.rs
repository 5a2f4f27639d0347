//! MPC-labelled training sets and their CSV form.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fill_features, FeatureKind, FeatureVector};
use crate::mpc::{MpcConfig, MpcInput, MpcSolver};
use crate::trajgen::{
    nearest_ref_index, sample_initial_pose, DatasetId, GeneratorConfig, PoseRanges, TrajectoryKind, TrajectoryLibrary,
    SEARCH_WINDOW,
};
use crate::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: DatasetId,
    pub samples_per_set: usize,
    pub rng_seed: u64,
    pub ranges: PoseRanges,
    pub generator: GeneratorConfig,
}

impl DatasetSpec {
    pub fn new(id: DatasetId, samples_per_set: usize, rng_seed: u64) -> Self {
        Self {
            id,
            samples_per_set,
            rng_seed,
            ranges: PoseRanges::default(),
            generator: GeneratorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_set == 0 {
            return Err(Error::invalid("samples_per_set must be positive"));
        }
        if !(self.ranges.lateral >= 0.0) || !(self.ranges.heading >= 0.0) {
            return Err(Error::invalid("perturbation ranges must be non-negative half-widths"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: f64,
}

/// Feature matrix (one row per sample) with the expert's steering labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: FeatureKind,
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
}

impl Dataset {
    pub fn from_samples(kind: FeatureKind, samples: &[Sample]) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.features.values.len());
        let mut features = Array2::zeros((samples.len(), dim));
        for (mut row, s) in features.rows_mut().into_iter().zip(samples) {
            if s.features.values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.values.len(),
                });
            }
            row.assign(&ndarray::ArrayView1::from(&s.features.values));
        }
        Ok(Self {
            kind,
            features,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            features: FeatureVector {
                kind: self.kind,
                values: self.features.row(i).to_vec(),
            },
            label: self.labels[i],
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            kind: self.kind,
            features: self.features.select(Axis(0), rows),
            labels: self.labels.select(Axis(0), rows),
        }
    }

    /// Header `f0,...,f{d-1},label`, 17 significant digits, LF endings.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomically(path, |w| {
            let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
            let mut header: Vec<String> = (0..self.dim()).map(|i| format!("f{i}")).collect();
            header.push("label".into());
            wtr.write_record(&header)?;
            let mut rec = Vec::with_capacity(self.dim() + 1);
            for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
                rec.clear();
                rec.extend(row.iter().map(|x| crate::io::fmt_f64(*x)));
                rec.push(crate::io::fmt_f64(*label));
                wtr.write_record(&rec)?;
            }
            wtr.flush()?;
            Ok(())
        })
    }

    /// Reads a data set CSV; the input set is inferred from the column count
    /// assuming the default horizon of 20.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::DataFormat {
            path: path.to_owned(),
            reason,
        };
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let d = headers.len().checked_sub(1).ok_or_else(|| bad("empty header".into()))?;
        let header_ok = headers.iter().take(d).enumerate().all(|(i, h)| h == format!("f{i}"))
            && headers.get(d) == Some("label");
        if !header_ok {
            return Err(bad("expected header `f0,...,f{d-1},label`".into()));
        }
        let kind = match d {
            3 => FeatureKind::I3,
            21 => FeatureKind::I21,
            40 => FeatureKind::I40,
            other => return Err(bad(format!("{other} feature columns match no input set"))),
        };
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(bad(format!("row with {} fields", rec.len())));
            }
            for (i, field) in rec.iter().enumerate() {
                let x: f64 = field.trim().parse().map_err(|_| bad(format!("bad number `{field}`")))?;
                if i < d {
                    values.push(x);
                } else {
                    labels.push(x);
                }
            }
        }
        let n = labels.len();
        Ok(Self {
            kind,
            features: Array2::from_shape_vec((n, d), values).map_err(|e| bad(e.to_string()))?,
            labels: Array1::from(labels),
        })
    }
}

/// Where a labelled pose came from; enough to rebuild any input set for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPose {
    pub trajectory: TrajectoryKind,
    pub mirrored: bool,
    pub anchor: usize,
    pub nearest: usize,
    pub state: VehicleState,
    pub label: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub samples: usize,
    /// Poses discarded because the solver did not converge; each was redrawn.
    pub skipped: usize,
    pub per_kind: Vec<(TrajectoryKind, usize)>,
    pub label_mean: f64,
    pub label_std: f64,
    pub label_min: f64,
    pub label_max: f64,
}

impl LabelReport {
    pub fn failure_rate(&self) -> f64 {
        self.skipped as f64 / (self.samples + self.skipped).max(1) as f64
    }
}

const MAX_REDRAWS: usize = 1000;

/// Samples poses on the set's trajectory kinds and labels each with the MPC's first control.
///
/// Sample `i` draws from its own random stream, so the result does not
/// depend on how the work is scheduled.
pub fn label_poses(
    spec: &DatasetSpec,
    params: &VehicleParams,
    cfg: &MpcConfig,
) -> Result<(Vec<LabeledPose>, LabelReport, TrajectoryLibrary)> {
    spec.validate()?;
    params.validate()?;
    cfg.validate()?;
    let lib = TrajectoryLibrary::new(params, &spec.generator)?;
    let kinds = spec.id.kinds();
    let horizon = cfg.horizon;
    let labelled: Vec<Result<(LabeledPose, usize)>> = (0..spec.samples_per_set)
        .into_par_iter()
        .map_init(
            || MpcSolver::new(*cfg, *params),
            |solver, i| {
                let mut rng = crate::rng::child(spec.rng_seed, i as u64);
                for skipped in 0..MAX_REDRAWS {
                    let kind = kinds[rng.random_range(0..kinds.len())];
                    let mirrored = rng.random_bool(0.5);
                    let traj = lib.get(kind, mirrored);
                    let pose = sample_initial_pose(traj, &spec.ranges, horizon, &mut rng);
                    let k = nearest_ref_index(
                        traj,
                        &pose.state.position(),
                        pose.anchor.saturating_sub(SEARCH_WINDOW / 2),
                        horizon,
                    );
                    let input = MpcInput::from_trajectory(pose.state, traj, k, horizon);
                    let sol = solver.solve(&input, None);
                    if sol.status.is_converged() {
                        return Ok((
                            LabeledPose {
                                trajectory: kind,
                                mirrored,
                                anchor: pose.anchor,
                                nearest: k,
                                state: pose.state,
                                label: sol.controls.first(),
                            },
                            skipped,
                        ));
                    }
                }
                Err(Error::SolverFailureRate {
                    rate: 1.0,
                    allowed: 0.01,
                })
            },
        )
        .collect();

    let mut poses = Vec::with_capacity(spec.samples_per_set);
    let mut skipped = 0;
    for r in labelled {
        let (p, s) = r?;
        poses.push(p);
        skipped += s;
    }
    let report = summarize(&poses, skipped);
    Ok((poses, report, lib))
}

fn summarize(poses: &[LabeledPose], skipped: usize) -> LabelReport {
    let n = poses.len().max(1) as f64;
    let mean = poses.iter().map(|p| p.label).sum::<f64>() / n;
    let var = poses.iter().map(|p| (p.label - mean).powi(2)).sum::<f64>() / n;
    let per_kind = TrajectoryKind::ALL
        .iter()
        .map(|k| (*k, poses.iter().filter(|p| p.trajectory == *k).count()))
        .filter(|(_, c)| *c > 0)
        .collect();
    LabelReport {
        samples: poses.len(),
        skipped,
        per_kind,
        label_mean: mean,
        label_std: var.sqrt(),
        label_min: poses.iter().map(|p| p.label).fold(f64::INFINITY, f64::min),
        label_max: poses.iter().map(|p| p.label).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Builds the input set `kind` for already labelled poses.
pub fn features_for(poses: &[LabeledPose], lib: &TrajectoryLibrary, kind: FeatureKind, horizon: usize) -> Dataset {
    let dim = kind.dim(horizon);
    let mut features = Array2::zeros((poses.len(), dim));
    let mut buf = Vec::with_capacity(dim);
    for (mut row, p) in features.rows_mut().into_iter().zip(poses) {
        let traj = lib.get(p.trajectory, p.mirrored);
        fill_features(kind, &p.state, traj, p.nearest, horizon, &mut buf);
        row.assign(&ndarray::ArrayView1::from(&buf));
    }
    Dataset {
        kind,
        features,
        labels: poses.iter().map(|p| p.label).collect(),
    }
}

/// Labels one set and returns it in each requested input encoding.
pub fn build_datasets(
    spec: &DatasetSpec,
    kinds: &[FeatureKind],
    params: &VehicleParams,
    cfg: &MpcConfig,
) -> Result<(Vec<Dataset>, LabelReport, Vec<LabeledPose>)> {
    let (poses, report, lib) = label_poses(spec, params, cfg)?;
    let sets = kinds.iter().map(|k| features_for(&poses, &lib, *k, cfg.horizon)).collect();
    Ok((sets, report, poses))
}

pub fn build_dataset(
    spec: &DatasetSpec,
    kind: FeatureKind,
    params: &VehicleParams,
    cfg: &MpcConfig,
) -> Result<(Dataset, LabelReport)> {
    let (mut sets, report, _) = build_datasets(spec, &[kind], params, cfg)?;
    Ok((sets.remove(0), report))
}

/// Sidecar `row,trajectory,mirrored,anchor,nearest` listing the source of every row.
pub fn write_provenance_csv(path: &Path, poses: &[LabeledPose]) -> Result<()> {
    crate::io::write_atomically(path, |w| {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wtr.write_record(["row", "trajectory", "mirrored", "anchor", "nearest"])?;
        for (i, p) in poses.iter().enumerate() {
            wtr.write_record([
                i.to_string(),
                p.trajectory.name().to_string(),
                p.mirrored.to_string(),
                p.anchor.to_string(),
                p.nearest.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })
}
