//! Supervised imitation of the expert and the architecture sweeps.
//!
//! Inputs are standardized with training-split statistics while fitting;
//! the affine map is folded into the first layer afterwards, so the
//! returned network consumes raw features.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::harness::{metrics_or_diverged, rollout, Metrics, NetController, RolloutResult, Scenario};
use crate::nn::{init_glorot, Activation, AdamState, Mlp};
use crate::rng::{derive_seed, seeded};
use crate::trajgen::DatasetId;
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub input: FeatureKind,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
}

impl Architecture {
    /// I40 input, three sigmoid layers of ten units.
    pub fn headline() -> Self {
        Self {
            input: FeatureKind::I40,
            hidden_layers: 3,
            width: 10,
            activation: Activation::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::invalid("architecture needs at least one hidden unit"));
        }
        if !matches!(self.activation, Activation::Relu | Activation::Tanh | Activation::Sigmoid) {
            return Err(Error::invalid(format!("{} is not a hidden activation", self.activation)));
        }
        Ok(())
    }

    pub fn dims(&self, horizon: usize) -> Vec<usize> {
        let mut d = vec![self.input.dim(horizon)];
        d.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        d.push(1);
        d
    }

    pub fn init(&self, horizon: usize, output_scale: f64, seed: u64) -> Result<Mlp> {
        self.validate()?;
        init_glorot(
            &self.dims(horizon),
            &vec![self.activation; self.hidden_layers],
            output_scale,
            seed,
        )
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}x{}-{}", self.input, self.hidden_layers, self.width, self.activation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            early_stop_patience: 20,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::invalid("epochs, batch size and patience must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::invalid("validation fraction must lie in (0, 0.5]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    /// 0 when no epoch improved on the initial network.
    pub best_epoch: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use crate::io::fmt_f64;
        crate::io::write_atomically(path, |w| {
            writeln!(w, "epoch,train_loss,val_loss")?;
            for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
                writeln!(w, "{},{},{}", i + 1, fmt_f64(*t), fmt_f64(*v))?;
            }
            Ok(())
        })
    }
}

/// Per-column mean and scale; constant columns keep scale 1.
fn column_stats(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    (mean, std)
}

fn standardize(x: &Array2<f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    (x - &mean.view().insert_axis(Axis(0))) / &std.view().insert_axis(Axis(0))
}

/// Rewrites the first layer so the net applied to raw `x` equals the net
/// applied to `(x - mean) / std`.
fn fold_standardization(net: &mut Mlp, mean: &Array1<f64>, std: &Array1<f64>) {
    let first = &mut net.layers_mut()[0];
    for (j, (m, s)) in mean.iter().zip(std).enumerate() {
        let mut col = first.weights.column_mut(j);
        col.mapv_inplace(|w| w / s);
        let shift = col.mapv(|w| w * m);
        first.biases -= &shift;
    }
}

/// Fits `arch` to `data` with Adam on the mean squared error and returns the
/// parameters with the lowest validation loss (the initial net included).
pub fn train_supervised(
    data: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    output_scale: f64,
    horizon: usize,
) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    arch.validate()?;
    if data.kind != arch.input {
        return Err(Error::invalid(format!(
            "data set holds {} features but the architecture expects {}",
            data.kind, arch.input
        )));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty data set"));
    }
    let n = data.len();
    let mut rng = seeded(derive_seed(cfg.seed, "split"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).min(n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    // Too little data to hold anything out: validate on the training rows.
    let val_idx = if val_idx.is_empty() { train_idx } else { val_idx };

    let x_train_raw = data.features.select(Axis(0), train_idx);
    let (mean, std) = column_stats(&x_train_raw);
    let x_train = standardize(&x_train_raw, &mean, &std);
    let y_train = data.labels.select(Axis(0), train_idx);
    let x_val = standardize(&data.features.select(Axis(0), val_idx), &mean, &std);
    let y_val = data.labels.select(Axis(0), val_idx);

    let mut net = arch.init(horizon, output_scale, derive_seed(cfg.seed, "init"))?;
    let mut adam = AdamState::new(net.layers(), cfg.learning_rate);
    let initial_val = net.loss_mse(x_val.view(), y_val.view());
    let mut report = TrainReport {
        initial_val_loss: initial_val,
        best_val_loss: initial_val,
        train_samples: train_idx.len(),
        val_samples: val_idx.len(),
        ..Default::default()
    };
    let mut best = net.clone();
    let mut stale = 0;
    let mut batch_order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 1..=cfg.epochs {
        batch_order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in batch_order.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let yb = y_train.select(Axis(0), chunk);
            let (loss, grads) = net.backward(xb.view(), yb.view());
            if !loss.is_finite() || !grads.norm().is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite training loss {loss}"),
                });
            }
            adam.step(net.layers_mut(), &grads);
            loss_sum += loss;
            batches += 1;
        }
        let val = net.loss_mse(x_val.view(), y_val.view());
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("non-finite validation loss {val}"),
            });
        }
        report.train_loss.push(loss_sum / batches as f64);
        report.val_loss.push(val);
        if val < report.best_val_loss {
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best.clone_from(&net);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    fold_standardization(&mut best, &mean, &std);
    Ok((best, report))
}

/// Grid of architectures, data sets and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub input_kinds: Vec<FeatureKind>,
    pub hidden_layer_counts: Vec<usize>,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dataset_ids: Vec<DatasetId>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_kinds.is_empty()
            || self.hidden_layer_counts.is_empty()
            || self.widths.is_empty()
            || self.activations.is_empty()
            || self.dataset_ids.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::invalid("every sweep axis needs at least one value"));
        }
        if self.hidden_layer_counts.iter().any(|l| !(1..=3).contains(l)) {
            return Err(Error::invalid("hidden layer counts must be 1, 2 or 3"));
        }
        for a in &self.activations {
            if !matches!(a, Activation::Relu | Activation::Tanh | Activation::Sigmoid) {
                return Err(Error::invalid(format!("{a} is not a sweep activation")));
            }
        }
        Ok(())
    }

    /// Every cell in a fixed order: input, layers, width, activation, data set, seed.
    pub fn cells(&self) -> Vec<(Architecture, DatasetId, u64)> {
        let mut out = Vec::new();
        for &input in &self.input_kinds {
            for &hidden_layers in &self.hidden_layer_counts {
                for &width in &self.widths {
                    for &activation in &self.activations {
                        for &ds in &self.dataset_ids {
                            for &seed in &self.seeds {
                                let arch = Architecture {
                                    input,
                                    hidden_layers,
                                    width,
                                    activation,
                                };
                                out.push((arch, ds, seed));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Everything a sweep cell needs besides its data: the rollout setup and
/// the expert rollout it is scored against.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub params: VehicleParams,
    pub scenario: Scenario,
    pub expert: RolloutResult,
}

impl EvalContext {
    /// Closed-loop metrics of `net` against the expert.
    pub fn evaluate(&self, net: Mlp, kind: FeatureKind) -> Result<Metrics> {
        let mut ctl = NetController::new(net, kind, self.scenario.horizon)?;
        let r = rollout(&mut ctl, &self.scenario, &self.params);
        metrics_or_diverged(&r, &self.expert)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub arch: Architecture,
    pub dataset: DatasetId,
    pub seed: u64,
    /// Best validation MSE (rad^2).
    pub mse: f64,
    pub metrics: Metrics,
    /// Set when training or evaluation failed; the metrics are then NaN.
    pub error: Option<String>,
}

/// Data sets keyed by set id and input encoding.
pub type SweepData = BTreeMap<(DatasetId, FeatureKind), Dataset>;

/// Trains and evaluates every cell; failures become rows with an error.
/// Cells run in parallel and each is seeded on its own, so the rows do not
/// depend on scheduling (latency aside).
pub fn run_sweep(spec: &SweepSpec, data: &SweepData, train: &TrainConfig, ctx: &EvalContext) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    for (_, ds, _) in spec.cells() {
        for kind in &spec.input_kinds {
            if !data.contains_key(&(ds, *kind)) {
                return Err(Error::invalid(format!("missing data set {} for {kind}", ds.get())));
            }
        }
    }
    let rows = spec
        .cells()
        .into_par_iter()
        .map(|(arch, ds, seed)| run_cell(arch, ds, seed, &data[&(ds, arch.input)], train, ctx))
        .collect();
    Ok(rows)
}

pub fn run_cell(
    arch: Architecture,
    dataset: DatasetId,
    seed: u64,
    data: &Dataset,
    train: &TrainConfig,
    ctx: &EvalContext,
) -> SweepRow {
    let cfg = TrainConfig { seed, ..*train };
    let outcome = train_supervised(data, &arch, &cfg, ctx.params.delta_max, ctx.scenario.horizon)
        .and_then(|(net, rep)| Ok((rep.best_val_loss, ctx.evaluate(net, arch.input)?)));
    match outcome {
        Ok((mse, metrics)) => SweepRow {
            arch,
            dataset,
            seed,
            mse,
            metrics,
            error: None,
        },
        Err(e) => SweepRow {
            arch,
            dataset,
            seed,
            mse: f64::NAN,
            metrics: Metrics {
                mean_cm: f64::NAN,
                max_cm: f64::NAN,
                std_cm: f64::NAN,
                latency_s: f64::NAN,
            },
            error: Some(e.to_string()),
        },
    }
}

pub const SWEEP_HEADER: &str = "input,layers,width,activation,dataset,seed,mse,mean_cm,max_cm,std_cm,latency_us";

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    use crate::io::fmt_f64;
    crate::io::write_atomically(path, |w| {
        writeln!(w, "{SWEEP_HEADER}")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.arch.input,
                r.arch.hidden_layers,
                r.arch.width,
                r.arch.activation,
                r.dataset.get(),
                r.seed,
                fmt_f64(r.mse),
                fmt_f64(r.metrics.mean_cm),
                fmt_f64(r.metrics.max_cm),
                fmt_f64(r.metrics.std_cm),
                fmt_f64(r.metrics.latency_s * 1e6),
            )?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::dataset::Sample;
    use rand::Rng;

    fn toy(kind: FeatureKind, n: usize, label: impl Fn(&[f64]) -> f64) -> Dataset {
        let mut rng = seeded(5);
        let dim = kind.dim(20);
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                let values: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                Sample {
                    label: label(&values),
                    features: FeatureVector { kind, values },
                }
            })
            .collect();
        Dataset::from_samples(kind, &samples).unwrap()
    }

    fn small(kind: FeatureKind) -> Architecture {
        Architecture {
            input: kind,
            hidden_layers: 2,
            width: 8,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn memorizes_a_single_sample() {
        let data = toy(FeatureKind::I3, 1, |_| 0.25);
        let cfg = TrainConfig {
            epochs: 3000,
            learning_rate: 1e-2,
            early_stop_patience: 3000,
            ..Default::default()
        };
        let (net, rep) = train_supervised(&data, &small(FeatureKind::I3), &cfg, 0.4189, 20).unwrap();
        let loss = net.loss_mse(data.features.view(), data.labels.view());
        assert!(loss < 1e-8, "loss {loss}, report best {}", rep.best_val_loss);
    }

    #[test]
    fn zero_labels_give_zero_function() {
        let data = toy(FeatureKind::I3, 200, |_| 0.0);
        let cfg = TrainConfig {
            epochs: 300,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let (_, rep) = train_supervised(&data, &small(FeatureKind::I3), &cfg, 0.4189, 20).unwrap();
        assert!(rep.best_val_loss < 1e-6, "{}", rep.best_val_loss);
    }

    #[test]
    fn folded_net_matches_report_and_never_worse_than_init() {
        let data = toy(FeatureKind::I21, 300, |v| 0.3 * (v[0] * 3.0).sin());
        let cfg = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        let arch = small(FeatureKind::I21);
        let (net, rep) = train_supervised(&data, &arch, &cfg, 0.4189, 20).unwrap();
        assert!(rep.best_val_loss <= rep.initial_val_loss);
        assert_eq!(rep.val_samples, 30);
        assert!(net.loss_mse(data.features.view(), data.labels.view()).is_finite());
        // Same configuration, same trajectory.
        let (net2, rep2) = train_supervised(&data, &arch, &cfg, 0.4189, 20).unwrap();
        assert_eq!(net, net2);
        assert_eq!(rep, rep2);
    }

    #[test]
    fn fold_is_exact_reparametrization() {
        let data = toy(FeatureKind::I3, 50, |_| 0.0);
        let x = data.features.mapv(|v| 3.0 * v + 1.0);
        let (mean, std) = column_stats(&x);
        let net = small(FeatureKind::I3).init(20, 0.4, 9).unwrap();
        let before = net.predict_batch(standardize(&x, &mean, &std).view());
        let mut folded = net.clone();
        fold_standardization(&mut folded, &mean, &std);
        let after = folded.predict_batch(x.view());
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_kind_and_bad_config() {
        let data = toy(FeatureKind::I3, 10, |_| 0.0);
        assert!(train_supervised(&data, &small(FeatureKind::I40), &TrainConfig::default(), 0.4, 20).is_err());
        let bad = TrainConfig {
            validation_fraction: 0.9,
            ..Default::default()
        };
        assert!(train_supervised(&data, &small(FeatureKind::I3), &bad, 0.4, 20).is_err());
    }

    #[test]
    fn cells_enumerate_the_grid() {
        let spec = SweepSpec {
            input_kinds: vec![FeatureKind::I3, FeatureKind::I40],
            hidden_layer_counts: vec![1],
            widths: vec![20, 40],
            activations: vec![Activation::Relu],
            dataset_ids: vec![DatasetId::THREE],
            seeds: vec![0, 1, 2],
        };
        spec.validate().unwrap();
        assert_eq!(spec.cells().len(), 12);
        let bad = SweepSpec {
            seeds: vec![],
            ..spec.clone()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn architecture_dims_and_name() {
        let a = Architecture::headline();
        assert_eq!(a.dims(20), vec![40, 10, 10, 10, 1]);
        assert_eq!(a.to_string(), "i40-3x10-sigmoid");
    }
}
