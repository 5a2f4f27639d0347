//! Command-line front end. Exit codes: 0 success, 1 usage or I/O error, 2 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpc_imitation::config::ExperimentConfig;
use mpc_imitation::experiment;
use mpc_imitation::features::FeatureKind;
use mpc_imitation::nn::Activation;
use mpc_imitation::trajgen::DatasetId;
use mpc_imitation::Error;

#[derive(Parser)]
#[command(version, about = "MPC expert, imitation and DDPG controllers for a kinematic bicycle")]
struct Cli {
    /// JSON config; keys it omits keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Label sampled poses with the MPC and write a data set CSV.
    GenData {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        set: u8,
        #[arg(long, default_value = "i40")]
        features: FeatureKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train a network on a data set by supervised imitation.
    TrainSl {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 10)]
        width: usize,
        #[arg(long, default_value = "sigmoid")]
        activation: Activation,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a DDPG actor.
    TrainRl {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many environment steps.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Roll out a model and the expert on a track and compare them.
    Eval {
        #[command(flatten)]
        who: Who,
        #[arg(long)]
        track: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Time control computations.
    Bench {
        #[command(flatten)]
        who: Who,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// Train and evaluate every cell of a sweep spec.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Who {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    expert: bool,
}

fn run(cli: Cli) -> mpc_imitation::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.cmd {
        Cmd::GenData {
            set,
            features,
            out,
            seed,
            samples,
        } => {
            cfg.dataset.id = DatasetId::new(set)?;
            if let Some(s) = seed {
                cfg.dataset.rng_seed = s;
            }
            if let Some(m) = samples {
                cfg.dataset.samples_per_set = m;
            }
            let r = experiment::gen_data(&cfg, features, &out)?;
            println!(
                "{} samples, {} skipped (failure rate {:.4}); labels mean {:.5} std {:.5} range [{:.5}, {:.5}]",
                r.samples,
                r.skipped,
                r.failure_rate(),
                r.label_mean,
                r.label_std,
                r.label_min,
                r.label_max
            );
            for (kind, n) in &r.per_kind {
                println!("  {:<10} {n}", kind.name());
            }
        }
        Cmd::TrainSl {
            data,
            layers,
            width,
            activation,
            out,
            seed,
        } => {
            cfg.architecture.hidden_layers = layers;
            cfg.architecture.width = width;
            cfg.architecture.activation = activation;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let (net, r) = experiment::train_sl(&cfg, &data, &out)?;
            println!(
                "{:?} network, best validation mse {:.4e} at epoch {} ({} epochs run)",
                net.dims(),
                r.best_val_loss,
                r.best_epoch,
                r.train_loss.len()
            );
        }
        Cmd::TrainRl { out, seed, max_steps } => {
            if let Some(s) = seed {
                cfg.ddpg.seed = s;
            }
            if max_steps.is_some() {
                cfg.ddpg.max_steps = max_steps;
            }
            let (_, r) = experiment::train_rl(&cfg, &out)?;
            println!(
                "{} episodes, {} steps, {} updates; best checkpoint episode {} (return {:.2})",
                r.curve.len(),
                r.total_steps,
                r.updates,
                r.best_episode,
                r.best_eval_return
            );
        }
        Cmd::Eval { who, track, out } => {
            if track.is_some() {
                cfg.track = track;
            }
            let s = experiment::eval(&cfg, who.model.as_deref(), &out)?;
            let m = s.metrics;
            match s.diverged_at {
                Some(k) => println!("diverged at step {k}"),
                None => println!(
                    "mean {:.4} cm, max {:.4} cm, std {:.4} cm, latency {:.2} us over {} steps",
                    m.mean_cm,
                    m.max_cm,
                    m.std_cm,
                    m.latency_s * 1e6,
                    s.steps
                ),
            }
        }
        Cmd::Bench { who, out } => {
            let s = experiment::bench(&cfg, who.model.as_deref(), &out)?;
            let l = s.latency;
            println!(
                "{}: median {:.3} us (p10 {:.3}, p90 {:.3}) over {} calls",
                s.controller,
                l.median_s * 1e6,
                l.p10_s * 1e6,
                l.p90_s * 1e6,
                l.calls
            );
        }
        Cmd::Sweep { spec, out } => {
            let spec = experiment::load_sweep_spec(&spec)?;
            let rows = experiment::sweep(&cfg, &spec, &out)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells, {failed} failed; results in {}", rows.len(), out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}
