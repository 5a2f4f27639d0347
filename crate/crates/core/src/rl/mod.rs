//! DDPG on the tracking task: an actor with the controller head, a
//! state-action critic, target copies of both, and a small replay ring.
//!
//! An episode that leaves the abort radius ends with the reward of staying
//! at that distance forever, `r / (1 - gamma)`. Without it a negative
//! per-step reward would make early termination look attractive.

mod critic;
mod env;
mod replay;

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use critic::{Critic, CriticTrace};
pub use env::{env_reset, env_step, Env, EnvConfig, StepResult};
pub use replay::{ReplayBuffer, Transition};

use crate::error::{Error, Result};
use crate::nn::{init_glorot, soft_update, Activation, AdamState, Mlp};
use crate::rng::{derive_seed, seeded};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_hidden: [usize; 2],
    pub critic_hidden: [usize; 2],
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Ornstein-Uhlenbeck mean reversion per step.
    pub noise_theta: f64,
    /// Ornstein-Uhlenbeck scale as a fraction of the steering bound.
    pub noise_sigma: f64,
    /// |pre-activation| of the actor's tanh head beyond which a quadratic
    /// penalty applies. A head pushed deep into saturation has an exactly
    /// zero gradient and could never steer back.
    pub head_saturation: f64,
    pub head_penalty: f64,
    pub episodes: usize,
    /// Stop after this many environment steps even if episodes remain.
    pub max_steps: Option<usize>,
    /// Environment steps collected before the first update.
    pub warmup_steps: usize,
    /// Episodes between evaluation checkpoints.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub env: EnvConfig,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.001,
            actor_hidden: [400, 300],
            critic_hidden: [400, 300],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 64,
            buffer_capacity: 2000,
            noise_theta: 0.15,
            noise_sigma: 0.2,
            head_saturation: 3.0,
            head_penalty: 1.0,
            episodes: 2000,
            max_steps: None,
            warmup_steps: 64,
            eval_every: 20,
            eval_episodes: 10,
            seed: 0,
            env: EnvConfig::default(),
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::invalid("buffer must hold at least one batch"));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::invalid("zero-width layer"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.episodes == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::invalid("episodes and evaluation counts must be positive"));
        }
        if !(self.head_saturation > 0.0 && self.head_penalty >= 0.0) {
            return Err(Error::invalid("head saturation must be positive and its penalty non-negative"));
        }
        if !(self.noise_theta >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise parameters must be non-negative"));
        }
        Ok(())
    }
}

/// Ornstein-Uhlenbeck process with unit time step around zero.
#[derive(Debug, Clone)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    x: f64,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64) -> Self {
        Self { theta, sigma, x: 0.0 }
    }

    pub fn reset(&mut self) {
        self.x = 0.0;
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let w: f64 = rng.sample(StandardNormal);
        self.x += -self.theta * self.x + self.sigma * w;
        self.x
    }
}

/// Live and target networks with their optimizers.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: Mlp,
    pub critic: Critic,
    pub actor_target: Mlp,
    pub critic_target: Critic,
    actor_opt: AdamState,
    critic_opt: AdamState,
}

impl DdpgAgent {
    pub fn new(cfg: &DdpgConfig, params: &VehicleParams) -> Result<Self> {
        let dim = crate::features::FeatureKind::I40.dim(cfg.env.horizon);
        let mut actor = init_glorot(
            &[dim, cfg.actor_hidden[0], cfg.actor_hidden[1], 1],
            &[Activation::Relu, Activation::Relu],
            params.delta_max,
            derive_seed(cfg.seed, "actor"),
        )?;
        // Small head weights start the policy near straight-ahead.
        actor.layers_mut().last_mut().expect("layers").weights.mapv_inplace(|w| w * 1e-2);
        let critic = Critic::new(dim, cfg.critic_hidden, params.delta_max, derive_seed(cfg.seed, "critic"));
        Ok(Self {
            actor_opt: AdamState::new(actor.layers(), cfg.actor_lr),
            critic_opt: AdamState::new(&critic.layers, cfg.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        })
    }
}

/// A sampled mini-batch as matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Array1<f64>,
    pub r: Array1<f64>,
    pub s_next: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let dim = ts.first().map_or(0, |t| t.s.len());
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            Array2::from_shape_vec((ts.len(), dim), ts.iter().flat_map(|t| f(t).iter().copied()).collect())
                .expect("uniform observation length")
        };
        Self {
            s: rows(&|t| &t.s),
            a: ts.iter().map(|t| t.a).collect(),
            r: ts.iter().map(|t| t.r).collect(),
            s_next: rows(&|t| &t.s_next),
            done: ts.iter().map(|t| f64::from(u8::from(t.done))).collect(),
        }
    }
}

/// Bellman targets `r + gamma * Q'(s', mu'(s'))`, or `r` for terminal rows.
pub fn critic_target(batch: &Batch, actor_target: &Mlp, critic_target: &Critic, gamma: f64) -> Array1<f64> {
    let a_next = actor_target.predict_batch(batch.s_next.view());
    let q_next = critic_target.q(batch.s_next.view(), a_next.view());
    let mut y = batch.r.clone();
    for i in 0..y.len() {
        if batch.done[i] == 0.0 {
            y[i] += gamma * q_next[i];
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean `Q(s, mu(s))` over the batch before the actor step.
    pub actor_value: f64,
}

/// One critic step towards the Bellman targets. Returns the loss before the step.
pub fn critic_step(agent: &mut DdpgAgent, batch: &Batch, gamma: f64) -> f64 {
    let y = critic_target(batch, &agent.actor_target, &agent.critic_target, gamma);
    let trace = agent.critic.forward(batch.s.view(), batch.a.view());
    let m = y.len() as f64;
    let q = trace.q.column(0);
    let loss = q.iter().zip(&y).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() / m;
    let dq: Array1<f64> = q.iter().zip(&y).map(|(q, y)| 2.0 * (q - y) / m).collect();
    let (grads, _) = agent.critic.backward(batch.s.view(), &trace, dq.view());
    agent.critic_opt.step(&mut agent.critic.layers, &grads);
    loss
}

/// One actor step up the critic's action gradient, plus the head
/// saturation penalty. Returns the mean value before the step.
pub fn actor_step(agent: &mut DdpgAgent, batch: &Batch, saturation: f64, penalty: f64) -> f64 {
    let trace = agent.actor.forward_batch(batch.s.view());
    let a = trace.prediction().to_owned();
    let z = agent.actor.head_preactivation(batch.s.view(), &trace);
    let value = agent.critic.q(batch.s.view(), a.view()).mean().unwrap_or(0.0);
    let dq_da = agent.critic.action_gradient(batch.s.view(), a.view());
    let scale = agent.actor.output_scale();
    let m = a.len() as f64;
    // Minimize -mean Q + penalty * mean (|z| - saturation)_+^2 with respect to z.
    let dz: Array1<f64> = z
        .iter()
        .zip(&dq_da)
        .map(|(&z, &g)| {
            let th = z.tanh();
            let excess = (z.abs() - saturation).max(0.0);
            (-g * scale * (1.0 - th * th) + 2.0 * penalty * excess * z.signum()) / m
        })
        .collect();
    let grads = agent.actor.backward_head_preactivation(batch.s.view(), &trace, dz.view());
    agent.actor_opt.step(agent.actor.layers_mut(), &grads);
    value
}

/// Soft-updates both target networks toward the live ones.
pub fn update_targets(agent: &mut DdpgAgent, tau: f64) {
    soft_update(agent.actor_target.layers_mut(), agent.actor.layers(), tau);
    soft_update(&mut agent.critic_target.layers, &agent.critic.layers, tau);
}

/// Critic step, actor step, then soft updates, on a batch drawn uniformly from `buffer`.
pub fn ddpg_update<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    agent: &mut DdpgAgent,
    cfg: &DdpgConfig,
    rng: &mut R,
) -> UpdateStats {
    assert!(buffer.len() >= cfg.batch_size, "buffer smaller than a batch");
    let batch = Batch::from_transitions(&buffer.sample(cfg.batch_size, rng));
    ddpg_update_batch(agent, &batch, cfg)
}

pub fn ddpg_update_batch(agent: &mut DdpgAgent, batch: &Batch, cfg: &DdpgConfig) -> UpdateStats {
    let critic_loss = critic_step(agent, batch, cfg.gamma);
    let actor_value = actor_step(agent, batch, cfg.head_saturation, cfg.head_penalty);
    update_targets(agent, cfg.tau);
    UpdateStats {
        critic_loss,
        actor_value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Undiscounted sum of rewards.
    pub ret: f64,
    /// Mean critic loss over the episode's updates (NaN before the first update).
    pub critic_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgReport {
    pub curve: Vec<EpisodeRecord>,
    /// (episode, evaluation return) per checkpoint; episode 0 is the initial actor.
    pub checkpoints: Vec<(usize, f64)>,
    pub best_episode: usize,
    pub best_eval_return: f64,
    /// False when no checkpoint beat the initial actor.
    pub improved: bool,
    pub total_steps: usize,
    pub updates: usize,
}

impl DdpgReport {
    /// `episode,return,critic_loss`.
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        use crate::io::fmt_f64;
        crate::io::write_atomically(path, |w| {
            writeln!(w, "episode,return,critic_loss")?;
            for e in &self.curve {
                writeln!(w, "{},{},{}", e.episode, fmt_f64(e.ret), fmt_f64(e.critic_loss))?;
            }
            Ok(())
        })
    }

    /// Mean of the window-smoothed return over the first and last tenth of training.
    pub fn decile_returns(&self, window: usize) -> Option<(f64, f64)> {
        let r: Vec<f64> = self.curve.iter().map(|e| e.ret).collect();
        let sm = moving_average(&r, window);
        let n = sm.len();
        if n < 10 {
            return None;
        }
        let d = n / 10;
        let first = sm[..d].iter().sum::<f64>() / d as f64;
        let last = sm[n - d..].iter().sum::<f64>() / d as f64;
        Some((first, last))
    }
}

/// Trailing moving average; early entries average what is available.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i];
        if i >= w {
            acc -= x[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Noise-free return of `actor` summed over a fixed, seeded set of episodes.
pub fn evaluate_actor(actor: &Mlp, env: &mut Env, episodes: usize, seed: u64) -> f64 {
    let mut total = 0.0;
    let mut scratch = crate::nn::ForwardScratch::default();
    for e in 0..episodes {
        let mut rng = crate::rng::child(seed, e as u64);
        let mut s = env.reset(&mut rng);
        loop {
            let a = actor.forward_with(&s, &mut scratch);
            let st = env.step(a);
            total += st.reward;
            if st.done {
                break;
            }
            s = st.obs;
        }
    }
    total
}

/// Trains an actor and returns the checkpoint with the best evaluation return.
pub fn train_ddpg(cfg: &DdpgConfig, params: &VehicleParams) -> Result<(Mlp, DdpgReport)> {
    train_ddpg_with(cfg, params, |_| {})
}

/// [`train_ddpg`] with a callback after each episode.
pub fn train_ddpg_with(
    cfg: &DdpgConfig,
    params: &VehicleParams,
    mut on_episode: impl FnMut(&EpisodeRecord),
) -> Result<(Mlp, DdpgReport)> {
    cfg.validate()?;
    let mut env = Env::new(cfg.env, *params)?;
    let mut eval_env = env.clone();
    let eval_seed = derive_seed(cfg.seed, "eval");
    let mut agent = DdpgAgent::new(cfg, params)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut rng = seeded(derive_seed(cfg.seed, "train"));
    let mut noise = OuNoise::new(cfg.noise_theta, cfg.noise_sigma * params.delta_max);
    let mut scratch = crate::nn::ForwardScratch::default();

    let initial = evaluate_actor(&agent.actor, &mut eval_env, cfg.eval_episodes, eval_seed);
    let mut best = (agent.actor.clone(), 0, initial);
    let mut report = DdpgReport {
        curve: Vec::new(),
        checkpoints: vec![(0, initial)],
        best_episode: 0,
        best_eval_return: initial,
        improved: false,
        total_steps: 0,
        updates: 0,
    };

    'episodes: for episode in 1..=cfg.episodes {
        let mut s = env.reset(&mut rng);
        noise.reset();
        let (mut ret, mut loss_sum, mut loss_n, mut steps) = (0.0, 0.0, 0usize, 0usize);
        loop {
            let a = params.clamp_steering(agent.actor.forward_with(&s, &mut scratch) + noise.sample(&mut rng));
            let st = env.step(a);
            let r = st.reward;
            if !r.is_finite() {
                return Err(Error::Diverged {
                    epoch: episode,
                    reason: "non-finite reward".into(),
                });
            }
            buffer.push(Transition {
                s: std::mem::take(&mut s),
                a,
                r,
                s_next: st.obs.clone(),
                done: st.terminal,
            });
            ret += r;
            steps += 1;
            report.total_steps += 1;
            if report.total_steps >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                let stats = ddpg_update(&buffer, &mut agent, cfg, &mut rng);
                if !stats.critic_loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch: episode,
                        reason: format!("critic loss {}", stats.critic_loss),
                    });
                }
                loss_sum += stats.critic_loss;
                loss_n += 1;
                report.updates += 1;
            }
            s = st.obs;
            let budget_spent = cfg.max_steps.is_some_and(|m| report.total_steps >= m);
            if st.done || budget_spent {
                let rec = EpisodeRecord {
                    episode,
                    ret,
                    critic_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
                    steps,
                };
                on_episode(&rec);
                report.curve.push(rec);
                let last = episode == cfg.episodes || budget_spent;
                if episode % cfg.eval_every == 0 || last {
                    let v = evaluate_actor(&agent.actor, &mut eval_env, cfg.eval_episodes, eval_seed);
                    report.checkpoints.push((episode, v));
                    if v > best.2 {
                        best = (agent.actor.clone(), episode, v);
                    }
                }
                if budget_spent {
                    break 'episodes;
                }
                break;
            }
        }
    }
    report.best_episode = best.1;
    report.best_eval_return = best.2;
    report.improved = best.1 > 0;
    Ok((best.0, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> DdpgConfig {
        DdpgConfig {
            actor_hidden: [16, 12],
            critic_hidden: [16, 12],
            episodes: 6,
            eval_every: 3,
            eval_episodes: 2,
            ..Default::default()
        }
    }

    fn filled_buffer(cfg: &DdpgConfig, n: usize) -> ReplayBuffer {
        let p = VehicleParams::default();
        let mut env = Env::new(cfg.env, p).unwrap();
        let mut rng = seeded(1);
        let mut buf = ReplayBuffer::new(cfg.buffer_capacity);
        let mut s = env.reset(&mut rng);
        while buf.len() < n {
            let a = rng.random_range(-p.delta_max..p.delta_max);
            let st = env.step(a);
            buf.push(Transition {
                s: s.clone(),
                a,
                r: st.reward,
                s_next: st.obs.clone(),
                done: st.terminal,
            });
            s = if st.done { env.reset(&mut rng) } else { st.obs };
        }
        buf
    }

    #[test]
    fn targets_for_terminal_rows_and_zero_gamma() {
        let cfg = tiny_cfg();
        let agent = DdpgAgent::new(&cfg, &VehicleParams::default()).unwrap();
        let buf = filled_buffer(&cfg, 64);
        let mut batch = Batch::from_transitions(&buf.sample(64, &mut seeded(2)));
        let y0 = critic_target(&batch, &agent.actor_target, &agent.critic_target, 0.0);
        assert_eq!(y0, batch.r);
        batch.done.fill(1.0);
        let y = critic_target(&batch, &agent.actor_target, &agent.critic_target, 0.99);
        assert_eq!(y, batch.r);
    }

    #[test]
    fn tau_extremes() {
        let cfg = tiny_cfg();
        let p = VehicleParams::default();
        let buf = filled_buffer(&cfg, 64);
        let mut agent = DdpgAgent::new(&cfg, &p).unwrap();
        let before = agent.clone();
        ddpg_update(&buf, &mut agent, &DdpgConfig { tau: 1.0, ..cfg }, &mut seeded(3));
        assert_eq!(agent.actor_target, agent.actor);
        assert_eq!(agent.critic_target, agent.critic);
        assert_ne!(agent.actor, before.actor);

        let mut agent = before.clone();
        let batch = Batch::from_transitions(&buf.sample(64, &mut seeded(3)));
        critic_step(&mut agent, &batch, cfg.gamma);
        actor_step(&mut agent, &batch, cfg.head_saturation, cfg.head_penalty);
        update_targets(&mut agent, 0.0);
        assert_eq!(agent.actor_target, before.actor_target);
        assert_eq!(agent.critic_target, before.critic_target);
    }

    #[test]
    fn geometric_tail() {
        let c = 0.5;
        let q: f64 = (0..5000).map(|t| -c * 0.99f64.powi(t)).sum();
        assert!((q - (-c / (1.0 - 0.99))).abs() < 1e-6);
        assert!((0.99f64.powi(250) - 0.081).abs() < 1e-3);
    }

    #[test]
    fn ou_noise_reverts_and_resets() {
        let mut n = OuNoise::new(0.15, 0.0);
        n.x = 1.0;
        let mut rng = seeded(0);
        let v = n.sample(&mut rng);
        assert!((v - 0.85).abs() < 1e-15);
        n.reset();
        assert_eq!(n.sample(&mut rng), 0.0);
    }

    #[test]
    fn short_training_is_seeded_and_bounded() {
        let cfg = tiny_cfg();
        let p = VehicleParams::default();
        let (a, ra) = train_ddpg(&cfg, &p).unwrap();
        let (b, rb) = train_ddpg(&cfg, &p).unwrap();
        assert_eq!(a, b);
        // The curve holds NaN losses before the first update.
        assert_eq!(format!("{ra:?}"), format!("{rb:?}"));
        assert_eq!(ra.curve.len(), 6);
        assert_eq!(ra.checkpoints.len(), 3);
        assert_eq!(a.dims(), vec![40, 16, 12, 1]);
        let s = vec![5.0; 40];
        assert!(a.forward(&s).abs() < p.delta_max);
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }
}
