//! Soft actor-critic, value-network variant: a squashed-Gaussian actor, two
//! Q networks, a state-value network and its slowly tracking target.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{Grads, Mlp};
use crate::env::Transition;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub batch_size: usize,
    /// Scenarios simulated between training phases.
    pub cadence: usize,
    pub capacity: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Gradient steps per training phase.
    pub updates_per_train: usize,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            tau: 0.005,
            gamma: 0.99,
            alpha: 0.2,
            batch_size: 256,
            cadence: 32,
            capacity: 1_000_000,
            hidden_layers: 6,
            hidden_width: 256,
            updates_per_train: 100,
            seed: 0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("sac.lr must be positive, got {}", self.lr));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("sac.tau must be in (0, 1], got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("sac.gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(format!("sac.alpha must be non-negative, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.capacity == 0 || self.cadence == 0 {
            return Err("sac.batch_size, sac.capacity and sac.cadence must be positive".into());
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err("sac networks need at least one hidden layer".into());
        }
        Ok(())
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        s.push(output);
        s
    }
}

/// Box bounds of the action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        assert_eq!(low.len(), high.len());
        assert!(low.iter().zip(&high).all(|(l, h)| l < h), "empty action interval");
        Self { low, high }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn center(&self, j: usize) -> f64 {
        0.5 * (self.low[j] + self.high[j])
    }

    pub fn half(&self, j: usize) -> f64 {
        0.5 * (self.high[j] - self.low[j])
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SacError {
    #[error("actor produced a non-finite output")]
    NonFiniteOutput,
    #[error("non-finite loss in update batch {batch_index}")]
    NonFiniteLoss { batch_index: u64 },
    #[error("observation has {got} values, expected {expected}")]
    ObservationSize { got: usize, expected: usize },
    #[error("buffer holds {have} transitions, batch needs {need}")]
    NotEnoughData { have: usize, need: usize },
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Reparameterized actor sample for a batch.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub action: Array2<f64>,
    pub log_prob: Array1<f64>,
    /// Pre-squash Gaussian sample.
    pub u: Array2<f64>,
    pub mu: Array2<f64>,
    /// Clamped log standard deviation.
    pub log_std: Array2<f64>,
    /// Whether the log std was inside the clamp range (gradient flows).
    pub log_std_free: Array2<bool>,
    pub eps: Array2<f64>,
}

/// Squash `mu + exp(log_std)·eps` through tanh into the bounds. `out` holds
/// the actor output: means in the first half of the columns, log stds in
/// the second half.
pub fn squash_sample(out: &Array2<f64>, eps: &Array2<f64>, bounds: &ActionBounds) -> Result<SquashedSample, SacError> {
    let a = bounds.dim();
    if !out.iter().all(|v| v.is_finite()) {
        return Err(SacError::NonFiniteOutput);
    }
    let mu = out.slice(s![.., ..a]).to_owned();
    let raw = out.slice(s![.., a..2 * a]);
    let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let log_std_free = raw.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
    let u = &mu + &(log_std.mapv(f64::exp) * eps);
    let b = out.nrows();
    let mut action = Array2::zeros((b, a));
    let mut log_prob = Array1::zeros(b);
    for i in 0..b {
        let mut lp = 0.0;
        for j in 0..a {
            let uj = u[[i, j]];
            action[[i, j]] = bounds.center(j) + bounds.half(j) * uj.tanh();
            // log N(u; mu, sigma) minus log |d action / d u|
            lp += -0.5 * eps[[i, j]] * eps[[i, j]] - log_std[[i, j]] - 0.5 * LN_2PI - bounds.half(j).ln()
                - 2.0 * (std::f64::consts::LN_2 - uj - softplus(-2.0 * uj));
        }
        log_prob[i] = lp;
    }
    Ok(SquashedSample {
        action,
        log_prob,
        u,
        mu,
        log_std,
        log_std_free,
        eps: eps.clone(),
    })
}

/// Log density of a bounded action under the squashed Gaussian (mu, log_std).
pub fn squashed_log_prob(action: &[f64], mu: &[f64], log_std: &[f64], bounds: &ActionBounds) -> f64 {
    let mut lp = 0.0;
    for j in 0..bounds.dim() {
        let y = ((action[j] - bounds.center(j)) / bounds.half(j)).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        let u = y.atanh();
        let ls = log_std[j].clamp(LOG_STD_MIN, LOG_STD_MAX);
        let e = (u - mu[j]) / ls.exp();
        lp += -0.5 * e * e - ls - 0.5 * LN_2PI - bounds.half(j).ln() - 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u));
    }
    lp
}

/// Standard normal noise matrix.
pub fn normal_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Actor loss mean(α·logπ(ã|s) − Q(s, ã)) and its gradient with respect to
/// the actor parameters. `q` returns Q values and dQ/dã for a batch of
/// actions.
pub fn actor_loss_grad(
    actor: &Mlp,
    obs: &Array2<f64>,
    eps: &Array2<f64>,
    bounds: &ActionBounds,
    alpha: f64,
    q: impl Fn(&Array2<f64>) -> (Array1<f64>, Array2<f64>),
) -> Result<(f64, Grads), SacError> {
    let (out, trace) = actor.forward_trace(obs);
    let smp = squash_sample(&out, eps, bounds)?;
    let (qv, dq) = q(&smp.action);
    let b = obs.nrows() as f64;
    let a = bounds.dim();
    let loss = (alpha * &smp.log_prob - &qv).sum() / b;
    let mut g = Array2::zeros(out.raw_dim());
    for i in 0..obs.nrows() {
        for j in 0..a {
            let y = smp.u[[i, j]].tanh();
            let du = (alpha * 2.0 * y - dq[[i, j]] * bounds.half(j) * (1.0 - y * y)) / b;
            g[[i, j]] = du;
            if smp.log_std_free[[i, j]] {
                g[[i, a + j]] = -alpha / b + du * smp.log_std[[i, j]].exp() * smp.eps[[i, j]];
            }
        }
    }
    let (grads, _) = actor.backward(&trace, &g);
    Ok((loss, grads))
}

/// Training batch in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub act: Array2<f64>,
    pub rew: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let b = ts.len();
        let d = ts.first().map_or(0, |t| t.obs.len());
        let mut obs = Array2::zeros((b, d));
        let mut next_obs = Array2::zeros((b, d));
        let mut act = Array2::zeros((b, 2));
        let mut rew = Array1::zeros(b);
        let mut done = Array1::zeros(b);
        for (i, t) in ts.iter().enumerate() {
            obs.row_mut(i).assign(&ndarray::ArrayView1::from(&t.obs[..]));
            next_obs.row_mut(i).assign(&ndarray::ArrayView1::from(&t.next_obs[..]));
            act[[i, 0]] = t.action.accel;
            act[[i, 1]] = t.action.steer;
            rew[i] = t.reward;
            done[i] = if t.done { 1.0 } else { 0.0 };
        }
        Self {
            obs,
            act,
            rew,
            next_obs,
            done,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub q1: f64,
    pub q2: f64,
    pub v: f64,
    pub actor: f64,
}

/// Gradients for one update, before they are applied.
#[derive(Debug, Clone)]
pub struct UpdateGrads {
    pub losses: Losses,
    pub q1: Grads,
    pub q2: Grads,
    pub v: Grads,
    pub actor: Grads,
}

#[derive(Debug, Clone)]
pub struct Sac {
    pub cfg: SacConfig,
    pub obs_dim: usize,
    pub bounds: ActionBounds,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub v: Mlp,
    pub v_target: Mlp,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_v: Adam,
    rng: ChaCha8Rng,
    updates: u64,
}

fn q_input(obs: &Array2<f64>, act: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs.view(), act.view()]).expect("same batch size")
}

impl Sac {
    pub fn new(cfg: SacConfig, obs_dim: usize, bounds: ActionBounds) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let a = bounds.dim();
        let actor = Mlp::new(&cfg.sizes(obs_dim, 2 * a), &mut rng);
        let q1 = Mlp::new(&cfg.sizes(obs_dim + a, 1), &mut rng);
        let q2 = Mlp::new(&cfg.sizes(obs_dim + a, 1), &mut rng);
        let v = Mlp::new(&cfg.sizes(obs_dim, 1), &mut rng);
        let v_target = v.clone();
        Self {
            opt_actor: Adam::new(&actor, cfg.lr),
            opt_q1: Adam::new(&q1, cfg.lr),
            opt_q2: Adam::new(&q2, cfg.lr),
            opt_v: Adam::new(&v, cfg.lr),
            cfg,
            obs_dim,
            bounds,
            actor,
            q1,
            q2,
            v,
            v_target,
            rng,
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Regression targets r + γ(1 − done)·V_target(s').
    pub fn q_targets(&self, batch: &Batch) -> Array1<f64> {
        let vn = self.v_target.forward(&batch.next_obs).column(0).to_owned();
        &batch.rew + &(self.cfg.gamma * (1.0 - &batch.done) * vn)
    }

    /// min(Q1, Q2) and its action gradient at (obs, act).
    pub fn min_q_with_grad(&self, obs: &Array2<f64>, act: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        let x = q_input(obs, act);
        let (o1, t1) = self.q1.forward_trace(&x);
        let (o2, t2) = self.q2.forward_trace(&x);
        let b = obs.nrows();
        let mut qv = Array1::zeros(b);
        let mut g1 = Array2::zeros((b, 1));
        let mut g2 = Array2::zeros((b, 1));
        for i in 0..b {
            if o1[[i, 0]] <= o2[[i, 0]] {
                qv[i] = o1[[i, 0]];
                g1[[i, 0]] = 1.0;
            } else {
                qv[i] = o2[[i, 0]];
                g2[[i, 0]] = 1.0;
            }
        }
        let (_, dx1) = self.q1.backward(&t1, &g1);
        let (_, dx2) = self.q2.backward(&t2, &g2);
        let d = self.obs_dim;
        let da = (dx1 + dx2).slice(s![.., d..]).to_owned();
        (qv, da)
    }

    /// Losses and gradients of every network for `batch`, with actor noise
    /// `eps` (batch × action dim). Nothing is modified.
    pub fn compute_grads(&self, batch: &Batch, eps: &Array2<f64>) -> Result<UpdateGrads, SacError> {
        let b = batch.obs.nrows() as f64;
        let alpha = self.cfg.alpha;

        // fresh policy sample for the value target
        let smp = squash_sample(&self.actor.forward(&batch.obs), eps, &self.bounds)?;
        let x_new = q_input(&batch.obs, &smp.action);
        let q1n = self.q1.forward(&x_new);
        let q2n = self.q2.forward(&x_new);
        let min_q = ndarray::Zip::from(q1n.column(0))
            .and(q2n.column(0))
            .map_collect(|a, b| a.min(*b));
        let v_tgt = &min_q - &(alpha * &smp.log_prob);
        let (v_out, v_trace) = self.v.forward_trace(&batch.obs);
        let v_err = &v_out.column(0) - &v_tgt;
        let v_loss = 0.5 * v_err.mapv(|e| e * e).sum() / b;
        let (v_grads, _) = self.v.backward(&v_trace, &(v_err / b).insert_axis(Axis(1)));

        let y = self.q_targets(batch);
        let x_old = q_input(&batch.obs, &batch.act);
        let q_loss_grad = |net: &Mlp| {
            let (out, trace) = net.forward_trace(&x_old);
            let err = &out.column(0) - &y;
            let loss = 0.5 * err.mapv(|e| e * e).sum() / b;
            let (g, _) = net.backward(&trace, &(err / b).insert_axis(Axis(1)));
            (loss, g)
        };
        let (q1_loss, q1_grads) = q_loss_grad(&self.q1);
        let (q2_loss, q2_grads) = q_loss_grad(&self.q2);

        let (actor_loss, actor_grads) = actor_loss_grad(&self.actor, &batch.obs, eps, &self.bounds, alpha, |act| {
            self.min_q_with_grad(&batch.obs, act)
        })?;

        Ok(UpdateGrads {
            losses: Losses {
                q1: q1_loss,
                q2: q2_loss,
                v: v_loss,
                actor: actor_loss,
            },
            q1: q1_grads,
            q2: q2_grads,
            v: v_grads,
            actor: actor_grads,
        })
    }

    /// One gradient step on every network followed by the soft target
    /// update. A non-finite loss aborts before any parameter changes.
    pub fn update(&mut self, batch: &Batch) -> Result<Losses, SacError> {
        let eps = normal_noise(batch.obs.nrows(), self.bounds.dim(), &mut self.rng);
        let index = self.updates;
        self.updates += 1;
        let g = self
            .compute_grads(batch, &eps)
            .map_err(|_| SacError::NonFiniteLoss { batch_index: index })?;
        let l = g.losses;
        let finite = [l.q1, l.q2, l.v, l.actor].iter().all(|v| v.is_finite())
            && g.q1.is_finite()
            && g.q2.is_finite()
            && g.v.is_finite()
            && g.actor.is_finite();
        if !finite {
            return Err(SacError::NonFiniteLoss { batch_index: index });
        }
        self.opt_q1.step(&mut self.q1, &g.q1);
        self.opt_q2.step(&mut self.q2, &g.q2);
        self.opt_v.step(&mut self.v, &g.v);
        self.opt_actor.step(&mut self.actor, &g.actor);
        self.v_target
            .soft_update_from(&self.v, self.cfg.tau)
            .expect("target mirrors the value network");
        Ok(l)
    }

    fn obs_matrix(&self, obs: &[f64]) -> Result<Array2<f64>, SacError> {
        if obs.len() != self.obs_dim {
            return Err(SacError::ObservationSize {
                got: obs.len(),
                expected: self.obs_dim,
            });
        }
        Ok(Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row shape"))
    }

    /// Stochastic action and its log probability.
    pub fn sample_action(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64), SacError> {
        actor_sample(&self.actor, &self.bounds, obs, self.obs_dim, rng)
    }

    /// Deterministic action: the squashed mean.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, SacError> {
        let out = self.actor.forward(&self.obs_matrix(obs)?);
        mean_action(&out, &self.bounds)
    }

    pub fn set_optimizer_states(&mut self, states: [(u64, Vec<f64>, Vec<f64>); 4]) {
        let [a, q1, q2, v] = states;
        self.opt_actor.set_state(a.0, a.1, a.2);
        self.opt_q1.set_state(q1.0, q1.1, q1.2);
        self.opt_q2.set_state(q2.0, q2.1, q2.2);
        self.opt_v.set_state(v.0, v.1, v.2);
    }

    /// (step count, first moments, second moments) of the actor, q1, q2 and
    /// v optimizers.
    pub fn optimizer_states(&self) -> [(u64, &[f64], &[f64]); 4] {
        [&self.opt_actor, &self.opt_q1, &self.opt_q2, &self.opt_v].map(|o| {
            let (m, v) = o.moments();
            (o.t, m, v)
        })
    }

    pub fn set_updates(&mut self, n: u64) {
        self.updates = n;
    }
}

/// Squashed mean of a single-row actor output.
pub fn mean_action(out: &Array2<f64>, bounds: &ActionBounds) -> Result<Vec<f64>, SacError> {
    if !out.iter().all(|v| v.is_finite()) {
        return Err(SacError::NonFiniteOutput);
    }
    Ok((0..bounds.dim())
        .map(|j| bounds.center(j) + bounds.half(j) * out[[0, j]].tanh())
        .collect())
}

/// Sample one action from an actor network.
pub fn actor_sample(
    actor: &Mlp,
    bounds: &ActionBounds,
    obs: &[f64],
    obs_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, f64), SacError> {
    if obs.len() != obs_dim {
        return Err(SacError::ObservationSize {
            got: obs.len(),
            expected: obs_dim,
        });
    }
    let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row shape");
    let out = actor.forward(&x);
    let eps = normal_noise(1, bounds.dim(), rng);
    let smp = squash_sample(&out, &eps, bounds)?;
    Ok((smp.action.row(0).to_vec(), smp.log_prob[0]))
}
