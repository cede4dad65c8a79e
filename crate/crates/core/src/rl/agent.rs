//! The learned actor as a planner, and the simulate-then-train loop over
//! driving scenarios.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureProvider, FusedObserver};
use super::mlp::Mlp;
use super::replay::ReplayBuffer;
use super::sac::{actor_sample, mean_action, ActionBounds, Batch, Losses, Sac, SacConfig, SacError};
use crate::dynamics::{Action, VehicleParams};
use crate::env::{simulate_parallel, EnvConfig, EnvError, Observer, SimulatorView, Transition};
use crate::metrics::MetricsReport;
use crate::policies::{Planner, PlannerFactory, PlannerOutput, PolicyError};
use crate::scenario::Scenario;

/// Bounds of the driving action: acceleration and steering angle.
pub fn driving_bounds(p: &VehicleParams) -> ActionBounds {
    ActionBounds::new(vec![-p.max_accel, -p.max_steer], vec![p.max_accel, p.max_steer])
}

/// Frozen actor parameters used by rollout workers.
pub struct RlPolicy<'f> {
    pub actor: Mlp,
    pub bounds: ActionBounds,
    pub features: &'f dyn FeatureProvider,
    /// Sample from the policy instead of taking the mean action.
    pub stochastic: bool,
}

impl<'f> RlPolicy<'f> {
    pub fn snapshot(sac: &Sac, features: &'f dyn FeatureProvider, stochastic: bool) -> Self {
        Self {
            actor: sac.actor.clone(),
            bounds: sac.bounds.clone(),
            features,
            stochastic,
        }
    }

    fn observer(&self) -> FusedObserver<'f> {
        FusedObserver {
            provider: self.features,
        }
    }
}

struct RlPlanner<'a, 'f> {
    policy: &'a RlPolicy<'f>,
    rng: ChaCha8Rng,
}

impl Planner for RlPlanner<'_, '_> {
    fn plan(&mut self, view: &SimulatorView, _horizon: usize) -> Result<PlannerOutput, PolicyError> {
        let ob = self.policy.observer();
        let obs = ob.observe(view);
        let dim = ob.dim();
        let a = if self.policy.stochastic {
            actor_sample(&self.policy.actor, &self.policy.bounds, &obs, dim, &mut self.rng).map(|(a, _)| a)
        } else {
            let x = ndarray::Array2::from_shape_vec((1, obs.len()), obs).expect("row");
            mean_action(&self.policy.actor.forward(&x), &self.policy.bounds)
        }
        .map_err(|e: SacError| PolicyError::Other(e.to_string()))?;
        Ok(PlannerOutput::Action(Action::new(a[0], a[1])))
    }
}

impl PlannerFactory for RlPolicy<'_> {
    fn build<'a>(&'a self, _scenario: &'a Scenario, seed: u64) -> Box<dyn Planner + 'a> {
        Box::new(RlPlanner {
            policy: self,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub report: MetricsReport,
    pub transitions: usize,
    pub updates: u64,
    pub mean_losses: Option<Losses>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error("{0}")]
    Config(String),
}

/// Offline SAC over driving scenarios: simulate `cadence` scenarios with a
/// frozen actor snapshot, merge their transitions, then train.
#[allow(clippy::too_many_arguments)]
pub fn train_driving(
    scenarios: &[Scenario],
    env_cfg: &EnvConfig,
    sac_cfg: &SacConfig,
    features: &dyn FeatureProvider,
    epochs: usize,
    workers: usize,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Sac, TrainError> {
    sac_cfg.validate().map_err(TrainError::Config)?;
    env_cfg.validate().map_err(TrainError::Config)?;
    if scenarios.is_empty() {
        return Err(TrainError::Config("no scenarios to train on".into()));
    }
    let obs_dim = FusedObserver { provider: features }.dim();
    let mut sac = Sac::new(sac_cfg.clone(), obs_dim, driving_bounds(&env_cfg.vehicle));
    let mut buffer = ReplayBuffer::new(sac_cfg.capacity, seed);
    for epoch in 0..epochs {
        let mut classes = Vec::new();
        let mut transitions = 0;
        let mut losses: Vec<Losses> = Vec::new();
        for chunk in scenarios.chunks(sac_cfg.cadence) {
            let policy = RlPolicy::snapshot(&sac, features, true);
            let observer = FusedObserver { provider: features };
            let eps = simulate_parallel(chunk, &policy, env_cfg, workers, seed.wrapping_add(epoch as u64), Some(&observer))?;
            for ep in eps {
                classes.push(ep.result.terminal);
                transitions += ep.transitions.len();
                for t in ep.transitions {
                    buffer.push(t);
                }
            }
            if buffer.len() >= sac_cfg.batch_size {
                for _ in 0..sac_cfg.updates_per_train {
                    let idx = buffer.sample_indices(sac_cfg.batch_size);
                    let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i).expect("in range")).collect();
                    losses.push(sac.update(&Batch::from_transitions(&batch))?);
                }
            }
        }
        let n = losses.len() as f64;
        let mean_losses = (!losses.is_empty()).then(|| Losses {
            q1: losses.iter().map(|l| l.q1).sum::<f64>() / n,
            q2: losses.iter().map(|l| l.q2).sum::<f64>() / n,
            v: losses.iter().map(|l| l.v).sum::<f64>() / n,
            actor: losses.iter().map(|l| l.actor).sum::<f64>() / n,
        });
        let report = MetricsReport::from_classes(&classes).unwrap_or(MetricsReport {
            scenarios: 0,
            completion: 0.0,
            collision: 0.0,
            offroad: 0.0,
            stuck: 0.0,
        });
        on_epoch(&EpochStats {
            epoch,
            report,
            transitions,
            updates: sac.updates(),
            mean_losses,
        });
    }
    Ok(sac)
}
