use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ActorCritic, AgentConfig, Algorithm, Objective};
use crate::data::ReturnsTable;
use crate::env::{peek_next_states, sample_return_rows, EpisodeStart, PortfolioEnv};
use crate::utility::ez_target_with_kappa;
use crate::{Error, Result};

/// One collected transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    /// Raw policy sample (increment, plus the kappa logit when learned).
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub applied_weights: Vec<f64>,
    pub reward: f64,
    pub port_return: f64,
    pub value: f64,
    /// Critic at the realised next state.
    pub next_value: f64,
    pub ez_target: Option<f64>,
    /// Critic at each of the K hypothetical next states (recursive only).
    pub next_sample_values: Vec<f64>,
    pub kappa: Option<f64>,
    pub done: bool,
    pub next_log_wealth: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Zero-mean Gaussian increments; `std = 0` holds the previous weights.
pub fn random_agent_action<R: Rng + ?Sized>(n_assets: usize, std: f64, rng: &mut R) -> Vec<f64> {
    if std <= 0.0 {
        return vec![0.0; n_assets];
    }
    let dist = Normal::new(0.0, std).expect("std is positive and finite");
    (0..n_assets).map(|_| dist.sample(rng)).collect()
}

/// Steps `env` for `horizon` transitions with the current policy, starting
/// a fresh random-offset episode whenever the previous one ends.
///
/// For the recursive objective each step also bootstraps K return rows from
/// the trailing `ce_window` rows of `history` (the training returns, indexed
/// like the environment segment), evaluates the critic on the K peeked next
/// states and stores the resulting value target.
pub fn collect_rollout<R: Rng + ?Sized>(
    model: &ActorCritic,
    cfg: &AgentConfig,
    env: &mut PortfolioEnv,
    history: &ReturnsTable,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if env.n_assets() != model.n_assets {
        return Err(Error::invalid("agent and environment disagree on asset count"));
    }
    let mut traj = Trajectory {
        samples: Vec::with_capacity(horizon),
    };
    for _ in 0..horizon {
        if env.done() {
            env.reset(EpisodeStart::RandomOffset, rng)?;
        }
        let state = env.state().clone();
        let obs = state.observation();
        let (action, log_prob) = match cfg.algorithm {
            Algorithm::Random => (random_agent_action(model.n_assets, cfg.random_std, rng), 0.0),
            _ => {
                let mean = model.policy_mean(&obs)?;
                model.head.sample(&mean, rng)?
            }
        };
        let (delta, learned_kappa) = model.split_action(&action);
        let row = env.current_row();
        let out = env.step(delta)?;
        let next_obs = out.next.observation();
        let value = model.value(&obs)?;
        let next_value = model.value(&next_obs)?;

        let (ez_target, next_sample_values, kappa) = if cfg.objective == Objective::Recursive {
            let rows = sample_return_rows(history, cfg.ce_window, row.saturating_sub(1), cfg.ez.k, rng)?;
            let peeked = peek_next_states(&state, &out.applied_weights, &rows)?;
            let values = peeked
                .iter()
                .map(|s| model.value(&s.observation()))
                .collect::<Result<Vec<_>>>()?;
            let kappa = learned_kappa.unwrap_or(cfg.ez.kappa);
            let target = ez_target_with_kappa(state.log_wealth, kappa, &values, &cfg.ez)?;
            (Some(target), values, Some(kappa))
        } else {
            (None, Vec::new(), None)
        };

        traj.samples.push(Sample {
            obs,
            action,
            log_prob,
            applied_weights: out.applied_weights,
            reward: out.reward,
            port_return: out.port_return,
            value,
            next_value,
            ez_target,
            next_sample_values,
            kappa,
            done: env.done(),
            next_log_wealth: out.next.log_wealth,
        });
    }
    Ok(traj)
}
