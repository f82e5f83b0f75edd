//! Training algorithms (PPO, A2C, REINFORCE, Random) over the naive,
//! Markowitz and recursive-utility objectives.
//!
//! The recursive objective needs a learned value function for both its
//! certainty-equivalent target and its advantage, so it is only accepted
//! together with the critic-based algorithms.

mod model;
mod rollout;
mod trainer;
mod update;

use serde::{Deserialize, Serialize};

use crate::utility::EzParams;
use crate::{Error, Result};

pub use model::{ActorCritic, Gradients, Optimizers};
pub use rollout::{collect_rollout, random_agent_action, Sample, Trajectory};
pub use trainer::{evaluate_policy, EvalMode, Trainer, UpdateDiagnostics};
pub use update::{
    a2c_loss, a2c_update, compute_advantages, critic_loss, ppo_minibatch_loss, ppo_update, reinforce_loss,
    reinforce_returns, reinforce_update, LossBreakdown,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    A2c,
    Reinforce,
    Random,
}

impl Algorithm {
    pub fn has_critic(self) -> bool {
        matches!(self, Algorithm::Ppo | Algorithm::A2c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "PPO",
            Algorithm::A2c => "A2C",
            Algorithm::Reinforce => "REINFORCE",
            Algorithm::Random => "Random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Naive,
    Markowitz,
    Recursive,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Naive => "Naive",
            Objective::Markowitz => "Markowitz",
            Objective::Recursive => "Recursive",
        }
    }
}

/// Advantage estimator used with the recursive objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecursiveAdvantage {
    /// Multi-step trace with state-dependent weights.
    Aae,
    /// One-step Bellman residual.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub objective: Objective,
    pub discount: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub time_horizon: usize,
    pub minibatch_size: usize,
    pub training_epochs: usize,
    pub value_loss_coef: f64,
    pub entropy_coef: f64,
    pub max_frames: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub recursive_advantage: RecursiveAdvantage,
    /// Trailing rows of training returns bootstrapped for the CE target.
    pub ce_window: usize,
    pub init_log_std: f64,
    /// Std of the Random agent's increments.
    pub random_std: f64,
    pub reinforce_baseline: bool,
    /// Adds a sigmoid-bounded consumption-ratio output to the actor.
    pub learn_kappa: bool,
    /// Recursive critic of the form `exp(w) * positive(raw)`, matching the
    /// degree-one homogeneity of the value in wealth.
    pub wealth_scaled_critic: bool,
    /// Supervised steps pulling the actor mean toward the allocation prior.
    pub prior_pretrain_steps: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub ez: EzParams,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            objective: Objective::Recursive,
            discount: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            time_horizon: 128,
            minibatch_size: 64,
            training_epochs: 4,
            value_loss_coef: 0.1,
            entropy_coef: 0.0,
            max_frames: 2520,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            recursive_advantage: RecursiveAdvantage::Aae,
            ce_window: 252,
            init_log_std: -1.0,
            random_std: 0.1,
            reinforce_baseline: true,
            learn_kappa: false,
            wealth_scaled_critic: false,
            prior_pretrain_steps: 0,
            hidden: vec![128, 128],
            lr: 0.02,
            ez: EzParams::default(),
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objective == Objective::Recursive && !self.algorithm.has_critic() {
            return Err(Error::config(format!(
                "the recursive objective is only defined for critic-based algorithms (PPO, A2C); got {}",
                self.algorithm.name()
            )));
        }
        if self.objective == Objective::Recursive {
            self.ez.validate()?;
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("discount and lambda must lie in [0, 1]"));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::config("clip_eps must be positive"));
        }
        if self.time_horizon == 0 || self.minibatch_size == 0 || self.training_epochs == 0 {
            return Err(Error::config("time_horizon, minibatch_size and training_epochs must be >= 1"));
        }
        if self.max_frames == 0 {
            return Err(Error::config("max_frames must be >= 1"));
        }
        if self.ce_window == 0 {
            return Err(Error::config("ce_window must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr must be positive"));
        }
        if !(self.random_std >= 0.0) {
            return Err(Error::config("random_std must be >= 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    pub fn aae_config(&self) -> crate::advantage::AaeConfig {
        crate::advantage::AaeConfig {
            beta: self.ez.beta,
            lambda: self.lambda,
            gamma: self.ez.gamma,
            psi: self.ez.psi,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recursive_requires_critic() {
        for alg in [Algorithm::Reinforce, Algorithm::Random] {
            let cfg = AgentConfig {
                algorithm: alg,
                ..AgentConfig::default()
            };
            let err = cfg.validate().unwrap_err().to_string();
            assert!(err.contains("only defined for critic-based algorithms"), "{err}");
        }
        for alg in [Algorithm::Ppo, Algorithm::A2c] {
            let cfg = AgentConfig {
                algorithm: alg,
                ..AgentConfig::default()
            };
            cfg.validate().unwrap();
        }
        let naive = AgentConfig {
            algorithm: Algorithm::Reinforce,
            objective: Objective::Naive,
            ..AgentConfig::default()
        };
        naive.validate().unwrap();
    }

    #[test]
    fn defaults_mirror_reference_hyperparameters() {
        let c = AgentConfig::default();
        assert_eq!((c.discount, c.lambda, c.clip_eps), (0.99, 0.95, 0.2));
        assert_eq!((c.time_horizon, c.minibatch_size, c.training_epochs), (128, 64, 4));
        assert_eq!((c.value_loss_coef, c.max_frames, c.lr), (0.1, 2520, 0.02));
        assert_eq!(c.hidden, vec![128, 128]);
        assert_eq!((c.ez.beta, c.ez.gamma, c.ez.psi, c.ez.kappa, c.ez.k), (0.99, 5.0, 1.0, 0.1, 10));
    }
}
