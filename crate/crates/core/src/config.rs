//! Sectioned TOML run configuration. Key names follow the usual run-file
//! vocabulary (`max_frame`, `lam`, `training_epoch`, `ce_samples`,
//! `hid_layers`, ...) so existing configs transcribe line by line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, Algorithm, Objective, RecursiveAdvantage};
use crate::env::{EpisodeConfig, RewardKind};
use crate::utility::EzParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Wide price file (`date,asset1,...`), input of `ingest`.
    pub prices: PathBuf,
    /// Directory holding the per-split files and the manifest.
    pub splits_dir: PathBuf,
    pub n_splits: usize,
    pub train_ratio_min: f64,
    pub train_ratio_max: f64,
    /// Per-tail winsorization quantile, fitted on each split's train range.
    pub winsor_q: f64,
    pub max_missing_frac: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            prices: PathBuf::from("data/data.csv"),
            splits_dir: PathBuf::from("splits"),
            n_splits: 10,
            train_ratio_min: 0.5,
            train_ratio_max: 0.9,
            winsor_q: 0.005,
            max_missing_frac: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub max_frame: usize,
    pub episode_length: usize,
    /// Expected asset count; 0 accepts whatever the data holds.
    pub num_assets: usize,
    /// Per-step reward. The recursive objective only logs it.
    pub reward: RewardKind,
    pub markowitz_lambda: f64,
    pub varcov_window: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        Self {
            max_frame: 2520,
            episode_length: e.episode_length,
            num_assets: 0,
            reward: e.reward_kind,
            markowitz_lambda: e.markowitz_lambda,
            varcov_window: e.varcov_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub algorithm: Algorithm,
    pub objective: Objective,
    /// Discount of the naive / Markowitz objectives.
    pub gamma: f64,
    pub lam: f64,
    pub clip_eps: f64,
    pub time_horizon: usize,
    pub minibatch_size: usize,
    pub training_epoch: usize,
    pub val_loss_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub recursive_advantage: RecursiveAdvantage,
    pub ce_window: usize,
    pub init_log_std: f64,
    pub random_std: f64,
    pub reinforce_baseline: bool,
    pub learn_kappa: bool,
    pub wealth_scaled_critic: bool,
    pub prior_pretrain_steps: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentConfig::default();
        Self {
            algorithm: a.algorithm,
            objective: a.objective,
            gamma: a.discount,
            lam: a.lambda,
            clip_eps: a.clip_eps,
            time_horizon: a.time_horizon,
            minibatch_size: a.minibatch_size,
            training_epoch: a.training_epochs,
            val_loss_coef: a.value_loss_coef,
            entropy_coef: a.entropy_coef,
            max_grad_norm: a.max_grad_norm,
            normalize_advantages: a.normalize_advantages,
            recursive_advantage: a.recursive_advantage,
            ce_window: a.ce_window,
            init_log_std: a.init_log_std,
            random_std: a.random_std,
            reinforce_baseline: a.reinforce_baseline,
            learn_kappa: a.learn_kappa,
            wealth_scaled_critic: a.wealth_scaled_critic,
            prior_pretrain_steps: a.prior_pretrain_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecursiveSection {
    pub beta: f64,
    /// Relative risk aversion.
    pub gamma: f64,
    pub psi: f64,
    pub kappa_init: f64,
    pub ce_samples: usize,
}

impl Default for RecursiveSection {
    fn default() -> Self {
        let p = EzParams::default();
        Self {
            beta: p.beta,
            gamma: p.gamma,
            psi: p.psi,
            kappa_init: p.kappa,
            ce_samples: p.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hid_layers: Vec<usize>,
    pub lr: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hid_layers: vec![128, 128],
            lr: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Split ids to run; empty means every split in the manifest.
    pub splits: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            splits: Vec::new(),
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub env: EnvSection,
    pub agent: AgentSection,
    pub recursive: RecursiveSection,
    pub network: NetworkSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative data and output paths are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for p in [&mut cfg.data.prices, &mut cfg.data.splits_dir, &mut cfg.run.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.agent_config(0).validate()?;
        self.episode_config().validate()?;
        let reward_matches = match self.agent.objective {
            Objective::Naive => self.env.reward == RewardKind::Naive,
            Objective::Markowitz => self.env.reward == RewardKind::Markowitz,
            Objective::Recursive => true,
        };
        if !reward_matches {
            return Err(Error::config(format!(
                "env.reward = {:?} contradicts agent.objective = {}",
                self.env.reward,
                self.agent.objective.name()
            )));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds must list at least one seed"));
        }
        if self.run.workers == 0 {
            return Err(Error::config("run.workers must be >= 1"));
        }
        if self.data.n_splits == 0 {
            return Err(Error::config("data.n_splits must be >= 1"));
        }
        Ok(())
    }

    pub fn ez_params(&self) -> EzParams {
        EzParams {
            beta: self.recursive.beta,
            gamma: self.recursive.gamma,
            psi: self.recursive.psi,
            kappa: self.recursive.kappa_init,
            k: self.recursive.ce_samples,
        }
    }

    pub fn agent_config(&self, seed: u64) -> AgentConfig {
        let a = &self.agent;
        AgentConfig {
            algorithm: a.algorithm,
            objective: a.objective,
            discount: a.gamma,
            lambda: a.lam,
            clip_eps: a.clip_eps,
            time_horizon: a.time_horizon,
            minibatch_size: a.minibatch_size,
            training_epochs: a.training_epoch,
            value_loss_coef: a.val_loss_coef,
            entropy_coef: a.entropy_coef,
            max_frames: self.env.max_frame,
            max_grad_norm: a.max_grad_norm,
            normalize_advantages: a.normalize_advantages,
            recursive_advantage: a.recursive_advantage,
            ce_window: a.ce_window,
            init_log_std: a.init_log_std,
            random_std: a.random_std,
            reinforce_baseline: a.reinforce_baseline,
            learn_kappa: a.learn_kappa,
            wealth_scaled_critic: a.wealth_scaled_critic,
            prior_pretrain_steps: a.prior_pretrain_steps,
            hidden: self.network.hid_layers.clone(),
            lr: self.network.lr,
            ez: self.ez_params(),
            seed,
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            episode_length: self.env.episode_length,
            reward_kind: self.env.reward,
            markowitz_lambda: self.env.markowitz_lambda,
            varcov_window: self.env.varcov_window,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[env]
max_frame = 2520
episode_length = 252
num_assets = 110
reward = "naive"

[agent]
algorithm = "ppo"
objective = "recursive"
gamma = 0.99
lam = 0.95
clip_eps = 0.2
time_horizon = 128
minibatch_size = 64
training_epoch = 4
val_loss_coef = 0.1

[recursive]
beta = 0.99
gamma = 5.0
psi = 1.0
kappa_init = 0.1
ce_samples = 10

[network]
hid_layers = [128, 128]
lr = 0.02
"#;

    #[test]
    fn reference_values_parse_to_defaults() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let defaults = RunConfig {
            env: EnvSection {
                num_assets: 110,
                ..EnvSection::default()
            },
            ..RunConfig::default()
        };
        assert_eq!(cfg, defaults);
        assert_eq!(cfg.agent_config(0), AgentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::parse(SAMPLE).unwrap();
        cfg.run.splits = vec![1, 3];
        cfg.run.seeds = vec![7, 8];
        cfg.network.hid_layers = vec![16];
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_pairs() {
        assert!(RunConfig::parse("[env]\nmax_frames = 3\n").is_err());
        let err = RunConfig::parse("[agent]\nalgorithm = \"reinforce\"\n").unwrap_err();
        assert!(err.to_string().contains("only defined for critic-based algorithms"));
        let err = RunConfig::parse("[agent]\nobjective = \"markowitz\"\n").unwrap_err();
        assert!(err.to_string().contains("contradicts"));
    }
}
