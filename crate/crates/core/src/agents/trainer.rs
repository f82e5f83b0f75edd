use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Optimizers;
use super::update::{a2c_update, ppo_update, reinforce_update, LossBreakdown};
use super::{collect_rollout, random_agent_action, ActorCritic, AgentConfig, Algorithm, Objective};
use crate::data::ReturnsTable;
use crate::env::{project_simplex, run_episode, sample_covariance, EpisodeConfig, EpisodeLog, EpisodeStart, PortfolioEnv, RewardKind};
use crate::nn::{self, Adam};
use crate::prior;
use crate::{Error, Result};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    pub update: usize,
    pub frames: usize,
    pub loss: LossBreakdown,
    pub mean_reward: f64,
    pub mean_value: f64,
    /// Mean EZ target, recursive objective only.
    pub mean_target: Option<f64>,
    pub log_wealth: f64,
}

impl UpdateDiagnostics {
    pub const HEADER: &'static str =
        "update,frames,policy_loss,value_loss,entropy,clip_fraction,approx_kl,mean_advantage,mean_reward,mean_value,mean_target,log_wealth";

    pub fn write_line(&self, mut out: impl Write) -> std::io::Result<()> {
        let l = &self.loss;
        let target = self.mean_target.map_or_else(|| "undefined".to_string(), |t| format!("{t:?}"));
        writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?}",
            self.update,
            self.frames,
            l.policy_loss,
            l.value_loss,
            l.entropy,
            l.clip_fraction,
            l.approx_kl,
            l.mean_advantage,
            self.mean_reward,
            self.mean_value,
            target,
            self.log_wealth
        )
    }
}

/// Evaluation behaviour of the actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Deterministic policy mean.
    Mean,
    /// Sample from the policy.
    Sample,
    /// The Random agent's increments.
    Random,
}

fn episode_for(cfg: &AgentConfig, episode: &EpisodeConfig) -> EpisodeConfig {
    EpisodeConfig {
        reward_kind: match cfg.objective {
            Objective::Markowitz => RewardKind::Markowitz,
            // recursive runs log the naive reward; it does not enter the target
            Objective::Naive | Objective::Recursive => RewardKind::Naive,
        },
        ..episode.clone()
    }
}

/// Single deterministic pass over `segment` from equal weights.
pub fn evaluate_policy<R: Rng + ?Sized>(
    model: &ActorCritic,
    cfg: &AgentConfig,
    segment: ReturnsTable,
    risk_history: Vec<Vec<f64>>,
    episode: &EpisodeConfig,
    mode: EvalMode,
    rng: &mut R,
) -> Result<EpisodeLog> {
    let mut env = PortfolioEnv::new(segment, risk_history, episode_for(cfg, episode))?;
    let n = model.n_assets;
    let mut failure = None;
    let log = run_episode(&mut env, EpisodeStart::FullSegment, rng, |state, rng| {
        let obs = state.observation();
        let action = match mode {
            EvalMode::Random => random_agent_action(n, cfg.random_std, rng),
            EvalMode::Mean => model.policy_mean(&obs).unwrap_or_else(|e| {
                failure = Some(e);
                vec![0.0; model.action_dim()]
            }),
            EvalMode::Sample => model
                .policy_mean(&obs)
                .and_then(|m| model.head.sample(&m, rng))
                .map(|(a, _)| a)
                .unwrap_or_else(|e| {
                    failure = Some(e);
                    vec![0.0; model.action_dim()]
                }),
        };
        action[..n].to_vec()
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(log),
    }
}

/// Owns one agent, its optimizer state and its training environment.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: AgentConfig,
    pub model: ActorCritic,
    opt: Optimizers,
    rng: ChaCha8Rng,
    env: PortfolioEnv,
    train: ReturnsTable,
    frames: usize,
    updates: usize,
}

impl Trainer {
    pub fn new(cfg: AgentConfig, episode: &EpisodeConfig, train: ReturnsTable) -> Result<Self> {
        cfg.validate()?;
        let episode = episode_for(&cfg, episode);
        if train.n_rows() < episode.episode_length {
            return Err(Error::config(format!(
                "training segment has {} rows, shorter than episode_length {}",
                train.n_rows(),
                episode.episode_length
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = ActorCritic::new(train.n_assets(), &cfg, &mut rng)?;
        let opt = Optimizers::new(&model, cfg.lr);
        let mut env = PortfolioEnv::new(train.clone(), Vec::new(), episode)?;
        env.reset(EpisodeStart::RandomOffset, &mut rng)?;
        Ok(Self {
            cfg,
            model,
            opt,
            rng,
            env,
            train,
            frames: 0,
            updates: 0,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn is_finished(&self) -> bool {
        self.frames >= self.cfg.max_frames
    }

    /// Supervised steps moving the actor mean toward the increment that
    /// reaches the projected allocation prior from random current weights.
    /// The prior uses a VAR fit on trailing 21-day mean log returns.
    pub fn pretrain_prior(&mut self, steps: usize) -> Result<Vec<f64>> {
        let n = self.train.n_assets();
        let states = prior::trailing_mean_states(&self.train, 21);
        let logs: Vec<Vec<f64>> = self
            .train
            .returns
            .iter()
            .map(|r| r.iter().map(|x| x.ln_1p()).collect())
            .collect();
        let var = prior::fit_var(&states[..states.len() - 1], &logs[1..])?;
        let cov = sample_covariance(&self.train.returns);
        let sigma = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
        let x = states.last().expect("non-empty training segment");
        let target = prior::prior_allocation(&var, x, &sigma, &self.cfg.ez, None)?;

        let mut adam = Adam::new(self.model.actor.n_params(), self.cfg.lr);
        let batch = 32;
        for _ in 0..steps {
            let mut grads = vec![0.0; self.model.actor.n_params()];
            for _ in 0..batch {
                let raw: Vec<f64> = (0..n).map(|_| self.rng.random::<f64>()).collect();
                let prev = project_simplex(&raw)?;
                let mut obs = vec![0.0];
                obs.extend(&prev);
                let (mean, cache) = self.model.policy_mean_cached(&obs)?;
                let mut g = vec![0.0; mean.len()];
                for j in 0..n {
                    g[j] = 2.0 * (mean[j] - (target[j] - prev[j])) / (batch * n) as f64;
                }
                self.model.actor.backward(&cache, &g, &mut grads)?;
            }
            adam.step(self.model.actor.params_mut(), &grads)?;
        }
        Ok(target)
    }

    /// Collects one rollout (capped at the remaining frame budget) and
    /// applies the configured update.
    pub fn step_update(&mut self) -> Result<UpdateDiagnostics> {
        let horizon = self.cfg.time_horizon.min(self.cfg.max_frames - self.frames);
        let traj = collect_rollout(&self.model, &self.cfg, &mut self.env, &self.train, horizon, &mut self.rng)?;
        let loss = match self.cfg.algorithm {
            Algorithm::Ppo => ppo_update(&mut self.model, &mut self.opt, &traj, &self.cfg, &mut self.rng)?,
            Algorithm::A2c => a2c_update(&mut self.model, &mut self.opt, &traj, &self.cfg)?,
            Algorithm::Reinforce => reinforce_update(&mut self.model, &mut self.opt, &traj, &self.cfg)?,
            Algorithm::Random => LossBreakdown::default(),
        };
        self.frames += traj.len();
        self.updates += 1;
        let n = traj.len() as f64;
        let targets: Vec<f64> = traj.samples.iter().filter_map(|s| s.ez_target).collect();
        Ok(UpdateDiagnostics {
            update: self.updates,
            frames: self.frames,
            loss,
            mean_reward: traj.samples.iter().map(|s| s.reward).sum::<f64>() / n,
            mean_value: traj.samples.iter().map(|s| s.value).sum::<f64>() / n,
            mean_target: (!targets.is_empty()).then(|| targets.iter().sum::<f64>() / targets.len() as f64),
            log_wealth: traj.samples.last().map_or(0.0, |s| s.next_log_wealth),
        })
    }

    /// Runs updates until `max_frames` transitions have been collected.
    pub fn train<F: FnMut(&UpdateDiagnostics)>(&mut self, mut on_update: F) -> Result<Vec<UpdateDiagnostics>> {
        if self.cfg.prior_pretrain_steps > 0 && self.frames == 0 && self.cfg.algorithm != Algorithm::Random {
            self.pretrain_prior(self.cfg.prior_pretrain_steps)?;
        }
        let mut out = Vec::new();
        while !self.is_finished() {
            let d = self.step_update()?;
            on_update(&d);
            out.push(d);
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> String {
        nn::encode_tensors(&self.model.to_tensors())
    }

    /// Deterministic evaluation rng derived from the configured seed.
    pub fn eval_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5EED_E7A1)
    }
}
