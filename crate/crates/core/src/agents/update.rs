use rand::seq::SliceRandom;
use rand::Rng;

use super::model::Optimizers;
use super::{ActorCritic, AgentConfig, Algorithm, Gradients, Objective, RecursiveAdvantage, Sample, Trajectory};
use crate::advantage::{self, StepRecord};
use crate::nn::clip_grad_norm;
use crate::{Error, Result};

/// Loss components of one update (averaged over minibatches).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Mean advantage before normalization.
    pub mean_advantage: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown, w: f64) {
        self.policy_loss += w * other.policy_loss;
        self.value_loss += w * other.value_loss;
        self.entropy += w * other.entropy;
        self.total += w * other.total;
        self.clip_fraction += w * other.clip_fraction;
        self.approx_kl += w * other.approx_kl;
        self.mean_advantage += w * other.mean_advantage;
    }
}

/// Advantages and critic regression targets for a critic-based agent.
///
/// Recursive: targets are the stored EZ targets; advantages come from the
/// AAE trace or the one-step residual. Otherwise: GAE on the per-step
/// reward with one-step discounted targets. Episode ends are treated as
/// time-limit truncations: values still bootstrap, traces do not cross.
pub fn compute_advantages(traj: &Trajectory, cfg: &AgentConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut adv, targets) = raw_advantages(traj, cfg)?;
    if cfg.normalize_advantages {
        advantage::normalize(&mut adv);
    }
    Ok((adv, targets))
}

fn prepared_advantages(traj: &Trajectory, cfg: &AgentConfig) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let (mut adv, targets) = raw_advantages(traj, cfg)?;
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    if cfg.normalize_advantages {
        advantage::normalize(&mut adv);
    }
    Ok((adv, targets, mean))
}

fn raw_advantages(traj: &Trajectory, cfg: &AgentConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if traj.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let s = &traj.samples;
    let (adv, targets) = match cfg.objective {
        Objective::Recursive => {
            let records: Vec<StepRecord> = s
                .iter()
                .map(|x| StepRecord {
                    value: x.value,
                    ez_target: x.ez_target,
                    reward: None,
                    next_value: x.next_value,
                    done: x.done,
                })
                .collect();
            let targets = s
                .iter()
                .map(|x| x.ez_target.ok_or_else(|| Error::invalid("recursive sample without a target")))
                .collect::<Result<Vec<_>>>()?;
            let adv = match cfg.recursive_advantage {
                RecursiveAdvantage::Aae => advantage::aae(&records, &cfg.aae_config())?,
                RecursiveAdvantage::Residual => records.iter().map(advantage::td_error_ez).collect::<Result<_>>()?,
            };
            (adv, targets)
        }
        Objective::Naive | Objective::Markowitz => {
            let rewards: Vec<f64> = s.iter().map(|x| x.reward).collect();
            let values: Vec<f64> = s.iter().map(|x| x.value).collect();
            let next: Vec<f64> = s.iter().map(|x| x.next_value).collect();
            let dones: Vec<bool> = s.iter().map(|x| x.done).collect();
            let adv = advantage::gae(&rewards, &values, &next, &dones, cfg.discount, cfg.lambda)?;
            let targets = rewards.iter().zip(&next).map(|(r, v)| r + cfg.discount * v).collect();
            (adv, targets)
        }
    };
    if adv.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numerical("non-finite advantages".into()));
    }
    Ok((adv, targets))
}

/// `mean((V(s) - target)^2)` over `idx` and its critic gradient, added into
/// `grads` scaled by `coef`.
pub fn critic_loss(
    model: &ActorCritic,
    samples: &[Sample],
    targets: &[f64],
    idx: &[usize],
    coef: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let n = idx.len() as f64;
    let mut loss = 0.0;
    for &i in idx {
        let (v, dv, cache) = model.value_cached(&samples[i].obs)?;
        let resid = v - targets[i];
        loss += resid * resid / n;
        if coef != 0.0 {
            model.critic.backward(&cache, &[coef * 2.0 * resid / n * dv], &mut grads.critic)?;
        }
    }
    Ok(loss)
}

/// Policy-gradient pass shared by the actor losses. `weight(i, lp_new)`
/// returns the per-sample surrogate and its derivative with respect to the
/// new log-probability; both are averaged over `idx`.
fn policy_pass<F>(model: &ActorCritic, samples: &[Sample], idx: &[usize], grads: &mut Gradients, mut weight: F) -> Result<f64>
where
    F: FnMut(usize, f64) -> (f64, f64),
{
    let n = idx.len() as f64;
    let mut surrogate = 0.0;
    for &i in idx {
        let (mean, cache) = model.policy_mean_cached(&samples[i].obs)?;
        let (lp, d_mean, d_log_std) = model.head.log_prob(&mean, &samples[i].action);
        let (s, ds_dlp) = weight(i, lp);
        surrogate += s / n;
        // loss = -surrogate
        let g = -ds_dlp / n;
        if g != 0.0 {
            let grad_out: Vec<f64> = d_mean.iter().map(|d| g * d).collect();
            model.actor.backward(&cache, &grad_out, &mut grads.actor)?;
            for (acc, d) in grads.log_std.iter_mut().zip(&d_log_std) {
                *acc += g * d;
            }
        }
    }
    Ok(-surrogate)
}

fn add_entropy(model: &ActorCritic, coef: f64, grads: &mut Gradients) -> f64 {
    if coef != 0.0 {
        for g in &mut grads.log_std {
            *g -= coef;
        }
    }
    model.head.entropy()
}

/// Clipped-surrogate PPO loss over the minibatch `idx` with gradients.
pub fn ppo_minibatch_loss(
    model: &ActorCritic,
    samples: &[Sample],
    advantages: &[f64],
    targets: &[f64],
    idx: &[usize],
    cfg: &AgentConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let mut grads = Gradients::zeros(model);
    let n = idx.len() as f64;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let mut clipped = 0usize;
    let mut kl = 0.0;
    let policy_loss = policy_pass(model, samples, idx, &mut grads, |i, lp| {
        let a = advantages[i];
        let log_ratio = lp - samples[i].log_prob;
        let ratio = log_ratio.exp();
        kl -= log_ratio / n;
        if (ratio - 1.0).abs() > cfg.clip_eps {
            clipped += 1;
        }
        let surr1 = ratio * a;
        let surr2 = ratio.clamp(lo, hi) * a;
        if surr1 <= surr2 {
            (surr1, a * ratio)
        } else {
            (surr2, 0.0)
        }
    })?;
    let value_loss = critic_loss(model, samples, targets, idx, cfg.value_loss_coef, &mut grads)?;
    let entropy = add_entropy(model, cfg.entropy_coef, &mut grads);
    let out = LossBreakdown {
        policy_loss,
        value_loss,
        entropy,
        total: policy_loss + cfg.value_loss_coef * value_loss - cfg.entropy_coef * entropy,
        clip_fraction: clipped as f64 / n,
        approx_kl: kl,
        mean_advantage: 0.0,
    };
    Ok((out, grads))
}

/// Advantage-weighted log-likelihood loss plus value loss over `idx`.
pub fn a2c_loss(
    model: &ActorCritic,
    samples: &[Sample],
    advantages: &[f64],
    targets: &[f64],
    idx: &[usize],
    cfg: &AgentConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let mut grads = Gradients::zeros(model);
    let policy_loss = policy_pass(model, samples, idx, &mut grads, |i, lp| (advantages[i] * lp, advantages[i]))?;
    let value_loss = critic_loss(model, samples, targets, idx, cfg.value_loss_coef, &mut grads)?;
    let entropy = add_entropy(model, cfg.entropy_coef, &mut grads);
    let out = LossBreakdown {
        policy_loss,
        value_loss,
        entropy,
        total: policy_loss + cfg.value_loss_coef * value_loss - cfg.entropy_coef * entropy,
        ..LossBreakdown::default()
    };
    Ok((out, grads))
}

/// Discounted Monte Carlo returns within the buffer, restarting after each
/// `done`; returns after subtracting the batch-mean baseline when enabled.
pub fn reinforce_returns(traj: &Trajectory, cfg: &AgentConfig) -> Vec<f64> {
    let mut out = vec![0.0; traj.len()];
    let mut g = 0.0;
    for (t, s) in traj.samples.iter().enumerate().rev() {
        if s.done {
            g = 0.0;
        }
        g = s.reward + cfg.discount * g;
        out[t] = g;
    }
    if cfg.reinforce_baseline && !out.is_empty() {
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        for g in &mut out {
            *g -= mean;
        }
    }
    out
}

/// Return-weighted log-likelihood loss (no critic).
pub fn reinforce_loss(
    model: &ActorCritic,
    samples: &[Sample],
    returns: &[f64],
    cfg: &AgentConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let mut grads = Gradients::zeros(model);
    let idx: Vec<usize> = (0..samples.len()).collect();
    let policy_loss = policy_pass(model, samples, &idx, &mut grads, |i, lp| (returns[i] * lp, returns[i]))?;
    let entropy = add_entropy(model, cfg.entropy_coef, &mut grads);
    let out = LossBreakdown {
        policy_loss,
        entropy,
        total: policy_loss - cfg.entropy_coef * entropy,
        ..LossBreakdown::default()
    };
    Ok((out, grads))
}

fn apply_clipped(model: &mut ActorCritic, mut grads: Gradients, opt: &mut Optimizers, cfg: &AgentConfig) -> Result<()> {
    if cfg.max_grad_norm > 0.0 {
        clip_grad_norm(&mut [&mut grads.actor, &mut grads.log_std], cfg.max_grad_norm);
        clip_grad_norm(&mut [&mut grads.critic], cfg.max_grad_norm);
    }
    model.apply(&grads, opt)
}

fn check_finite(loss: &LossBreakdown) -> Result<()> {
    if loss.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "non-finite loss (policy {}, value {}, entropy {})",
            loss.policy_loss, loss.value_loss, loss.entropy
        )))
    }
}

/// `training_epochs` passes of shuffled minibatches.
pub fn ppo_update<R: Rng + ?Sized>(
    model: &mut ActorCritic,
    opt: &mut Optimizers,
    traj: &Trajectory,
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let (adv, targets, mean_adv) = prepared_advantages(traj, cfg)?;
    let mut idx: Vec<usize> = (0..traj.len()).collect();
    let mut summary = LossBreakdown::default();
    let mut count = 0usize;
    let mut parts = Vec::new();
    for _ in 0..cfg.training_epochs {
        idx.shuffle(rng);
        for batch in idx.chunks(cfg.minibatch_size) {
            let (loss, grads) = ppo_minibatch_loss(model, &traj.samples, &adv, &targets, batch, cfg)?;
            check_finite(&loss)?;
            apply_clipped(model, grads, opt, cfg)?;
            parts.push(loss);
            count += 1;
        }
    }
    for p in &parts {
        summary.accumulate(p, 1.0 / count as f64);
    }
    summary.mean_advantage = mean_adv;
    Ok(summary)
}

/// One full-batch step.
pub fn a2c_update(model: &mut ActorCritic, opt: &mut Optimizers, traj: &Trajectory, cfg: &AgentConfig) -> Result<LossBreakdown> {
    let (adv, targets, mean_adv) = prepared_advantages(traj, cfg)?;
    let idx: Vec<usize> = (0..traj.len()).collect();
    let (mut loss, grads) = a2c_loss(model, &traj.samples, &adv, &targets, &idx, cfg)?;
    check_finite(&loss)?;
    apply_clipped(model, grads, opt, cfg)?;
    loss.mean_advantage = mean_adv;
    Ok(loss)
}

pub fn reinforce_update(
    model: &mut ActorCritic,
    opt: &mut Optimizers,
    traj: &Trajectory,
    cfg: &AgentConfig,
) -> Result<LossBreakdown> {
    if cfg.objective == Objective::Recursive || cfg.algorithm != Algorithm::Reinforce {
        return Err(Error::config(
            "REINFORCE updates need the naive or Markowitz objective and the reinforce algorithm",
        ));
    }
    if traj.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let returns = reinforce_returns(traj, cfg);
    let (mut loss, grads) = reinforce_loss(model, &traj.samples, &returns, cfg)?;
    check_finite(&loss)?;
    apply_clipped(model, grads, opt, cfg)?;
    loss.mean_advantage = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(loss)
}
