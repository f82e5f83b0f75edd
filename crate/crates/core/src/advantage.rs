//! Advantage estimators: the one-step recursive-utility residual, the
//! approximate advantage estimator (AAE) with state-dependent weights, and
//! standard GAE for the discounted objectives.

use serde::{Deserialize, Serialize};

use crate::utility::EPS_GAMMA;
use crate::{Error, Result};

/// Per-step inputs of the advantage estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub value: f64,
    pub ez_target: Option<f64>,
    pub reward: Option<f64>,
    pub next_value: f64,
    /// Last step of an episode; the trace does not bootstrap across it.
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AaeConfig {
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub psi: f64,
}

impl AaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if (self.gamma - 1.0).abs() <= EPS_GAMMA {
            return Err(Error::config("AAE weights need gamma != 1"));
        }
        Ok(())
    }
}

/// `delta_t = T_t - V(s_t)`.
pub fn td_error_ez(rec: &StepRecord) -> Result<f64> {
    rec.ez_target
        .map(|t| t - rec.value)
        .ok_or_else(|| Error::invalid("step record carries no recursive-utility target"))
}

/// `beta * (V^(1-gamma))^((1-1/psi)/(1-gamma) - 1) * V^(-gamma) * (1-gamma)`,
/// with the value-dependent factors evaluated in log space.
pub fn omega_weight(next_value: f64, cfg: &AaeConfig) -> Result<f64> {
    if !(next_value > 0.0) {
        return Err(Error::invalid(format!("omega needs a positive value, got {next_value}")));
    }
    let one_minus_gamma = 1.0 - cfg.gamma;
    if one_minus_gamma.abs() <= EPS_GAMMA {
        return Err(Error::invalid("omega is undefined at gamma = 1"));
    }
    let log_v = next_value.ln();
    let rho = 1.0 - 1.0 / cfg.psi;
    let exponent = rho / one_minus_gamma - 1.0;
    let log_power_term = exponent * (one_minus_gamma * log_v);
    let log_marginal = -cfg.gamma * log_v;
    Ok(cfg.beta * (log_power_term + log_marginal).exp() * one_minus_gamma)
}

/// Backward trace `A_t = delta_t + decay_t * A_{t+1}` with `A_T = 0`; a
/// `done` step does not bootstrap.
pub fn weighted_trace(deltas: &[f64], decay: &[f64], dones: &[bool]) -> Result<Vec<f64>> {
    if deltas.len() != decay.len() || deltas.len() != dones.len() {
        return Err(Error::invalid("trace inputs differ in length"));
    }
    let mut out = vec![0.0; deltas.len()];
    let mut next = 0.0;
    for t in (0..deltas.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = deltas[t] + decay[t] * next;
        out[t] = next;
    }
    Ok(out)
}

/// AAE over one time-ordered buffer.
pub fn aae(records: &[StepRecord], cfg: &AaeConfig) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::invalid("AAE needs at least one record"));
    }
    cfg.validate()?;
    let deltas = records.iter().map(td_error_ez).collect::<Result<Vec<_>>>()?;
    let omegas = records
        .iter()
        .map(|r| omega_weight(r.next_value, cfg))
        .collect::<Result<Vec<_>>>()?;
    let dones: Vec<bool> = records.iter().map(|r| r.done).collect();
    aae_with_omegas(&deltas, &omegas, &dones, cfg)
}

/// AAE with externally supplied weights.
pub fn aae_with_omegas(deltas: &[f64], omegas: &[f64], dones: &[bool], cfg: &AaeConfig) -> Result<Vec<f64>> {
    let decay: Vec<f64> = omegas.iter().map(|w| cfg.beta * cfg.lambda * w).collect();
    weighted_trace(deltas, &decay, dones)
}

/// GAE with `delta_t = r_t + discount * V(s_{t+1}) - V(s_t)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    discount: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n || next_values.len() != n || dones.len() != n {
        return Err(Error::invalid("GAE inputs differ in length"));
    }
    if !(0.0..=1.0).contains(&discount) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("discount and lambda must lie in [0, 1]"));
    }
    let deltas: Vec<f64> = (0..n)
        .map(|t| rewards[t] + discount * next_values[t] - values[t])
        .collect();
    weighted_trace(&deltas, &vec![discount * lambda; n], dones)
}

/// Zero mean, unit variance (population). Constant inputs are only
/// centred.
pub fn normalize(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-12 {
            *a /= std;
        }
    }
}
