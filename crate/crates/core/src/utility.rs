//! Recursive-utility mathematics: CES time aggregation, certainty
//! equivalents, the sampled value target and a tabular Bellman harness.
//!
//! Powers of the form `v^(1-gamma)` are taken in log space so that large
//! risk aversion and small values do not overflow.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Below this `|rho|` the CES aggregator switches to its Cobb–Douglas limit.
pub const EPS_RHO: f64 = 1e-6;
/// `gamma` closer than this to one is rejected.
pub const EPS_GAMMA: f64 = 1e-6;

/// Preference and estimator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EzParams {
    /// Time preference.
    pub beta: f64,
    /// Relative risk aversion.
    pub gamma: f64,
    /// Elasticity of intertemporal substitution.
    pub psi: f64,
    /// Consumption-to-wealth ratio.
    pub kappa: f64,
    /// Number of next-state samples in the certainty equivalent.
    pub k: usize,
}

impl Default for EzParams {
    fn default() -> Self {
        Self {
            beta: 0.99,
            gamma: 5.0,
            psi: 1.0,
            kappa: 0.1,
            k: 10,
        }
    }
}

impl EzParams {
    /// `rho = 1 - 1/psi`.
    pub fn rho(&self) -> f64 {
        1.0 - 1.0 / self.psi
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.gamma > 0.0) || (self.gamma - 1.0).abs() <= EPS_GAMMA {
            return Err(Error::config(format!(
                "gamma must be positive and != 1, got {}",
                self.gamma
            )));
        }
        if !(self.psi > 0.0) {
            return Err(Error::config(format!("psi must be positive, got {}", self.psi)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::config(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        if self.k == 0 {
            return Err(Error::config("ce_samples (K) must be >= 1"));
        }
        Ok(())
    }
}

fn log_sum_exp(terms: impl IntoIterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (gamma - 1.0).abs() <= EPS_GAMMA {
        return Err(Error::invalid("gamma = 1 (log certainty equivalent) is not supported"));
    }
    Ok(())
}

/// `((1-beta) c^rho + beta ce^rho)^(1/rho)`, or `c^(1-beta) ce^beta` when
/// `|rho| < EPS_RHO`.
pub fn ces_aggregate(c_term: f64, ce_term: f64, p: &EzParams) -> Result<f64> {
    if !(c_term > 0.0 && ce_term > 0.0) {
        return Err(Error::invalid(format!(
            "aggregator inputs must be positive, got c={c_term}, ce={ce_term}"
        )));
    }
    if !(p.beta > 0.0 && p.beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1), got {}", p.beta)));
    }
    let rho = p.rho();
    let (lc, lce) = (c_term.ln(), ce_term.ln());
    let log_v = if rho.abs() < EPS_RHO {
        (1.0 - p.beta) * lc + p.beta * lce
    } else {
        log_sum_exp([(1.0 - p.beta).ln() + rho * lc, p.beta.ln() + rho * lce]) / rho
    };
    Ok(log_v.exp())
}

/// `(sum_i p_i v_i^(1-gamma))^(1/(1-gamma))`.
pub fn ce_exact(values: &[f64], probs: &[f64], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if values.is_empty() || values.len() != probs.len() {
        return Err(Error::invalid("values and probabilities must be non-empty and aligned"));
    }
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("certainty equivalent needs positive values"));
    }
    if probs.iter().any(|q| !(*q >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("probabilities must be non-negative and sum to 1"));
    }
    let a = 1.0 - gamma;
    let log_moment = log_sum_exp(
        values
            .iter()
            .zip(probs)
            .filter(|(_, q)| **q > 0.0)
            .map(|(v, q)| q.ln() + a * v.ln()),
    );
    Ok((log_moment / a).exp())
}

/// Empirical power mean over `K` equally weighted next-state values.
pub fn ce_sample(next_values: &[f64], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if next_values.is_empty() {
        return Err(Error::invalid("K must be >= 1"));
    }
    if next_values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("critic values must be positive"));
    }
    let a = 1.0 - gamma;
    let k = next_values.len() as f64;
    let log_moment = log_sum_exp(next_values.iter().map(|v| a * v.ln())) - k.ln();
    Ok((log_moment / a).exp())
}

/// Sampled one-step target: the CES aggregate of `kappa * exp(w)` and the
/// empirical certainty equivalent of the next-state values.
pub fn ez_target(log_wealth: f64, next_values: &[f64], p: &EzParams) -> Result<f64> {
    ez_target_with_kappa(log_wealth, p.kappa, next_values, p)
}

/// As [`ez_target`] with a per-step consumption ratio.
pub fn ez_target_with_kappa(log_wealth: f64, kappa: f64, next_values: &[f64], p: &EzParams) -> Result<f64> {
    let ce = ce_sample(next_values, p.gamma)?;
    ces_aggregate(kappa * log_wealth.exp(), ce, p)
}

/// `beta^(alpha/rho)` with `alpha = 1 - gamma`.
pub fn zero_consumption_discount(p: &EzParams) -> Result<f64> {
    let (alpha, rho) = (1.0 - p.gamma, p.rho());
    if alpha.abs() <= EPS_GAMMA || rho.abs() < EPS_RHO {
        return Err(Error::invalid("zero-consumption reduction needs gamma != 1 and psi != 1"));
    }
    Ok(p.beta.powf(alpha / rho))
}

/// Value with zero current consumption via the linear recursion in
/// `Y = V^alpha`: `Y = beta^(alpha/rho) E[Y']`.
pub fn zero_consumption_value_step(next_values: &[f64], probs: &[f64], p: &EzParams) -> Result<f64> {
    let discount = zero_consumption_discount(p)?;
    if next_values.is_empty() || next_values.len() != probs.len() {
        return Err(Error::invalid("values and probabilities must be non-empty and aligned"));
    }
    if next_values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("values must be positive"));
    }
    let alpha = 1.0 - p.gamma;
    let log_y = discount.ln()
        + log_sum_exp(
            next_values
                .iter()
                .zip(probs)
                .filter(|(_, q)| **q > 0.0)
                .map(|(v, q)| q.ln() + alpha * v.ln()),
        );
    Ok((log_y / alpha).exp())
}

/// Finite MDP used to exercise the Bellman operator.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Per-state consumption level.
    pub consumption: Vec<f64>,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::invalid("MDP needs at least one state and action"));
        }
        if self.consumption.len() != self.n_states || self.consumption.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::invalid("consumption must be positive for every state"));
        }
        if self.transition.len() != self.n_states {
            return Err(Error::invalid("transition tensor has wrong state dimension"));
        }
        for row in &self.transition {
            if row.len() != self.n_actions {
                return Err(Error::invalid("transition tensor has wrong action dimension"));
            }
            for dist in row {
                if dist.len() != self.n_states
                    || dist.iter().any(|q| *q < 0.0)
                    || (dist.iter().sum::<f64>() - 1.0).abs() > 1e-12
                {
                    return Err(Error::invalid("transition rows must be distributions"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Certainty-equivalent-metric distance between successive iterates.
    pub distances: Vec<f64>,
}

/// `sup_s |V(s)^(1-gamma) - W(s)^(1-gamma)|`.
pub fn ce_metric(v: &[f64], w: &[f64], gamma: f64) -> f64 {
    let a = 1.0 - gamma;
    v.iter()
        .zip(w)
        .map(|(x, y)| (x.powf(a) - y.powf(a)).abs())
        .fold(0.0, f64::max)
}

/// One application of the Bellman operator.
pub fn bellman_operator(mdp: &TabularMdp, values: &[f64], p: &EzParams) -> Result<Vec<f64>> {
    (0..mdp.n_states)
        .map(|s| {
            let mut best = f64::NEG_INFINITY;
            for dist in &mdp.transition[s] {
                let ce = ce_exact(values, dist, p.gamma)?;
                best = best.max(ces_aggregate(mdp.consumption[s], ce, p)?);
            }
            Ok(best)
        })
        .collect()
}

/// Iterates the Bellman operator from `V = c` until successive iterates are
/// within `tol` in the certainty-equivalent metric.
pub fn tabular_value_iteration(mdp: &TabularMdp, p: &EzParams, tol: f64, max_iter: usize) -> Result<ValueIteration> {
    mdp.validate()?;
    if !(p.beta > 0.0 && p.beta < 1.0) {
        return Err(Error::invalid("value iteration needs beta in (0, 1)"));
    }
    check_gamma(p.gamma)?;
    let mut values = mdp.consumption.clone();
    let mut distances = Vec::new();
    for it in 1..=max_iter {
        let next = bellman_operator(mdp, &values, p)?;
        let d = ce_metric(&next, &values, p.gamma);
        distances.push(d);
        values = next;
        if d < tol {
            return Ok(ValueIteration {
                values,
                iterations: it,
                distances,
            });
        }
    }
    Err(Error::NoConvergence(max_iter))
}

/// Monte Carlo estimate of `E[(a R + (1-a) Rf)^(-gamma) (R - Rf)]`, the
/// first-order condition of the two-period portfolio problem with no
/// initial consumption and unit elasticity.
pub fn two_period_euler_residual(alpha0: f64, risky_gross: &[f64], rf: f64, gamma: f64) -> Result<f64> {
    if risky_gross.is_empty() {
        return Err(Error::invalid("need at least one return sample"));
    }
    let mut acc = 0.0;
    for r in risky_gross {
        let port = alpha0 * r + (1.0 - alpha0) * rf;
        if !(port > 0.0) {
            return Err(Error::invalid(format!("non-positive portfolio gross return {port}")));
        }
        acc += (-gamma * port.ln()).exp() * (r - rf);
    }
    Ok(acc / risky_gross.len() as f64)
}

/// Root of the Euler residual on `[0, 1]` by bisection; the residual is
/// decreasing in the risky share, so corner solutions are returned when it
/// does not change sign.
pub fn two_period_optimal_share(risky_gross: &[f64], rf: f64, gamma: f64) -> Result<f64> {
    let f = |a: f64| two_period_euler_residual(a, risky_gross, rf, gamma);
    if f(0.0)? <= 0.0 {
        return Ok(0.0);
    }
    if f(1.0)? >= 0.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(beta: f64, gamma: f64, psi: f64) -> EzParams {
        EzParams {
            beta,
            gamma,
            psi,
            ..EzParams::default()
        }
    }

    #[test]
    fn ces_examples() {
        for psi in [0.3, 0.5, 1.0, 2.0, 7.0] {
            let p = params(0.9, 5.0, psi);
            assert_relative_eq!(ces_aggregate(1.7, 1.7, &p).unwrap(), 1.7, max_relative = 1e-14);
        }
        let cd = ces_aggregate(1.0, 2.0, &params(0.99, 5.0, 1.0)).unwrap();
        assert_relative_eq!(cd, 2f64.powf(0.99), max_relative = 1e-14);
        let v = ces_aggregate(1.0, 1.0 / 3.0, &params(0.5, 5.0, 0.5)).unwrap();
        assert_relative_eq!(v, 0.5, max_relative = 1e-14);
        assert!(ces_aggregate(0.0, 1.0, &params(0.5, 5.0, 0.5)).is_err());
    }

    #[test]
    fn cobb_douglas_branch_is_continuous() {
        let base = params(0.95, 5.0, 1.0);
        let cd = ces_aggregate(0.7, 1.9, &base).unwrap();
        for rho in [EPS_RHO, -EPS_RHO] {
            let p = EzParams {
                psi: 1.0 / (1.0 - rho),
                ..base
            };
            let v = ces_aggregate(0.7, 1.9, &p).unwrap();
            // first-order gap is rho * beta * (1 - beta) * ln(ce / c)^2 / 2
            let gap = EPS_RHO * 0.95 * 0.05 * (1.9f64 / 0.7).ln().powi(2) / 2.0;
            assert!(((v - cd) / cd).abs() < 1.1 * gap, "rho {rho}: {v} vs {cd}");
        }
    }

    #[test]
    fn ce_examples() {
        assert_relative_eq!(ce_exact(&[2.5, 2.5], &[0.3, 0.7], 3.0).unwrap(), 2.5, max_relative = 1e-14);
        assert_relative_eq!(ce_exact(&[1.0, 3.0], &[0.5, 0.5], 2.0).unwrap(), 1.5, max_relative = 1e-14);
        assert!(ce_exact(&[1.0], &[1.0], 1.0).is_err());
        assert_eq!(ce_sample(&[0.42], 5.0).unwrap(), 0.42);
        assert_relative_eq!(ce_sample(&[3.0; 7], 5.0).unwrap(), 3.0, max_relative = 1e-14);
        assert!(ce_sample(&[1.0, 0.0], 5.0).is_err());
        assert!(ce_sample(&[], 5.0).is_err());
    }

    #[test]
    fn log_space_handles_extreme_values() {
        let ce = ce_sample(&[1e-80, 1e-80], 10.0).unwrap();
        assert_relative_eq!(ce, 1e-80, max_relative = 1e-12);
        let ce = ce_sample(&[1e80, 2e80], 10.0).unwrap();
        assert!(ce.is_finite() && ce > 1e80);
    }

    #[test]
    fn ez_target_examples() {
        let p = EzParams {
            kappa: 0.1,
            ..params(0.99, 5.0, 1.0)
        };
        let t = ez_target(0.0, &[1.0, 1.0], &p).unwrap();
        assert_relative_eq!(t, 0.1f64.powf(0.01), max_relative = 1e-14);
        assert!((t - 0.97724).abs() < 1e-5);

        let p = EzParams { kappa: 0.2, ..params(0.9, 3.0, 0.5) };
        let c = 0.2 * 0.3f64.exp();
        assert_relative_eq!(ez_target(0.3, &[c, c, c], &p).unwrap(), c, max_relative = 1e-13);

        let bad = EzParams { beta: 1.0, ..p };
        assert!(ez_target(0.0, &[1.0], &bad).is_err());
    }

    #[test]
    fn zero_consumption_reduction() {
        let p = params(0.99, 5.0, 0.5);
        assert_relative_eq!(zero_consumption_discount(&p).unwrap(), 0.99f64.powi(4), max_relative = 1e-14);
        let v = zero_consumption_value_step(&[2.0, 2.0], &[0.5, 0.5], &p).unwrap();
        assert_relative_eq!(v, 0.99f64.powf(1.0 / p.rho()) * 2.0, max_relative = 1e-13);

        // c -> 0 limit of the aggregator exists only for rho > 0
        let p = params(0.95, 4.0, 2.0);
        let (vals, probs) = ([0.8, 1.3, 2.1], [0.2, 0.5, 0.3]);
        let reduced = zero_consumption_value_step(&vals, &probs, &p).unwrap();
        let ce = ce_exact(&vals, &probs, p.gamma).unwrap();
        let direct = ces_aggregate(1e-12, ce, &p).unwrap();
        assert!(((reduced - direct) / reduced).abs() < 1e-6);

        assert!(zero_consumption_value_step(&[1.0], &[1.0], &params(0.9, 5.0, 1.0)).is_err());
    }

    #[test]
    fn self_loop_fixed_point_is_consumption() {
        let mdp = TabularMdp {
            n_states: 1,
            n_actions: 1,
            transition: vec![vec![vec![1.0]]],
            consumption: vec![1.0],
        };
        let out = tabular_value_iteration(&mdp, &params(0.5, 5.0, 0.5), 1e-12, 100).unwrap();
        assert_relative_eq!(out.values[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn value_iteration_reports_non_convergence() {
        let mdp = TabularMdp {
            n_states: 2,
            n_actions: 1,
            transition: vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            consumption: vec![1.0, 2.0],
        };
        assert!(matches!(
            tabular_value_iteration(&mdp, &params(0.99, 5.0, 0.5), 1e-14, 3),
            Err(Error::NoConvergence(3))
        ));
    }

    #[test]
    fn euler_examples() {
        for a in [0.0, 0.3, 1.0] {
            assert_eq!(two_period_euler_residual(a, &[1.02, 1.02], 1.02, 5.0).unwrap(), 0.0);
        }
        assert!(two_period_euler_residual(1.0, &[-0.5], 1.0, 2.0).is_err());
    }
}
