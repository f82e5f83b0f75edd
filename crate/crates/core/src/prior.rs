//! Campbell–Viceira style allocation prior: a VAR(1) for the predictive
//! state, a return loading `E_t[r_{t+1}] = B x_t`, and the myopic plus
//! (optional) hedging portfolio rule used to pre-train the actor.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::data::ReturnsTable;
use crate::env::project_simplex;
use crate::utility::EzParams;
use crate::{Error, Result};

/// Fitted predictive system.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    /// `x_{t+1} = intercept + coef x_t + e_{t+1}`; `m x m`.
    pub coef: DMatrix<f64>,
    pub intercept: DVector<f64>,
    /// Covariance of the state innovations `e`.
    pub resid_cov: DMatrix<f64>,
    /// Excess-return loading `B`, `n x m` (slope of `r_{t+1}` on `x_t`).
    pub loading: DMatrix<f64>,
    /// `Cov(r_{t+1}, x_{t+1})` from the joint residuals, `n x m`.
    pub cross_cov: DMatrix<f64>,
    /// Per-coefficient OLS standard errors of `coef`.
    pub coef_se: DMatrix<f64>,
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min / max < 1e-10 {
        return Err(Error::RankDeficient(format!(
            "condition ratio {:.3e} below 1e-10",
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    Ok(())
}

/// OLS of each state equation on `[1, x_t]`, and of each asset's log
/// excess return on the same regressors.
///
/// `states[t]` is `x_t`; `next_excess[t]` is the log excess return
/// realised after `x_t` was observed. Both have `T` rows; the last state is
/// used only as a regression target.
pub fn fit_var(states: &[Vec<f64>], next_excess: &[Vec<f64>]) -> Result<VarModel> {
    let t = states.len();
    let m = states.first().map_or(0, Vec::len);
    if m == 0 || t <= m + 2 {
        return Err(Error::invalid(format!("need T > m + 2 observations (T={t}, m={m})")));
    }
    if next_excess.len() != t {
        return Err(Error::invalid("state and return series differ in length"));
    }
    let n = next_excess[0].len();
    let obs = t - 1;
    let mut x = DMatrix::zeros(obs, m + 1);
    for i in 0..obs {
        x[(i, 0)] = 1.0;
        for j in 0..m {
            x[(i, j + 1)] = states[i][j];
        }
    }
    check_rank(&x)?;
    let y_state = DMatrix::from_fn(obs, m, |i, j| states[i + 1][j]);
    let y_ret = DMatrix::from_fn(obs, n, |i, j| next_excess[i][j]);

    let xtx = x.transpose() * &x;
    let xtx_inv = xtx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("X'X is singular".into()))?;
    let beta_state = &xtx_inv * x.transpose() * &y_state; // (m+1) x m
    let beta_ret = &xtx_inv * x.transpose() * &y_ret; // (m+1) x n

    let resid_state = &y_state - &x * &beta_state;
    let resid_ret = &y_ret - &x * &beta_ret;
    let dof = (obs - m - 1).max(1) as f64;
    let resid_cov = resid_state.transpose() * &resid_state / dof;
    let cross_cov = resid_ret.transpose() * &resid_state / dof;

    let coef = beta_state.rows(1, m).transpose();
    let intercept = beta_state.row(0).transpose();
    let loading = beta_ret.rows(1, m).transpose();
    let coef_se = DMatrix::from_fn(m, m, |eq, reg| (resid_cov[(eq, eq)] * xtx_inv[(reg + 1, reg + 1)]).sqrt());

    Ok(VarModel {
        coef,
        intercept,
        resid_cov,
        loading,
        cross_cov,
        coef_se,
    })
}

/// Default predictive state: trailing-window mean of per-asset log excess
/// returns (risk-free rate zero). Row `t` uses returns `t+1-window..=t`.
pub fn trailing_mean_states(returns: &ReturnsTable, window: usize) -> Vec<Vec<f64>> {
    let n = returns.n_assets();
    let logs: Vec<Vec<f64>> = returns
        .returns
        .iter()
        .map(|r| r.iter().map(|x| x.ln_1p()).collect())
        .collect();
    (0..logs.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(window.max(1));
            let rows = &logs[start..=t];
            (0..n)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                .collect()
        })
        .collect()
}

/// `log kappa = a0 + a1' x`, with coefficients supplied externally.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaRule {
    pub a0: f64,
    pub a1: Vec<f64>,
}

impl KappaRule {
    pub fn kappa(&self, x: &[f64]) -> f64 {
        (self.a0 + self.a1.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).exp()
    }
}

/// `Sigma + 1e-8 * trace(Sigma) / n * I`, inverted.
pub fn regularized_inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    if n == 0 || sigma.ncols() != n {
        return Err(Error::invalid("covariance must be square and non-empty"));
    }
    let ridge = 1e-8 * sigma.trace() / n as f64;
    if !(ridge > 0.0) {
        return Err(Error::invalid("covariance has zero trace; cannot regularize"));
    }
    (sigma + DMatrix::identity(n, n) * ridge)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("regularized covariance is singular".into()))
}

/// Pre-projection rule: `(1/gamma) Sigma^-1 B x` plus, when `psi != 1` and a
/// hedging vector `a_alpha` is supplied, `((1-psi)/psi) Sigma^-1 Cov(r, x) a_alpha`.
pub fn prior_weights(
    model: &VarModel,
    x_t: &[f64],
    sigma: &DMatrix<f64>,
    p: &EzParams,
    a_alpha: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let m = model.coef.nrows();
    if x_t.len() != m {
        return Err(Error::invalid("state vector has wrong length"));
    }
    let inv = regularized_inverse(sigma)?;
    let x = DVector::from_column_slice(x_t);
    let mut alpha = &inv * (&model.loading * x) / p.gamma;
    if (p.psi - 1.0).abs() > 0.0 {
        if let Some(a) = a_alpha {
            if a.len() != m {
                return Err(Error::invalid("hedging vector has wrong length"));
            }
            let a = DVector::from_column_slice(a);
            alpha += &inv * (&model.cross_cov * a) * ((1.0 - p.psi) / p.psi);
        }
    }
    Ok(alpha.iter().copied().collect())
}

/// Projected prior weights, ready to serve as actor targets.
pub fn prior_allocation(
    model: &VarModel,
    x_t: &[f64],
    sigma: &DMatrix<f64>,
    p: &EzParams,
    a_alpha: Option<&[f64]>,
) -> Result<Vec<f64>> {
    project_simplex(&prior_weights(model, x_t, sigma, p, a_alpha)?)
}

/// Plain-text summary: `B`, `Sigma` and one example allocation.
pub fn render_report(model: &VarModel, sigma: &DMatrix<f64>, example: &[f64]) -> String {
    let mut out = String::new();
    let mut mat = |name: &str, m: &DMatrix<f64>| {
        let _ = writeln!(out, "{name} ({}x{})", m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.6e}", m[(i, j)])).collect();
            let _ = writeln!(out, "  {}", row.join(" "));
        }
    };
    mat("B", &model.loading);
    mat("Sigma", sigma);
    let _ = writeln!(
        out,
        "alpha_prior {}",
        example.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn simulate_ar(phi: f64, t: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = 0.0;
        let mut states = Vec::with_capacity(t);
        let mut rets = Vec::with_capacity(t);
        for _ in 0..t {
            states.push(vec![x]);
            let next = phi * x + noise.sample(&mut rng);
            rets.push(vec![0.5 * x + 0.1 * noise.sample(&mut rng)]);
            x = next;
        }
        (states, rets)
    }

    #[test]
    fn recovers_known_coefficient() {
        let (s, r) = simulate_ar(0.9, 5000, 1);
        let m = fit_var(&s, &r).unwrap();
        assert!((m.coef[(0, 0)] - 0.9).abs() < 0.05);
        assert!((m.loading[(0, 0)] - 0.5).abs() < 0.05);
    }

    #[test]
    fn white_noise_has_insignificant_coefficient() {
        let (s, r) = simulate_ar(0.0, 2000, 2);
        let m = fit_var(&s, &r).unwrap();
        assert!(m.coef[(0, 0)].abs() < 3.0 * m.coef_se[(0, 0)]);
    }

    #[test]
    fn constant_state_is_rank_deficient() {
        let s = vec![vec![0.3]; 50];
        let r = vec![vec![0.0]; 50];
        assert!(matches!(fit_var(&s, &r), Err(Error::RankDeficient(_))));
        assert!(fit_var(&s[..3], &r[..3]).is_err());
    }

    fn toy_model() -> VarModel {
        VarModel {
            coef: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            intercept: DVector::zeros(2),
            resid_cov: DMatrix::identity(2, 2),
            loading: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 0.8]),
            cross_cov: DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.0, 0.3]),
            coef_se: DMatrix::zeros(2, 2),
        }
    }

    #[test]
    fn myopic_rule_properties() {
        let model = toy_model();
        let sigma = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        let x = [0.02, -0.01];
        let p = EzParams {
            gamma: 4.0,
            psi: 1.0,
            ..EzParams::default()
        };
        let base = prior_weights(&model, &x, &sigma, &p, Some(&[1.0, 2.0])).unwrap();
        let myopic = prior_weights(&model, &x, &sigma, &p, None).unwrap();
        assert_eq!(base, myopic);

        let zero = prior_weights(&model, &[0.0, 0.0], &sigma, &p, None).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);

        let doubled = prior_weights(&model, &x, &sigma, &EzParams { gamma: 8.0, ..p }, None).unwrap();
        for (a, b) in base.iter().zip(&doubled) {
            assert!((a - 2.0 * b).abs() < 1e-15 * a.abs().max(1.0));
        }

        let hedged = prior_weights(&model, &x, &sigma, &EzParams { psi: 0.5, ..p }, Some(&[1.0, 2.0])).unwrap();
        assert!(hedged.iter().zip(&base).any(|(a, b)| (a - b).abs() > 1e-6));

        let projected = prior_allocation(&model, &x, &sigma, &p, None).unwrap();
        assert!(crate::env::is_on_simplex(&projected));
    }

    #[test]
    fn singular_covariance_needs_trace() {
        assert!(regularized_inverse(&DMatrix::zeros(2, 2)).is_err());
        assert!(regularized_inverse(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_ok());
    }

    #[test]
    fn kappa_rule() {
        let rule = KappaRule {
            a0: (0.1f64).ln(),
            a1: vec![0.0, 0.0],
        };
        assert!((rule.kappa(&[0.3, 0.2]) - 0.1).abs() < 1e-15);
    }
}
