//! The portfolio MDP: state `(log wealth, previous weights)`, incremental
//! actions projected onto the simplex, and self-financing wealth dynamics.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ReturnsTable;
use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub log_wealth: f64,
    pub prev_weights: Vec<f64>,
    pub t: usize,
}

impl EnvState {
    /// `W0 = 1` with equal weights.
    pub fn initial(n_assets: usize) -> Self {
        Self {
            log_wealth: 0.0,
            prev_weights: vec![1.0 / n_assets as f64; n_assets],
            t: 0,
        }
    }

    /// Network input: `[w, alpha_prev...]`.
    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.prev_weights.len() + 1);
        obs.push(self.log_wealth);
        obs.extend_from_slice(&self.prev_weights);
        obs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    #[default]
    Naive,
    Markowitz,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub episode_length: usize,
    pub reward_kind: RewardKind,
    pub markowitz_lambda: f64,
    pub varcov_window: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            episode_length: 252,
            reward_kind: RewardKind::Naive,
            markowitz_lambda: 1.0,
            varcov_window: 60,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode_length == 0 {
            return Err(Error::config("episode_length must be >= 1"));
        }
        if !(self.markowitz_lambda >= 0.0) {
            return Err(Error::config("markowitz_lambda must be >= 0"));
        }
        if self.varcov_window < 2 {
            return Err(Error::config("varcov_window must be >= 2"));
        }
        Ok(())
    }
}

/// Clip each weight to `[0, 1]` and renormalise; all-zero falls back to
/// equal weights. This is not the Euclidean projection.
pub fn project_simplex(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot project an empty weight vector"));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite weight"));
    }
    let clipped: Vec<f64> = raw.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if sum <= 0.0 {
        return Ok(vec![1.0 / raw.len() as f64; raw.len()]);
    }
    Ok(clipped.into_iter().map(|x| x / sum).collect())
}

pub fn is_on_simplex(w: &[f64]) -> bool {
    w.iter().all(|x| *x >= 0.0 && *x <= 1.0 + SIMPLEX_TOL)
        && (w.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub applied_weights: Vec<f64>,
    pub port_return: f64,
}

/// One transition. `risk_rows` are the trailing returns used for the
/// Markowitz variance term; other reward kinds ignore them.
pub fn step(
    state: &EnvState,
    delta_weights: &[f64],
    realized: &[f64],
    cfg: &EpisodeConfig,
    risk_rows: &[Vec<f64>],
) -> Result<StepOutcome> {
    if state.t >= cfg.episode_length {
        return Err(Error::EpisodeOver {
            step: state.t,
            len: cfg.episode_length,
        });
    }
    let n = state.prev_weights.len();
    if delta_weights.len() != n || realized.len() != n {
        return Err(Error::invalid("action / return width does not match asset count"));
    }
    let raw: Vec<f64> = state
        .prev_weights
        .iter()
        .zip(delta_weights)
        .map(|(a, d)| a + d)
        .collect();
    let weights = project_simplex(&raw)?;
    let port_return = dot(&weights, realized);
    let gross = 1.0 + port_return;
    if !(gross > 0.0) {
        return Err(Error::Bankruptcy {
            step: state.t,
            gross,
        });
    }
    let reward = match cfg.reward_kind {
        RewardKind::Naive => port_return,
        RewardKind::Markowitz => port_return - cfg.markowitz_lambda * portfolio_variance(&weights, risk_rows),
        RewardKind::None => 0.0,
    };
    Ok(StepOutcome {
        next: EnvState {
            log_wealth: state.log_wealth + gross.ln(),
            prev_weights: weights.clone(),
            t: state.t + 1,
        },
        reward,
        applied_weights: weights,
        port_return,
    })
}

/// `alpha' Sigma alpha` with `Sigma` the sample covariance (n - 1
/// denominator) of `rows`, evaluated as the sample variance of the
/// portfolio return series. Fewer than two rows gives zero.
pub fn portfolio_variance(weights: &[f64], rows: &[Vec<f64>]) -> f64 {
    if rows.len() < 2 {
        return 0.0;
    }
    let series: Vec<f64> = rows.iter().map(|r| dot(weights, r)).collect();
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (series.len() - 1) as f64
}

/// Sample covariance matrix (n - 1 denominator).
pub fn sample_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.first().map_or(0, Vec::len);
    let m = rows.len() as f64;
    let mean: Vec<f64> = (0..n)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m)
        .collect();
    let mut cov = vec![vec![0.0; n]; n];
    for r in rows {
        for i in 0..n {
            for j in 0..n {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let denom = (m - 1.0).max(1.0);
    for row in &mut cov {
        for c in row.iter_mut() {
            *c /= denom;
        }
    }
    cov
}

/// Hypothetical next states for each sampled return row. Does not touch
/// `state`.
pub fn peek_next_states(
    state: &EnvState,
    applied_weights: &[f64],
    sampled: &[Vec<f64>],
) -> Result<Vec<EnvState>> {
    if sampled.is_empty() {
        return Err(Error::invalid("need at least one sampled return row"));
    }
    sampled
        .iter()
        .map(|row| {
            let gross = 1.0 + dot(applied_weights, row);
            if !(gross > 0.0) {
                return Err(Error::Bankruptcy {
                    step: state.t,
                    gross,
                });
            }
            Ok(EnvState {
                log_wealth: state.log_wealth + gross.ln(),
                prev_weights: applied_weights.to_vec(),
                t: state.t + 1,
            })
        })
        .collect()
}

/// Bootstrap `k` rows uniformly with replacement from the trailing `window`
/// rows ending at `t_now` (inclusive).
pub fn sample_return_rows<R: Rng + ?Sized>(
    history: &ReturnsTable,
    window: usize,
    t_now: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if window == 0 {
        return Err(Error::invalid("sampling window must be >= 1"));
    }
    if history.n_rows() == 0 {
        return Err(Error::invalid("empty return history"));
    }
    let end = t_now.min(history.n_rows() - 1) + 1;
    let start = end.saturating_sub(window);
    Ok((0..k)
        .map(|_| history.row(rng.random_range(start..end)).to_vec())
        .collect())
}

/// Where an episode starts within its segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeStart {
    /// Uniform offset in `0..=len - episode_length` (training).
    RandomOffset,
    /// Row 0, consuming the whole segment (evaluation).
    FullSegment,
}

/// A portfolio environment bound to one return segment.
///
/// `risk_history` holds rows that precede the segment (the training history
/// for evaluation). Markowitz variance uses the trailing `varcov_window`
/// rows before the row being realized.
#[derive(Debug, Clone)]
pub struct PortfolioEnv {
    segment: ReturnsTable,
    risk_history: Vec<Vec<f64>>,
    cfg: EpisodeConfig,
    state: EnvState,
    offset: usize,
    length: usize,
}

impl PortfolioEnv {
    pub fn new(segment: ReturnsTable, risk_history: Vec<Vec<f64>>, cfg: EpisodeConfig) -> Result<Self> {
        cfg.validate()?;
        if segment.n_rows() == 0 || segment.n_assets() == 0 {
            return Err(Error::invalid("empty return segment"));
        }
        let n = segment.n_assets();
        Ok(Self {
            length: cfg.episode_length.min(segment.n_rows()),
            segment,
            risk_history,
            cfg,
            state: EnvState::initial(n),
            offset: 0,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.segment.n_assets()
    }

    pub fn segment(&self) -> &ReturnsTable {
        &self.segment
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Row index (within the segment) of the return realized by the next step.
    pub fn current_row(&self) -> usize {
        self.offset + self.state.t
    }

    pub fn episode_length(&self) -> usize {
        self.length
    }

    pub fn done(&self) -> bool {
        self.state.t >= self.length
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, start: EpisodeStart, rng: &mut R) -> Result<&EnvState> {
        let rows = self.segment.n_rows();
        match start {
            EpisodeStart::RandomOffset => {
                if rows < self.cfg.episode_length {
                    return Err(Error::invalid(format!(
                        "segment has {rows} rows, episode needs {}",
                        self.cfg.episode_length
                    )));
                }
                self.length = self.cfg.episode_length;
                self.offset = rng.random_range(0..=rows - self.length);
            }
            EpisodeStart::FullSegment => {
                self.length = rows;
                self.offset = 0;
            }
        }
        self.state = EnvState::initial(self.n_assets());
        Ok(&self.state)
    }

    fn risk_window(&self) -> Vec<Vec<f64>> {
        let w = self.cfg.varcov_window;
        let row = self.current_row();
        let from_segment = &self.segment.returns[row.saturating_sub(w)..row];
        let need = w - from_segment.len();
        let hist_start = self.risk_history.len().saturating_sub(need);
        self.risk_history[hist_start..]
            .iter()
            .chain(from_segment)
            .cloned()
            .collect()
    }

    pub fn step(&mut self, delta_weights: &[f64]) -> Result<StepOutcome> {
        if self.done() {
            return Err(Error::EpisodeOver {
                step: self.state.t,
                len: self.length,
            });
        }
        let realized = self.segment.row(self.current_row()).to_vec();
        let risk = match self.cfg.reward_kind {
            RewardKind::Markowitz => self.risk_window(),
            _ => Vec::new(),
        };
        let cfg = EpisodeConfig {
            episode_length: self.length,
            ..self.cfg.clone()
        };
        let out = step(&self.state, delta_weights, &realized, &cfg, &risk)?;
        self.state = out.next.clone();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub t: usize,
    pub weights: Vec<f64>,
    pub reward: f64,
    pub port_return: f64,
    pub log_wealth: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub start_offset: usize,
    pub steps: Vec<EpisodeStep>,
}

impl EpisodeLog {
    pub fn port_returns(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.port_return).collect()
    }

    pub fn final_wealth(&self) -> f64 {
        self.steps.last().map_or(1.0, |s| s.log_wealth.exp())
    }

    /// Delimited debug log: `step,w,reward,weight_0,...`.
    pub fn write_delimited(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.steps.first().map_or(0, |s| s.weights.len());
        write!(out, "step,log_wealth,reward")?;
        for i in 0..n {
            write!(out, ",w{i}")?;
        }
        writeln!(out)?;
        for s in &self.steps {
            write!(out, "{},{},{}", s.t, s.log_wealth, s.reward)?;
            for w in &s.weights {
                write!(out, ",{w}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs one episode with `policy` mapping the observed state to a weight
/// increment.
pub fn run_episode<R, P>(env: &mut PortfolioEnv, start: EpisodeStart, rng: &mut R, mut policy: P) -> Result<EpisodeLog>
where
    R: Rng + ?Sized,
    P: FnMut(&EnvState, &mut R) -> Vec<f64>,
{
    env.reset(start, rng)?;
    let mut log = EpisodeLog {
        start_offset: env.offset,
        steps: Vec::with_capacity(env.episode_length()),
    };
    while !env.done() {
        let action = policy(env.state(), rng);
        let out = env.step(&action)?;
        log.steps.push(EpisodeStep {
            t: out.next.t - 1,
            weights: out.applied_weights,
            reward: out.reward,
            port_return: out.port_return,
            log_wealth: out.next.log_wealth,
        });
    }
    Ok(log)
}
