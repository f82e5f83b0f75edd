//! Seeded synthetic markets for smoke tests and demos.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{PriceTable, ReturnsTable};
use crate::{Error, Result};

/// Weekday calendar starting at `start` (weekends skipped).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date")
}

fn asset_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            if n <= 26 {
                char::from(b'A' + i as u8).to_string()
            } else {
                format!("X{i:03}")
            }
        })
        .collect()
}

/// Independent Gaussian daily returns per asset.
pub fn gaussian_market(n_rows: usize, means: &[f64], stds: &[f64], seed: u64) -> Result<ReturnsTable> {
    if means.len() != stds.len() || means.is_empty() {
        return Err(Error::invalid("means and stds must be non-empty and aligned"));
    }
    let dists = means
        .iter()
        .zip(stds)
        .map(|(m, s)| Normal::new(*m, *s).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_rows)
        .map(|_| dists.iter().map(|d| d.sample(&mut rng).max(-0.95)).collect())
        .collect();
    ReturnsTable::new(business_days(default_start(), n_rows), asset_names(means.len()), rows)
}

/// Two assets: `A` earns a higher mean in calm days but suffers a crash of
/// `crash_return` with probability `crash_prob`; `B` is a quiet asset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrashMarket {
    pub calm_mean: f64,
    pub calm_std: f64,
    pub crash_prob: f64,
    pub crash_return: f64,
    pub safe_mean: f64,
    pub safe_std: f64,
}

impl Default for CrashMarket {
    fn default() -> Self {
        Self {
            calm_mean: 0.0015,
            calm_std: 0.005,
            crash_prob: 0.02,
            crash_return: -0.04,
            safe_mean: 0.0002,
            safe_std: 0.001,
        }
    }
}

impl CrashMarket {
    /// Unconditional daily mean of the risky asset.
    pub fn risky_mean(&self) -> f64 {
        (1.0 - self.crash_prob) * self.calm_mean + self.crash_prob * self.crash_return
    }

    pub fn generate(&self, n_rows: usize, seed: u64) -> Result<ReturnsTable> {
        let calm = Normal::new(self.calm_mean, self.calm_std).map_err(|e| Error::invalid(e.to_string()))?;
        let safe = Normal::new(self.safe_mean, self.safe_std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n_rows)
            .map(|_| {
                let a = if rng.random::<f64>() < self.crash_prob {
                    self.crash_return
                } else {
                    calm.sample(&mut rng)
                };
                vec![a.max(-0.95), safe.sample(&mut rng).max(-0.95)]
            })
            .collect();
        ReturnsTable::new(business_days(default_start(), n_rows), asset_names(2), rows)
    }
}

/// Price levels compounding `returns` from 100, with one extra leading row.
pub fn prices_from_returns(returns: &ReturnsTable) -> PriceTable {
    let n = returns.n_assets();
    let first = returns.dates.first().copied().unwrap_or_else(default_start);
    let mut dates = vec![first - Days::new(1)];
    dates.extend(&returns.dates);
    let mut level = vec![100.0; n];
    let mut prices = vec![level.clone()];
    for r in &returns.returns {
        for (p, x) in level.iter_mut().zip(r) {
            *p *= 1.0 + x;
        }
        prices.push(level.clone());
    }
    PriceTable {
        dates,
        assets: returns.assets.clone(),
        prices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calendar_skips_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(d[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
        assert_eq!(d[2], NaiveDate::from_ymd_opt(2024, 1, 9).unwrap());
    }

    #[test]
    fn gaussian_market_is_seeded() {
        let a = gaussian_market(50, &[0.0, 0.001], &[0.01, 0.01], 3).unwrap();
        let b = gaussian_market(50, &[0.0, 0.001], &[0.01, 0.01], 3).unwrap();
        let c = gaussian_market(50, &[0.0, 0.001], &[0.01, 0.01], 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.assets, vec!["A", "B"]);
    }

    #[test]
    fn crash_market_moments() {
        let m = CrashMarket::default();
        let t = m.generate(200_000, 1).unwrap();
        let a = t.column(0);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - m.risky_mean()).abs() < 1e-4, "{mean}");
        let crashes = a.iter().filter(|x| **x == m.crash_return).count() as f64 / a.len() as f64;
        assert!((crashes - m.crash_prob).abs() < 2e-3);
    }

    #[test]
    fn prices_reproduce_returns() {
        let t = gaussian_market(20, &[0.0005], &[0.01], 9).unwrap();
        let p = prices_from_returns(&t);
        assert_eq!(p.prices.len(), 21);
        for i in 0..20 {
            let r = p.prices[i + 1][0] / p.prices[i][0] - 1.0;
            assert!((r - t.returns[i][0]).abs() < 1e-12);
        }
    }
}
