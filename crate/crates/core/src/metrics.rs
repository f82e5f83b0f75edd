//! Backtest metrics over test-period portfolio returns and their
//! aggregation across splits. Degenerate denominators yield
//! [`Metric::Undefined`] instead of NaN or infinity.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PERIODS_PER_YEAR: f64 = 252.0;

/// Per-step portfolio returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::invalid("return series is empty"));
        }
        if let Some(r) = returns.iter().find(|r| !(r.is_finite() && **r > -1.0)) {
            return Err(Error::invalid(format!("return {r} is not > -1")));
        }
        Ok(Self { returns })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metric {
    Defined(f64),
    #[serde(with = "undefined_marker")]
    Undefined,
}

mod undefined_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("undefined")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "undefined" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"undefined\", got {s:?}")))
        }
    }
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Defined(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Metric::Defined(_))
    }

    fn from_ratio(num: f64, den: f64) -> Self {
        if den > 0.0 && den.is_finite() {
            Metric::Defined(num / den)
        } else {
            Metric::Undefined
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Defined(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            Metric::Undefined => f.pad("undefined"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "undefined" {
            return Ok(Metric::Undefined);
        }
        s.parse::<f64>()
            .map(Metric::Defined)
            .map_err(|_| Error::invalid(format!("bad metric value {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: Metric,
    pub sortino: Metric,
    pub calmar: Metric,
    pub mdd_pct: Metric,
    pub cr_pct: Metric,
    pub vol_pct: Metric,
    pub ir: Metric,
}

/// Metric names in table column order, followed by IR.
pub const METRIC_NAMES: [&str; 7] = ["sr", "sortino", "calmar", "mdd_pct", "cr_pct", "vol_pct", "ir"];

impl MetricsReport {
    pub fn values(&self) -> [Metric; 7] {
        [
            self.sr,
            self.sortino,
            self.calmar,
            self.mdd_pct,
            self.cr_pct,
            self.vol_pct,
            self.ir,
        ]
    }

    pub fn from_values(v: [Metric; 7]) -> Self {
        Self {
            sr: v[0],
            sortino: v[1],
            calmar: v[2],
            mdd_pct: v[3],
            cr_pct: v[4],
            vol_pct: v[5],
            ir: v[6],
        }
    }

    /// `name = value` lines in [`METRIC_NAMES`] order.
    pub fn to_key_value(&self) -> String {
        METRIC_NAMES
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_key_value(text: &str) -> Result<Self> {
        let mut vals = [Metric::Undefined; 7];
        let mut seen = [false; 7];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad metrics line {line:?}")))?;
            let idx = METRIC_NAMES
                .iter()
                .position(|n| *n == k.trim())
                .ok_or_else(|| Error::invalid(format!("unknown metric {k:?}")))?;
            vals[idx] = v.trim().parse()?;
            seen[idx] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("metrics file is missing entries"));
        }
        Ok(Self::from_values(vals))
    }
}

/// `W_0 = 1, W_t = prod_{s <= t} (1 + r_s)`; length `T + 1`.
pub fn wealth_path(r: &ReturnSeries) -> Vec<f64> {
    let mut out = Vec::with_capacity(r.len() + 1);
    let mut w = 1.0;
    out.push(w);
    for x in r.as_slice() {
        w *= 1.0 + x;
        out.push(w);
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (`T - 1` denominator); zero-like spread maps to 0.
fn sample_std(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = mean(x);
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    let sd = var.sqrt();
    // constant series leave rounding noise around the mean
    Some(if sd <= 1e-12 * m.abs() { 0.0 } else { sd })
}

pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd: f64 = 0.0;
    for &w in wealth {
        peak = peak.max(w);
        mdd = mdd.max((peak - w) / peak);
    }
    mdd
}

/// Risk-free rate is zero. Sortino's downside deviation averages squared
/// negative returns over all `T` steps.
pub fn compute_metrics(r: &ReturnSeries, benchmark: Option<&ReturnSeries>) -> Result<MetricsReport> {
    let x = r.as_slice();
    let t = x.len() as f64;
    let annual = PERIODS_PER_YEAR.sqrt();
    let wealth = wealth_path(r);
    let w_t = *wealth.last().unwrap();
    let mdd = max_drawdown(&wealth);
    let r_bar = mean(x);
    let sd = sample_std(x);

    let sr = match sd {
        Some(s) => Metric::from_ratio(r_bar * annual, s),
        None => Metric::Undefined,
    };
    let vol_pct = sd.map_or(Metric::Undefined, |s| Metric::Defined(s * annual * 100.0));
    let downside_sq: f64 = x.iter().filter(|v| **v < 0.0).map(|v| v * v).sum();
    let sortino = if downside_sq > 0.0 {
        Metric::from_ratio(r_bar * annual, (downside_sq / t).sqrt())
    } else {
        Metric::Undefined
    };
    let ann_return = w_t.powf(PERIODS_PER_YEAR / t) - 1.0;
    let calmar = Metric::from_ratio(ann_return, mdd);
    let ir = match benchmark {
        Some(b) => {
            if b.len() != r.len() {
                return Err(Error::invalid("benchmark length differs from return series"));
            }
            let active: Vec<f64> = x.iter().zip(b.as_slice()).map(|(a, b)| a - b).collect();
            match sample_std(&active) {
                Some(s) => Metric::from_ratio(mean(&active) * annual, s),
                None => Metric::Undefined,
            }
        }
        None => Metric::Undefined,
    };
    Ok(MetricsReport {
        sr,
        sortino,
        calmar,
        mdd_pct: Metric::Defined(mdd * 100.0),
        cr_pct: Metric::Defined((w_t - 1.0) * 100.0),
        vol_pct,
        ir,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: Metric,
    pub std: Metric,
    /// Reports contributing a defined value.
    pub n_defined: usize,
    /// Reports excluded because the metric was undefined.
    pub n_excluded: usize,
    /// Set when the std is 0 only because a single value was available.
    pub single: bool,
}

/// Mean and sample std (n - 1) per metric, in [`METRIC_NAMES`] order.
pub fn aggregate_splits(reports: &[MetricsReport]) -> Result<[MetricAggregate; 7]> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to aggregate"));
    }
    let mut out = [MetricAggregate {
        mean: Metric::Undefined,
        std: Metric::Undefined,
        n_defined: 0,
        n_excluded: 0,
        single: false,
    }; 7];
    for (i, agg) in out.iter_mut().enumerate() {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.values()[i].value()).collect();
        agg.n_defined = vals.len();
        agg.n_excluded = reports.len() - vals.len();
        match vals.len() {
            0 => {}
            1 => {
                agg.mean = Metric::Defined(vals[0]);
                agg.std = Metric::Defined(0.0);
                agg.single = true;
            }
            n => {
                let m = mean(&vals);
                let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                agg.mean = Metric::Defined(m);
                agg.std = Metric::Defined(var.sqrt());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(v: &[f64]) -> ReturnSeries {
        ReturnSeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn wealth_examples() {
        assert_eq!(wealth_path(&series(&[0.0, 0.0])), vec![1.0, 1.0, 1.0]);
        let w = wealth_path(&series(&[0.1, -0.1]));
        assert!((w[1] - 1.1).abs() < 1e-15 && (w[2] - 0.99).abs() < 1e-15);
        assert!(ReturnSeries::new(vec![0.1, -1.0]).is_err());
    }

    #[test]
    fn zero_series_is_degenerate() {
        let m = compute_metrics(&series(&[0.0; 5]), None).unwrap();
        assert_eq!(m.cr_pct, Metric::Defined(0.0));
        assert_eq!(m.mdd_pct, Metric::Defined(0.0));
        assert_eq!(m.vol_pct, Metric::Defined(0.0));
        assert_eq!(m.sr, Metric::Undefined);
        assert_eq!(m.sortino, Metric::Undefined);
        assert_eq!(m.calmar, Metric::Undefined);
        assert_eq!(m.ir, Metric::Undefined);
    }

    #[test]
    fn constant_series_has_undefined_sharpe() {
        let m = compute_metrics(&series(&[0.001; 40]), None).unwrap();
        assert_eq!(m.sr, Metric::Undefined);
    }

    #[test]
    fn up_down_example() {
        let m = compute_metrics(&series(&[0.1, -0.1]), None).unwrap();
        assert!((m.cr_pct.value().unwrap() + 1.0).abs() < 1e-12);
        assert!((m.mdd_pct.value().unwrap() - (1.1 - 0.99) / 1.1 * 100.0).abs() < 1e-12);
        assert!((m.mdd_pct.value().unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn identical_benchmark_has_undefined_ir() {
        let s = series(&[0.01, -0.02, 0.005]);
        assert_eq!(compute_metrics(&s, Some(&s)).unwrap().ir, Metric::Undefined);
    }

    #[test]
    fn monotone_wealth_has_zero_drawdown() {
        let m = compute_metrics(&series(&[0.01, 0.0, 0.02, 0.003]), None).unwrap();
        assert_eq!(m.mdd_pct, Metric::Defined(0.0));
    }

    #[test]
    fn aggregation() {
        let mk = |sr: Metric, cr: f64| MetricsReport {
            sr,
            sortino: Metric::Undefined,
            calmar: Metric::Defined(1.0),
            mdd_pct: Metric::Defined(5.0),
            cr_pct: Metric::Defined(cr),
            vol_pct: Metric::Defined(10.0),
            ir: Metric::Undefined,
        };
        let one = aggregate_splits(&[mk(Metric::Defined(1.5), 2.0)]).unwrap();
        assert_eq!(one[0].std, Metric::Defined(0.0));
        assert!(one[0].single);

        let two = aggregate_splits(&[mk(Metric::Defined(1.0), 2.0), mk(Metric::Defined(3.0), -4.0)]).unwrap();
        assert_eq!(two[0].mean, Metric::Defined(2.0));
        assert!((two[0].std.value().unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(two[4].mean, Metric::Defined(-1.0));
        assert!((two[4].std.value().unwrap() - 18f64.sqrt()).abs() < 1e-14);
        assert_eq!(two[1].mean, Metric::Undefined);
        assert_eq!(two[1].n_excluded, 2);

        let mixed = aggregate_splits(&[mk(Metric::Undefined, 0.0), mk(Metric::Defined(3.0), 0.0)]).unwrap();
        assert_eq!((mixed[0].n_defined, mixed[0].n_excluded), (1, 1));
        assert!(aggregate_splits(&[]).is_err());
    }

    #[test]
    fn key_value_roundtrip() {
        let m = compute_metrics(&series(&[0.01, -0.02, 0.015, 0.0]), None).unwrap();
        assert_eq!(MetricsReport::from_key_value(&m.to_key_value()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn sharpe_is_permutation_invariant(v in proptest::collection::vec(-0.05f64..0.05, 3..40), rot in 0usize..40) {
            let mut p = v.clone();
            let k = rot % p.len();
            p.rotate_left(k);
            p.reverse();
            let a = compute_metrics(&series(&v), None).unwrap().sr;
            let b = compute_metrics(&series(&p), None).unwrap().sr;
            match (a, b) {
                (Metric::Defined(x), Metric::Defined(y)) => prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs())),
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn ratio_signs_follow_mean(v in proptest::collection::vec(-0.05f64..0.05, 3..40)) {
            let m = compute_metrics(&series(&v), None).unwrap();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            if let (Metric::Defined(sr), Metric::Defined(so)) = (m.sr, m.sortino) {
                if mean.abs() > 1e-12 {
                    prop_assert_eq!(sr > 0.0, mean > 0.0);
                    prop_assert_eq!(so > 0.0, mean > 0.0);
                }
            }
        }

        #[test]
        fn doubling_small_returns_doubles_cr_to_first_order(v in proptest::collection::vec(-1e-3f64..1e-3, 1..30)) {
            let cr1 = compute_metrics(&series(&v), None).unwrap().cr_pct.value().unwrap() / 100.0;
            let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
            let cr2 = compute_metrics(&series(&doubled), None).unwrap().cr_pct.value().unwrap() / 100.0;
            let bound = 4.0 * (v.len() as f64 * 1e-3).powi(2);
            prop_assert!((cr2 - 2.0 * cr1).abs() <= bound);
        }
    }
}
