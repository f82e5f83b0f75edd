//! Price ingestion, simple returns, winsorization and chronological splits.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Daily closing prices, fully populated after the fill policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// Row-major `T x n`.
    pub prices: Vec<Vec<f64>>,
}

impl PriceTable {
    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }
}

/// Simple returns; row `t` is the change from price row `t` to `t + 1` and is
/// stamped with the later date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsTable {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub returns: Vec<Vec<f64>>,
}

impl ReturnsTable {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, returns: Vec<Vec<f64>>) -> Result<Self> {
        if dates.len() != returns.len() {
            return Err(Error::invalid("dates and return rows differ in length"));
        }
        if returns.iter().any(|r| r.len() != assets.len()) {
            return Err(Error::invalid("return row width does not match asset count"));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("return dates must be strictly increasing"));
        }
        if returns.iter().flatten().any(|r| !r.is_finite() || *r <= -1.0) {
            return Err(Error::invalid("returns must be finite and > -1"));
        }
        Ok(Self {
            dates,
            assets,
            returns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.returns.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.returns[t]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.returns.iter().map(|r| r[j]).collect()
    }

    pub fn slice(&self, range: Range<usize>) -> ReturnsTable {
        ReturnsTable {
            dates: self.dates[range.clone()].to_vec(),
            assets: self.assets.clone(),
            returns: self.returns[range].to_vec(),
        }
    }
}

/// Layout of a delimited price file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceFormat {
    pub delimiter: u8,
    /// Assets missing in more than this fraction of rows are dropped.
    pub max_missing_frac: f64,
}

impl Default for PriceFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            max_missing_frac: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub split_id: usize,
    pub train_ratio: f64,
    pub train_range: Range<usize>,
    pub test_range: Range<usize>,
}

pub fn load_prices(path: impl AsRef<Path>, format: PriceFormat) -> Result<PriceTable> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_prices(&bytes, format).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::Parse {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

/// Parses price-file bytes. Dates are sorted, thin assets dropped, gaps
/// forward-filled and leading rows that are still incomplete removed.
pub fn parse_prices(bytes: &[u8], format: PriceFormat) -> Result<PriceTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::invalid("need a date column and at least one asset column"));
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let raw_date = record.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|e| Error::invalid(format!("row {}: bad date {raw_date:?}: {e}", line + 1)))?;
        let mut cells = Vec::with_capacity(assets.len());
        for j in 0..assets.len() {
            let cell = record.get(j + 1).unwrap_or("");
            if cell.is_empty() {
                cells.push(None);
                continue;
            }
            let price: f64 = cell
                .parse()
                .map_err(|_| Error::invalid(format!("row {}: bad price {cell:?}", line + 1)))?;
            if !(price.is_finite() && price > 0.0) {
                return Err(Error::invalid(format!("row {}: price must be positive", line + 1)));
            }
            cells.push(Some(price));
        }
        rows.push((date, cells));
    }
    if rows.len() < 2 {
        return Err(Error::invalid("price file needs at least 2 rows"));
    }
    rows.sort_by_key(|(d, _)| *d);
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("duplicate dates"));
    }

    let n_rows = rows.len() as f64;
    let keep: Vec<usize> = (0..assets.len())
        .filter(|&j| {
            let missing = rows.iter().filter(|(_, c)| c[j].is_none()).count() as f64;
            missing / n_rows <= format.max_missing_frac
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid("no asset has sufficient history"));
    }

    let mut last: Vec<Option<f64>> = vec![None; keep.len()];
    let mut dates = Vec::new();
    let mut prices = Vec::new();
    for (date, cells) in rows {
        for (slot, &j) in last.iter_mut().zip(&keep) {
            if let Some(p) = cells[j] {
                *slot = Some(p);
            }
        }
        if last.iter().all(Option::is_some) {
            dates.push(date);
            prices.push(last.iter().map(|p| p.unwrap()).collect());
        }
    }
    if dates.len() < 2 {
        return Err(Error::invalid("fewer than 2 complete rows after forward-fill"));
    }
    Ok(PriceTable {
        dates,
        assets: keep.iter().map(|&j| assets[j].clone()).collect(),
        prices,
    })
}

/// Simple returns, winsorized per asset at `[q, 1 - q]` quantiles of the
/// full column. Use [`winsorize`] to fit quantiles on a sub-range.
pub fn compute_returns(prices: &PriceTable, winsor_q: f64) -> Result<ReturnsTable> {
    if prices.n_rows() < 2 {
        return Err(Error::invalid("need at least 2 price rows"));
    }
    let returns: Vec<Vec<f64>> = prices
        .prices
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(p0, p1)| (p1 - p0) / p0).collect())
        .collect();
    let raw = ReturnsTable {
        dates: prices.dates[1..].to_vec(),
        assets: prices.assets.clone(),
        returns,
    };
    let n = raw.n_rows();
    winsorize(&raw, winsor_q, 0..n)
}

/// Clamps every column to its `[q, 1 - q]` empirical quantiles estimated on
/// rows `fit`, applied to all rows.
pub fn winsorize(table: &ReturnsTable, q: f64, fit: Range<usize>) -> Result<ReturnsTable> {
    if !(0.0..0.5).contains(&q) {
        return Err(Error::invalid(format!("winsor quantile {q} outside [0, 0.5)")));
    }
    if fit.is_empty() || fit.end > table.n_rows() {
        return Err(Error::invalid("winsorization fit range is empty or out of bounds"));
    }
    let mut out = table.clone();
    if q > 0.0 {
        for j in 0..table.n_assets() {
            let mut col: Vec<f64> = table.returns[fit.clone()].iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&col, q);
            let hi = quantile_sorted(&col, 1.0 - q);
            for row in &mut out.returns {
                row[j] = row[j].clamp(lo, hi);
            }
        }
    }
    if out.returns.iter().flatten().any(|r| *r <= -1.0) {
        return Err(Error::invalid("return <= -1 after winsorization"));
    }
    Ok(out)
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Chronological splits with train ratios evenly spaced in
/// `[ratio_min, ratio_max]`.
pub fn make_splits(
    n_rows: usize,
    n_splits: usize,
    ratio_min: f64,
    ratio_max: f64,
) -> Result<Vec<SplitSpec>> {
    if n_splits == 0 {
        return Err(Error::invalid("n_splits must be >= 1"));
    }
    if !(0.0 < ratio_min && ratio_min <= ratio_max && ratio_max < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < ratio_min <= ratio_max < 1, got {ratio_min}..{ratio_max}"
        )));
    }
    (0..n_splits)
        .map(|k| {
            let train_ratio = if n_splits == 1 {
                ratio_min
            } else {
                ratio_min + (ratio_max - ratio_min) * k as f64 / (n_splits - 1) as f64
            };
            // 1e-9 absorbs representation error such as 0.58 * 100 = 57.999...
            let boundary = (train_ratio * n_rows as f64 + 1e-9).floor() as usize;
            if boundary == 0 || boundary >= n_rows {
                return Err(Error::invalid(format!(
                    "split {} has an empty train or test range",
                    k + 1
                )));
            }
            Ok(SplitSpec {
                split_id: k + 1,
                train_ratio,
                train_range: 0..boundary,
                test_range: boundary..n_rows,
            })
        })
        .collect()
}

pub fn write_returns(table: &ReturnsTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["date".to_string()];
    header.extend(table.assets.iter().cloned());
    w.write_record(&header)?;
    for (date, row) in table.dates.iter().zip(&table.returns) {
        let mut rec = vec![date.format("%Y-%m-%d").to_string()];
        rec.extend(row.iter().map(|r| r.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_returns(path: impl AsRef<Path>) -> Result<ReturnsTable> {
    let path = path.as_ref();
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv_reader(path)?;
    let assets: Vec<String> = reader.headers().map_err(|e| parse_err(e.to_string()))?.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut returns = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| parse_err(format!("bad date {:?}: {e}", &record[0])))?;
        let row = record
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().map_err(|_| parse_err(format!("bad return {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        dates.push(date);
        returns.push(row);
    }
    ReturnsTable::new(dates, assets, returns).map_err(|e| parse_err(e.to_string()))
}

/// One manifest row per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub split_id: usize,
    pub train_ratio: f64,
    pub boundary_date: NaiveDate,
    pub train_start: usize,
    pub train_end: usize,
    pub test_start: usize,
    pub test_end: usize,
}

impl ManifestRow {
    pub fn from_split(split: &SplitSpec, table: &ReturnsTable) -> Self {
        Self {
            split_id: split.split_id,
            train_ratio: split.train_ratio,
            boundary_date: table.dates[split.test_range.start],
            train_start: split.train_range.start,
            train_end: split.train_range.end,
            test_start: split.test_range.start,
            test_end: split.test_range.end,
        }
    }
}

pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    csv_reader(path)?
        .deserialize()
        .map(|r| {
            r.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Writes a price table in the ingestion format (used by the synthetic
/// market generator and tests).
pub fn write_prices(table: &PriceTable, mut out: impl Write) -> std::io::Result<()> {
    write!(out, "date")?;
    for a in &table.assets {
        write!(out, ",{a}")?;
    }
    writeln!(out)?;
    for (d, row) in table.dates.iter().zip(&table.prices) {
        write!(out, "{}", d.format("%Y-%m-%d"))?;
        for p in row {
            write!(out, ",{p}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt() -> PriceFormat {
        PriceFormat::default()
    }

    #[test]
    fn loads_well_formed_file() {
        let src = "date,A,B\n2020-01-01,100,50\n2020-01-02,101,51\n2020-01-03,102,52\n";
        let t = parse_prices(src.as_bytes(), fmt()).unwrap();
        assert_eq!((t.n_rows(), t.n_assets()), (3, 2));
        assert_eq!(t.prices[2], vec![102.0, 52.0]);
    }

    #[test]
    fn drops_thin_asset() {
        let src = "date,A,B\n2020-01-01,100,\n2020-01-02,101,\n2020-01-03,102,52\n";
        let t = parse_prices(src.as_bytes(), fmt()).unwrap();
        assert_eq!(t.assets, vec!["A"]);
    }

    #[test]
    fn unsorted_dates_match_sorted_file() {
        let sorted = "date,A\n2020-01-01,1\n2020-01-02,2\n2020-01-03,3\n";
        let shuffled = "date,A\n2020-01-03,3\n2020-01-01,1\n2020-01-02,2\n";
        assert_eq!(
            parse_prices(sorted.as_bytes(), fmt()).unwrap(),
            parse_prices(shuffled.as_bytes(), fmt()).unwrap()
        );
    }

    #[test]
    fn forward_fill_and_leading_drop() {
        let src = "date,A,B\n2020-01-01,,5\n2020-01-02,10,6\n2020-01-03,11,\n2020-01-04,12,7\n";
        let format = PriceFormat {
            max_missing_frac: 0.5,
            ..fmt()
        };
        let t = parse_prices(src.as_bytes(), format).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.prices[1], vec![11.0, 6.0]);
    }

    #[test]
    fn rejects_degenerate_files() {
        assert!(parse_prices(b"date,A\n2020-01-01,1\n", fmt()).is_err());
        assert!(parse_prices(b"date,A\n2020-01-01,\n2020-01-02,\n", fmt()).is_err());
        assert!(parse_prices(b"date,A\nnot-a-date,1\n2020-01-02,2\n", fmt()).is_err());
        assert!(parse_prices(b"date,A\n2020-01-01,1\n2020-01-01,2\n", fmt()).is_err());
        assert!(parse_prices(b"date,A\n2020-01-01,1\n2020-01-02,-2\n", fmt()).is_err());
    }

    fn table(prices: &[f64]) -> PriceTable {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        PriceTable {
            dates: (0..prices.len())
                .map(|i| start + chrono::Days::new(i as u64))
                .collect(),
            assets: vec!["A".into()],
            prices: prices.iter().map(|p| vec![*p]).collect(),
        }
    }

    #[test]
    fn simple_returns() {
        let r = compute_returns(&table(&[100.0, 110.0, 99.0]), 0.0).unwrap();
        assert!((r.returns[0][0] - 0.10).abs() < 1e-12);
        assert!((r.returns[1][0] + 0.10).abs() < 1e-12);
        let flat = compute_returns(&table(&[5.0; 6]), 0.005).unwrap();
        assert!(flat.returns.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn spike_is_clamped_to_upper_quantile() {
        let mut prices = vec![100.0];
        for i in 0..20 {
            let r = if i == 7 { 0.9 } else { 0.001 * (i % 5) as f64 };
            prices.push(prices.last().unwrap() * (1.0 + r));
        }
        let raw = compute_returns(&table(&prices), 0.0).unwrap();
        let w = compute_returns(&table(&prices), 0.1).unwrap();
        // brute-force 90th percentile by linear interpolation on the sorted column
        let mut col = raw.column(0);
        col.sort_by(f64::total_cmp);
        let pos = 0.9 * (col.len() - 1) as f64;
        let (i, frac) = (pos as usize, pos.fract());
        let p90 = col[i] * (1.0 - frac) + col[i + 1] * frac;
        assert!((w.returns[7][0] - p90).abs() < 1e-12);
        assert!(w.returns[7][0] < 0.9);
    }

    #[test]
    fn splits_by_enumeration() {
        let one = make_splits(100, 1, 0.5, 0.5).unwrap();
        assert_eq!(one[0].train_range, 0..50);
        assert_eq!(one[0].test_range, 50..100);

        let ten = make_splits(100, 10, 0.5, 0.9).unwrap();
        let boundaries: Vec<usize> = ten.iter().map(|s| s.train_range.end).collect();
        // floor(100 * (0.5 + 0.4 k / 9)) for k = 0..9
        assert_eq!(boundaries, vec![50, 54, 58, 63, 67, 72, 76, 81, 85, 90]);

        let tail = make_splits(10, 1, 0.99, 0.99).unwrap();
        assert_eq!(tail[0].test_range.len(), 1);
    }

    #[test]
    fn split_errors() {
        assert!(make_splits(100, 0, 0.5, 0.9).is_err());
        assert!(make_splits(100, 2, 0.9, 0.5).is_err());
        assert!(make_splits(1, 1, 0.5, 0.5).is_err());
    }
}
