//! The ingest / train / evaluate / ablate / report pipeline.
//!
//! Layout of a results directory:
//!
//! ```text
//! <out>/<algorithm>-<objective>/split_NN/seed_S/{checkpoint.txt, diagnostics.csv, metrics.txt, episode.csv}
//! <out>/<algorithm>-<objective>/{metrics.csv, summary.csv}
//! <out>/ablation/{cells.csv, summary.csv}
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{evaluate_policy, ActorCritic, Algorithm, EvalMode, Objective, Trainer, UpdateDiagnostics};
use crate::config::{DataSection, RunConfig};
use crate::data::{self, ManifestRow, PriceFormat, ReturnsTable};
use crate::env::EpisodeLog;
use crate::metrics::{aggregate_splits, compute_metrics, Metric, MetricAggregate, MetricsReport, ReturnSeries, METRIC_NAMES};
use crate::nn;
use crate::{Error, Result};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "EZFOLIO_OUT_DIR";

/// Training windows of the default ablation grid.
pub const DEFAULT_WINDOWS: [usize; 4] = [183, 122, 61, 21];
/// CE sample counts of the default ablation grid.
pub const DEFAULT_KS: [usize; 5] = [1, 2, 5, 10, 20];

/// Columns of the rendered tables (IR is stored but not tabulated).
pub const TABLE_COLUMNS: [(&str, &str); 6] = [
    ("sr", "SR"),
    ("sortino", "Sortino"),
    ("calmar", "Calmar"),
    ("mdd_pct", "MDD (%)"),
    ("cr_pct", "CR (%)"),
    ("vol_pct", "Vol (%)"),
];

/// `--out` beats the environment variable, which beats the config.
pub fn resolve_out_dir(cfg: &RunConfig, cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.run.out_dir.clone(),
    }
}

pub fn split_dir(root: &Path, split_id: usize) -> PathBuf {
    root.join(format!("split_{split_id:02}"))
}

fn run_dir(out: &Path, tag: &str, split_id: usize, seed: u64) -> PathBuf {
    split_dir(&out.join(tag), split_id).join(format!("seed_{seed}"))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(|e| Error::io(p, e))
}

fn read_file(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

/// `ppo-recursive`, `random-naive`, ...
pub fn run_tag(algorithm: Algorithm, objective: Objective) -> String {
    format!("{}-{}", algorithm.name(), objective.name()).to_lowercase()
}

/// Splits the price file into per-split `train.csv`, `test.csv` and
/// `history.csv` (the train range, for covariance estimates) plus
/// `manifest.csv`. Winsorization quantiles are fitted on each train range.
pub fn cmd_ingest(prices: &Path, out_dir: &Path, data: &DataSection) -> Result<Vec<ManifestRow>> {
    let table = data::load_prices(
        prices,
        PriceFormat {
            max_missing_frac: data.max_missing_frac,
            ..PriceFormat::default()
        },
    )?;
    let returns = data::compute_returns(&table, 0.0)?;
    let specs = data::make_splits(returns.n_rows(), data.n_splits, data.train_ratio_min, data.train_ratio_max)?;
    create_dir(out_dir)?;
    let mut manifest = Vec::with_capacity(specs.len());
    for spec in &specs {
        let w = data::winsorize(&returns, data.winsor_q, spec.train_range.clone())?;
        let dir = split_dir(out_dir, spec.split_id);
        create_dir(&dir)?;
        let train = w.slice(spec.train_range.clone());
        data::write_returns(&train, dir.join("train.csv"))?;
        data::write_returns(&w.slice(spec.test_range.clone()), dir.join("test.csv"))?;
        data::write_returns(&train, dir.join("history.csv"))?;
        manifest.push(ManifestRow::from_split(spec, &returns));
    }
    data::write_manifest(&manifest, out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Returns of one split as written by [`cmd_ingest`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub split_id: usize,
    pub train: ReturnsTable,
    pub test: ReturnsTable,
    pub history: ReturnsTable,
}

pub fn load_split(splits_dir: &Path, split_id: usize) -> Result<SplitData> {
    let dir = split_dir(splits_dir, split_id);
    Ok(SplitData {
        split_id,
        train: data::read_returns(dir.join("train.csv"))?,
        test: data::read_returns(dir.join("test.csv"))?,
        history: data::read_returns(dir.join("history.csv"))?,
    })
}

/// Split ids selected by `run.splits` (all manifest rows when empty).
pub fn selected_splits(cfg: &RunConfig) -> Result<Vec<usize>> {
    let manifest = data::read_manifest(cfg.data.splits_dir.join("manifest.csv"))?;
    if manifest.is_empty() {
        return Err(Error::config("manifest lists no splits"));
    }
    let available: Vec<usize> = manifest.iter().map(|m| m.split_id).collect();
    if cfg.run.splits.is_empty() {
        return Ok(available);
    }
    for id in &cfg.run.splits {
        if !available.contains(id) {
            return Err(Error::config(format!("split {id} is not in the manifest")));
        }
    }
    Ok(cfg.run.splits.clone())
}

fn check_assets(cfg: &RunConfig, split: &SplitData) -> Result<()> {
    let n = split.train.n_assets();
    if cfg.env.num_assets != 0 && cfg.env.num_assets != n {
        return Err(Error::config(format!(
            "env.num_assets = {} but split {} has {n} assets",
            cfg.env.num_assets, split.split_id
        )));
    }
    Ok(())
}

/// Runs `f(0..n)` on up to `workers` threads; results keep job order.
pub fn run_jobs<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("job slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("job slots")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Output of one training job.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub split_id: usize,
    pub seed: u64,
    pub model: ActorCritic,
    pub diagnostics: Vec<UpdateDiagnostics>,
}

impl TrainedRun {
    pub fn checkpoint(&self) -> String {
        nn::encode_tensors(&self.model.to_tensors())
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut out = Vec::new();
        out.extend_from_slice(UpdateDiagnostics::HEADER.as_bytes());
        out.push(b'\n');
        for d in &self.diagnostics {
            d.write_line(&mut out).expect("writing to memory");
        }
        String::from_utf8(out).expect("ascii")
    }
}

pub fn train_split(cfg: &RunConfig, split: &SplitData, seed: u64) -> Result<TrainedRun> {
    check_assets(cfg, split)?;
    let mut trainer = Trainer::new(cfg.agent_config(seed), &cfg.episode_config(), split.train.clone())?;
    let diagnostics = trainer.train(|_| {})?;
    Ok(TrainedRun {
        split_id: split.split_id,
        seed,
        model: trainer.model,
        diagnostics,
    })
}

/// Daily-rebalanced equal-weight returns, the IR benchmark.
pub fn equal_weight_returns(table: &ReturnsTable) -> Vec<f64> {
    let n = table.n_assets() as f64;
    table.returns.iter().map(|r| r.iter().sum::<f64>() / n).collect()
}

fn eval_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_E7A1)
}

/// One pass over the test segment: the policy mean for learned agents,
/// seeded random increments for the Random agent.
pub fn evaluate_split(cfg: &RunConfig, model: &ActorCritic, split: &SplitData, seed: u64) -> Result<(EpisodeLog, MetricsReport)> {
    let agent = cfg.agent_config(seed);
    let mode = if agent.algorithm == Algorithm::Random {
        EvalMode::Random
    } else {
        EvalMode::Mean
    };
    let log = evaluate_policy(
        model,
        &agent,
        split.test.clone(),
        split.history.returns.clone(),
        &cfg.episode_config(),
        mode,
        &mut eval_rng(seed),
    )?;
    let r = ReturnSeries::new(log.port_returns())?;
    let bench = ReturnSeries::new(equal_weight_returns(&split.test))?;
    let report = compute_metrics(&r, Some(&bench))?;
    Ok((log, report))
}

fn jobs(cfg: &RunConfig) -> Result<Vec<(usize, u64)>> {
    let splits = selected_splits(cfg)?;
    Ok(splits
        .iter()
        .flat_map(|s| cfg.run.seeds.iter().map(move |seed| (*s, *seed)))
        .collect())
}

/// Trains every (split, seed) job and writes checkpoints and diagnostics.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let tag = run_tag(cfg.agent.algorithm, cfg.agent.objective);
    let jobs = jobs(cfg)?;
    run_jobs(jobs.len(), cfg.run.workers, |i| {
        let (split_id, seed) = jobs[i];
        let split = load_split(&cfg.data.splits_dir, split_id)?;
        let run = train_split(cfg, &split, seed)?;
        let dir = run_dir(out, &tag, split_id, seed);
        create_dir(&dir)?;
        write_file(&dir.join("checkpoint.txt"), run.checkpoint())?;
        write_file(&dir.join("diagnostics.csv"), run.diagnostics_csv())?;
        Ok(dir)
    })
}

/// Per-run reports plus the cross-run aggregate.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub runs: Vec<(usize, u64, MetricsReport)>,
    pub aggregate: [MetricAggregate; 7],
}

fn metrics_csv(runs: &[(usize, u64, MetricsReport)]) -> String {
    let mut s = format!("split,seed,{}\n", METRIC_NAMES.join(","));
    for (split, seed, r) in runs {
        let vals: Vec<String> = r.values().iter().map(Metric::to_string).collect();
        let _ = writeln!(s, "{split},{seed},{}", vals.join(","));
    }
    s
}

fn summary_csv(agg: &[MetricAggregate; 7]) -> String {
    let mut s = String::from("metric,mean,std,n_defined,n_excluded\n");
    for (name, a) in METRIC_NAMES.iter().zip(agg) {
        let _ = writeln!(s, "{name},{},{},{},{}", a.mean, a.std, a.n_defined, a.n_excluded);
    }
    s
}

fn parse_summary(text: &str) -> Result<BTreeMap<String, (Metric, Metric)>> {
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::invalid(format!("bad summary line {line:?}")));
        }
        out.insert(f[0].to_string(), (f[1].parse()?, f[2].parse()?));
    }
    Ok(out)
}

/// Evaluates the checkpoints under `checkpoints` (default: the run
/// directory of this config inside `out`) on each split's test range.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, checkpoints: Option<&Path>) -> Result<EvalSummary> {
    let tag = run_tag(cfg.agent.algorithm, cfg.agent.objective);
    let ckpt_root = checkpoints.map_or_else(|| out.to_path_buf(), Path::to_path_buf);
    let jobs = jobs(cfg)?;
    let runs = run_jobs(jobs.len(), cfg.run.workers, |i| {
        let (split_id, seed) = jobs[i];
        let split = load_split(&cfg.data.splits_dir, split_id)?;
        let ckpt_path = run_dir(&ckpt_root, &tag, split_id, seed).join("checkpoint.txt");
        let model = ActorCritic::from_tensors(&nn::decode_tensors(&read_file(&ckpt_path)?)?)?;
        if model.n_assets != split.test.n_assets() {
            return Err(Error::config(format!(
                "checkpoint {} was trained on {} assets, split has {}",
                ckpt_path.display(),
                model.n_assets,
                split.test.n_assets()
            )));
        }
        let (log, report) = evaluate_split(cfg, &model, &split, seed)?;
        let dir = run_dir(out, &tag, split_id, seed);
        create_dir(&dir)?;
        write_file(&dir.join("metrics.txt"), report.to_key_value())?;
        let mut episode = Vec::new();
        log.write_delimited(&mut episode).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join("episode.csv"), episode)?;
        Ok((split_id, seed, report))
    })?;
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.2).collect();
    let aggregate = aggregate_splits(&reports)?;
    let tag_dir = out.join(&tag);
    write_file(&tag_dir.join("metrics.csv"), metrics_csv(&runs))?;
    write_file(&tag_dir.join("summary.csv"), summary_csv(&aggregate))?;
    Ok(EvalSummary { runs, aggregate })
}

/// One (window, K) cell of the ablation grid.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub window: usize,
    pub k: usize,
    pub runs: Vec<(usize, u64, MetricsReport)>,
    pub aggregate: [MetricAggregate; 7],
}

/// Recursive-PPO config of one ablation cell.
pub fn ablation_config(cfg: &RunConfig, window: usize, k: usize) -> RunConfig {
    let mut c = cfg.clone();
    c.agent.algorithm = Algorithm::Ppo;
    c.agent.objective = Objective::Recursive;
    c.env.episode_length = window;
    c.recursive.ce_samples = k;
    c
}

/// Trains and evaluates recursive PPO for every (window, K) pair, in row-major
/// order (windows outer).
pub fn cmd_ablate(cfg: &RunConfig, out: &Path, windows: &[usize], ks: &[usize]) -> Result<Vec<AblationCell>> {
    if windows.is_empty() || ks.is_empty() {
        return Err(Error::config("ablation grid needs at least one window and one K"));
    }
    let cells: Vec<(usize, usize)> = windows.iter().flat_map(|w| ks.iter().map(move |k| (*w, *k))).collect();
    for (w, k) in &cells {
        ablation_config(cfg, *w, *k).validate()?;
    }
    let base = jobs(cfg)?;
    let splits = base
        .iter()
        .map(|(s, _)| *s)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|s| load_split(&cfg.data.splits_dir, s).map(|d| (s, d)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let all: Vec<(usize, usize, usize, u64)> = cells
        .iter()
        .flat_map(|(w, k)| base.iter().map(move |(s, seed)| (*w, *k, *s, *seed)))
        .collect();
    let reports = run_jobs(all.len(), cfg.run.workers, |i| {
        let (w, k, s, seed) = all[i];
        let c = ablation_config(cfg, w, k);
        let split = &splits[&s];
        let run = train_split(&c, split, seed)?;
        let (_, report) = evaluate_split(&c, &run.model, split, seed)?;
        Ok(report)
    })?;
    let mut out_cells = Vec::with_capacity(cells.len());
    for (ci, (w, k)) in cells.iter().enumerate() {
        let runs: Vec<(usize, u64, MetricsReport)> = base
            .iter()
            .enumerate()
            .map(|(j, (s, seed))| (*s, *seed, reports[ci * base.len() + j]))
            .collect();
        let rs: Vec<MetricsReport> = runs.iter().map(|r| r.2).collect();
        out_cells.push(AblationCell {
            window: *w,
            k: *k,
            aggregate: aggregate_splits(&rs)?,
            runs,
        });
    }
    let dir = out.join("ablation");
    create_dir(&dir)?;
    let mut cells_csv = format!("window,k,split,seed,{}\n", METRIC_NAMES.join(","));
    let mut summary = String::from("window,k,metric,mean,std,n_defined,n_excluded\n");
    for c in &out_cells {
        for (s, seed, r) in &c.runs {
            let vals: Vec<String> = r.values().iter().map(Metric::to_string).collect();
            let _ = writeln!(cells_csv, "{},{},{s},{seed},{}", c.window, c.k, vals.join(","));
        }
        for (name, a) in METRIC_NAMES.iter().zip(&c.aggregate) {
            let _ = writeln!(
                summary,
                "{},{},{name},{},{},{},{}",
                c.window, c.k, a.mean, a.std, a.n_defined, a.n_excluded
            );
        }
    }
    write_file(&dir.join("cells.csv"), cells_csv)?;
    write_file(&dir.join("summary.csv"), summary)?;
    Ok(out_cells)
}

fn fmt_pair(mean: Metric, std: Metric) -> String {
    match (mean, std) {
        (Metric::Defined(m), Metric::Defined(s)) => format!("{m:.2} ± {s:.2}"),
        (Metric::Defined(m), Metric::Undefined) => format!("{m:.2}"),
        _ => "undefined".to_string(),
    }
}

/// Human label of an ablation training window.
pub fn window_label(window: usize) -> String {
    match window {
        183 => "Whole year (window = 183)".into(),
        122 => "Half year (window = 122)".into(),
        61 => "Quarter (window = 61)".into(),
        21 => "Month (window = 21)".into(),
        w => format!("window = {w}"),
    }
}

fn render_rows(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut s = line(header);
    s.push('\n');
    s.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    s.push('\n');
    for r in rows {
        s.push_str(&line(r));
        s.push('\n');
    }
    s
}

const ALGORITHM_ORDER: [Algorithm; 4] = [Algorithm::Random, Algorithm::Reinforce, Algorithm::A2c, Algorithm::Ppo];
const OBJECTIVE_ORDER: [Objective; 3] = [Objective::Naive, Objective::Markowitz, Objective::Recursive];

/// Renders the algorithm x objective table and, when present, the ablation
/// grid from stored summaries. Output depends only on the stored files.
pub fn cmd_report(results_dir: &Path) -> Result<String> {
    let mut out = String::new();
    let mut rows = Vec::new();
    for alg in ALGORITHM_ORDER {
        for obj in OBJECTIVE_ORDER {
            let path = results_dir.join(run_tag(alg, obj)).join("summary.csv");
            if !path.is_file() {
                continue;
            }
            let summary = parse_summary(&read_file(&path)?)?;
            let mut row = vec![alg.name().to_string(), obj.name().to_string()];
            for (key, _) in TABLE_COLUMNS {
                let (m, s) = summary
                    .get(key)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("{} lacks {key}", path.display())))?;
                row.push(fmt_pair(m, s));
            }
            rows.push(row);
        }
    }
    if !rows.is_empty() {
        let mut header = vec!["RL".to_string(), "Objective".to_string()];
        header.extend(TABLE_COLUMNS.iter().map(|(_, h)| h.to_string()));
        out.push_str("Portfolio performance by algorithm and objective (mean ± std over runs)\n\n");
        out.push_str(&render_rows(&header, &rows));
    }

    let ablation = results_dir.join("ablation").join("summary.csv");
    if ablation.is_file() {
        let text = read_file(&ablation)?;
        let mut cells: BTreeMap<(usize, usize), BTreeMap<String, (Metric, Metric)>> = BTreeMap::new();
        let mut windows: Vec<usize> = Vec::new();
        let mut ks: Vec<usize> = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::invalid(format!("bad ablation line {line:?}")));
            }
            let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::invalid(format!("bad grid index {s:?}")));
            let (w, k) = (parse(f[0])?, parse(f[1])?);
            if !windows.contains(&w) {
                windows.push(w);
            }
            if !ks.contains(&k) {
                ks.push(k);
            }
            cells.entry((w, k)).or_default().insert(f[2].to_string(), (f[3].parse()?, f[4].parse()?));
        }
        let mut header = vec!["Training window".to_string(), "Metric".to_string()];
        header.extend(ks.iter().map(|k| format!("K={k}")));
        let mut grid_rows = Vec::new();
        for w in &windows {
            for (mi, (key, name)) in TABLE_COLUMNS.iter().enumerate() {
                let mut row = vec![
                    if mi == 0 { window_label(*w) } else { String::new() },
                    name.to_string(),
                ];
                for k in &ks {
                    let cell = cells
                        .get(&(*w, *k))
                        .and_then(|c| c.get(*key))
                        .map_or_else(|| "-".to_string(), |(m, s)| fmt_pair(*m, *s));
                    row.push(cell);
                }
                grid_rows.push(row);
            }
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("Ablation: PPO recursive utility (rows = training window, columns = CE samples K)\n\n");
        out.push_str(&render_rows(&header, &grid_rows));
    }

    if out.is_empty() {
        return Err(Error::invalid(format!(
            "no stored results under {}",
            results_dir.display()
        )));
    }
    Ok(out)
}
