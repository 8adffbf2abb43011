//! Rolling-origin evaluation: for every cell `(T, j)` one independent model
//! is trained on days `1..=T` and scored on day `T + j`.

mod metrics;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    case_stats, error_metric, mobility_totals, pearson_shift_correlation, region_correlations, relative_error,
    relative_term, rows_error, CaseStats, Correlation, RelativeError,
};
pub use report::{emit_report, load_rows, ReportExtras, HORIZON_RANGES};

use crate::baselines::{ar_fit, ar_predict, avg_predict, avg_window_predict, last_day_predict};
use crate::dataio::{DataSource, Prefix, Traced};
use crate::error::{Error, Result};
use crate::meta::tl_base_train;
use crate::models::{Model, ModelKind};
use crate::numcore::Rng;
use crate::train::{cell_seed, prepare_cell, train_model, Checkpoint, TrainConfig, PROTOCOL_START};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Avg,
    AvgWindow,
    LastDay,
    Arima,
    Lstm,
    Mpnn,
    MpnnLstm,
    MpnnTl,
    TlBase,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Avg,
        Family::AvgWindow,
        Family::LastDay,
        Family::Arima,
        Family::Lstm,
        Family::Mpnn,
        Family::MpnnLstm,
        Family::MpnnTl,
        Family::TlBase,
    ];

    /// Name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Family::Avg => "AVG",
            Family::AvgWindow => "AVG_WINDOW",
            Family::LastDay => "LAST_DAY",
            Family::Arima => "ARIMA",
            Family::Lstm => "LSTM",
            Family::Mpnn => "MPNN",
            Family::MpnnLstm => "MPNN+LSTM",
            Family::MpnnTl => "MPNN+TL",
            Family::TlBase => "TL_BASE",
        }
    }

    /// Name used on the command line and in configuration files.
    pub fn key(self) -> &'static str {
        match self {
            Family::Avg => "avg",
            Family::AvgWindow => "avg_window",
            Family::LastDay => "last_day",
            Family::Arima => "arima",
            Family::Lstm => "lstm",
            Family::Mpnn => "mpnn",
            Family::MpnnLstm => "mpnn_lstm",
            Family::MpnnTl => "mpnn_tl",
            Family::TlBase => "tl_base",
        }
    }

    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            Family::Lstm => Some(ModelKind::Lstm),
            Family::Mpnn | Family::MpnnTl | Family::TlBase => Some(ModelKind::Mpnn),
            Family::MpnnLstm => Some(ModelKind::MpnnLstm),
            _ => None,
        }
    }

    pub fn is_neural(self) -> bool {
        self.model_kind().is_some()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL.into_iter().find(|f| f.key() == s || f.label() == s).ok_or_else(|| {
            let keys: Vec<&str> = Family::ALL.iter().map(|f| f.key()).collect();
            Error::Config(format!("unknown model {s:?} (expected one of {})", keys.join(", ")))
        })
    }
}

/// Anchors `T` and horizons `j` of the protocol. A cell is part of the grid
/// when its test day `T + j` exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolGrid {
    pub t_start: usize,
    /// Last anchor (inclusive); defaults to the second to last day.
    pub t_end: Option<usize>,
    pub t_stride: usize,
    pub dt: usize,
    /// Restricts the grid to this one horizon.
    pub horizon: Option<usize>,
}

impl Default for ProtocolGrid {
    fn default() -> Self {
        Self { t_start: PROTOCOL_START, t_end: None, t_stride: 1, dt: 14, horizon: None }
    }
}

impl ProtocolGrid {
    pub fn cells(&self, n_days: usize) -> Vec<(usize, usize)> {
        let t_end = self.t_end.unwrap_or(n_days.saturating_sub(1)).min(n_days.saturating_sub(1));
        let mut out = Vec::new();
        let mut t = self.t_start;
        while t <= t_end {
            for j in 1..=self.dt {
                if t + j <= n_days && self.horizon.is_none_or(|h| h == j) {
                    out.push((t, j));
                }
            }
            t += self.t_stride.max(1);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub train: TrainConfig,
    pub grid: ProtocolGrid,
    /// Window of AVG_WINDOW.
    pub baseline_window: usize,
    pub ar_order: usize,
    pub ar_differencing: usize,
    pub seed: u64,
    /// Cells evaluated in parallel.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            grid: ProtocolGrid::default(),
            baseline_window: 7,
            ar_order: crate::baselines::DEFAULT_AR_ORDER,
            ar_differencing: crate::baselines::DEFAULT_DIFFERENCING,
            seed: 0,
            jobs: 1,
        }
    }
}

/// Inputs some families need beyond the evaluated country.
#[derive(Default, Clone, Copy)]
pub struct EvalContext<'a> {
    /// Meta-learned initialization for MPNN+TL.
    pub meta_model: Option<&'a Model>,
    /// Other countries pooled by TL_BASE.
    pub foreign: &'a [&'a dyn DataSource],
    /// When set, every trained cell's checkpoint is written under this
    /// directory (see [`checkpoint_path`]).
    pub save_checkpoints: Option<&'a Path>,
}

/// `<dir>/<country>/<family>/T<T>_j<j>.ckpt`
pub fn checkpoint_path(dir: &Path, country: &str, family: Family, t: usize, j: usize) -> PathBuf {
    dir.join(country).join(family.key()).join(format!("T{t}_j{j}.ckpt"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub country: String,
    pub model: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub horizon: usize,
    pub region: String,
    pub prediction: f64,
    pub actual: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub country: String,
    pub model: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub horizon: usize,
    pub reason: String,
}

/// What one evaluated cell used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub country: String,
    pub model: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub horizon: usize,
    pub train_targets: Vec<usize>,
    pub validation_targets: Vec<usize>,
    pub test_target: usize,
    /// Last day whose cases or mobility the cell read before scoring.
    pub max_day_read: usize,
    pub epochs_run: Option<usize>,
    pub best_val_mae: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rows: Vec<ReportRow>,
    pub skipped: Vec<SkippedCell>,
    pub cells: Vec<CellSummary>,
}

impl ErrorReport {
    pub fn merge(&mut self, other: ErrorReport) {
        self.rows.extend(other.rows);
        self.skipped.extend(other.skipped);
        self.cells.extend(other.cells);
    }

    fn select<'a>(&'a self, country: Option<&'a str>, model: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.model == model && country.is_none_or(|c| r.country == c))
    }

    /// Error per horizon for one model (optionally one country).
    pub fn per_horizon(&self, country: Option<&str>, model: &str) -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in self.select(country, model) {
            let e = acc.entry(r.horizon).or_insert((0.0, 0));
            e.0 += r.abs_error;
            e.1 += 1;
        }
        acc.into_iter().map(|(j, (s, n))| (j, s / n as f64)).collect()
    }

    /// Error over horizons `lo..=hi`, optionally restricted to anchors `T <= t_max`.
    pub fn range_error(
        &self,
        country: Option<&str>,
        model: &str,
        lo: usize,
        hi: usize,
        t_max: Option<usize>,
    ) -> Option<f64> {
        let rows: Vec<&ReportRow> = self
            .select(country, model)
            .filter(|r| r.horizon >= lo && r.horizon <= hi && t_max.is_none_or(|m| r.t <= m))
            .collect();
        rows_error(&rows).ok()
    }

    /// Number of distinct (T, j) cells behind [`ErrorReport::range_error`].
    pub fn range_cells(&self, country: Option<&str>, model: &str, lo: usize, hi: usize) -> usize {
        let cells: std::collections::BTreeSet<(usize, usize)> = self
            .select(country, model)
            .filter(|r| r.horizon >= lo && r.horizon <= hi)
            .map(|r| (r.t, r.horizon))
            .collect();
        cells.len()
    }

    /// Models present, in first-seen order, keyed `country/model` when the
    /// report spans several countries.
    fn groups(&self) -> Vec<(Option<String>, String)> {
        let countries: std::collections::BTreeSet<&str> = self.rows.iter().map(|r| r.country.as_str()).collect();
        let multi = countries.len() > 1;
        let mut seen = Vec::new();
        for r in &self.rows {
            let key = (multi.then(|| r.country.clone()), r.model.clone());
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen
    }

    /// `{model: {"1-3": e, "1-7": e, "1-14": e}}`.
    pub fn summary(&self) -> BTreeMap<String, BTreeMap<String, f64>> {
        self.per_range(|country, model, lo, hi| self.range_error(country, model, lo, hi, None))
    }

    /// Same shape as [`ErrorReport::summary`], holding the cell counts.
    pub fn summary_cells(&self) -> BTreeMap<String, BTreeMap<String, usize>> {
        self.per_range(|country, model, lo, hi| Some(self.range_cells(country, model, lo, hi)).filter(|&n| n > 0))
    }

    fn per_range<V>(
        &self,
        f: impl Fn(Option<&str>, &str, usize, usize) -> Option<V>,
    ) -> BTreeMap<String, BTreeMap<String, V>> {
        let mut out = BTreeMap::new();
        for (country, model) in self.groups() {
            let mut ranges = BTreeMap::new();
            for (lo, hi) in HORIZON_RANGES {
                if let Some(v) = f(country.as_deref(), &model, lo, hi) {
                    ranges.insert(format!("{lo}-{hi}"), v);
                }
            }
            let key = match country {
                Some(c) => format!("{c}/{model}"),
                None => model,
            };
            out.insert(key, ranges);
        }
        out
    }
}

enum CellResult {
    Done(Vec<ReportRow>, CellSummary),
    Skipped(SkippedCell),
}

fn baseline_prediction(family: Family, series: &[f64], j: usize, cfg: &EvalConfig) -> Result<f64> {
    match family {
        Family::Avg => avg_predict(series, j),
        Family::AvgWindow => avg_window_predict(series, cfg.baseline_window, j),
        Family::LastDay => last_day_predict(series, j),
        Family::Arima => ar_predict(&ar_fit(series, cfg.ar_order, cfg.ar_differencing)?, series, j),
        _ => unreachable!("neural family"),
    }
}

fn evaluate_cell(
    src: &dyn DataSource,
    regions: &[String],
    family: Family,
    t: usize,
    j: usize,
    cfg: &EvalConfig,
    ctx: EvalContext,
) -> Result<CellResult> {
    let country = src.country().to_string();
    let label = family.label().to_string();
    let prefix = Prefix::new(src, t);
    let traced = Traced::new(&prefix);
    let seed = cell_seed(cfg.seed, &country, t, j);

    let (prediction, mut summary) = if let Some(kind) = family.model_kind() {
        let train_cfg = TrainConfig { seed: Rng::derive_seed(seed, &[1]), ..cfg.train.clone() };
        let init = match family {
            Family::MpnnTl => {
                ctx.meta_model.cloned().ok_or_else(|| Error::Config("MPNN+TL needs a meta-trained model".into()))?
            }
            _ => Model::new(cfg.train.model_spec(kind), &mut Rng::new(seed))?,
        };
        let attempt = if family == Family::TlBase {
            if ctx.foreign.is_empty() {
                return Err(Error::Config("TL_BASE needs at least one other country".into()));
            }
            tl_base_train(ctx.foreign, &traced, t, j, init, &train_cfg)
        } else {
            prepare_cell(&traced, t, j, init.spec())
                .and_then(|cell| train_model(init, &cell.train, &cell.validation, &train_cfg, None).map(|o| (o, cell)))
        };
        let (outcome, cell) = match attempt {
            Ok(v) => v,
            Err(Error::InsufficientData(reason)) => {
                return Ok(CellResult::Skipped(SkippedCell { country, model: label, t, horizon: j, reason }));
            }
            Err(e) => return Err(e),
        };
        if let Some(dir) = ctx.save_checkpoints {
            let path = checkpoint_path(dir, &country, family, t, j);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let extra = serde_json::json!({ "country": country, "model": label, "T": t, "horizon": j, "seed": seed });
            outcome.checkpoint.save(&path, extra)?;
        }
        let prediction = outcome.checkpoint.model.predict(&cell.test)?;
        let summary = CellSummary {
            country: country.clone(),
            model: label.clone(),
            t,
            horizon: j,
            train_targets: cell.split.train_targets,
            validation_targets: cell.split.validation_targets,
            test_target: cell.split.test_target,
            max_day_read: 0,
            epochs_run: Some(outcome.checkpoint.epochs_run),
            best_val_mae: Some(outcome.checkpoint.best_val_mae),
        };
        (prediction, summary)
    } else {
        let prediction = (0..src.n_regions())
            .map(|r| baseline_prediction(family, &traced.region_range(r, 1, t), j, cfg))
            .collect::<Result<Vec<f64>>>()?;
        let summary = CellSummary {
            country: country.clone(),
            model: label.clone(),
            t,
            horizon: j,
            train_targets: Vec::new(),
            validation_targets: Vec::new(),
            test_target: t + j,
            max_day_read: 0,
            epochs_run: None,
            best_val_mae: None,
        };
        (prediction, summary)
    };
    summary.max_day_read = traced.log().max_case_day().max(traced.log().max_mobility_day());
    Ok(CellResult::Done(report_rows(src, regions, &label, t, j, &prediction), summary))
}

fn report_rows(
    src: &dyn DataSource,
    regions: &[String],
    label: &str,
    t: usize,
    j: usize,
    prediction: &[f64],
) -> Vec<ReportRow> {
    let country = src.country();
    let actual = src.cases_on(t + j);
    regions
        .iter()
        .zip(prediction.iter().zip(&actual))
        .map(|(region, (&p, &y))| ReportRow {
            country: country.to_string(),
            model: label.to_string(),
            t,
            horizon: j,
            region: region.clone(),
            prediction: p,
            actual: y,
            abs_error: (p - y).abs(),
        })
        .collect()
}

/// Runs every grid cell of `src` for one family. Cells without enough data
/// for a train and a validation split are listed in `skipped`.
pub fn rolling_evaluate(
    src: &dyn DataSource,
    regions: &[String],
    family: Family,
    config: &EvalConfig,
    ctx: EvalContext,
) -> Result<ErrorReport> {
    if regions.len() != src.n_regions() {
        return Err(Error::Contract(format!("{} region names for {} regions", regions.len(), src.n_regions())));
    }
    config.train.validate()?;
    let cells = config.grid.cells(src.n_days());
    collect_cells(&cells, config.jobs, |t, j| evaluate_cell(src, regions, family, t, j, config, ctx))
}

fn collect_cells<F>(cells: &[(usize, usize)], jobs: usize, f: F) -> Result<ErrorReport>
where
    F: Fn(usize, usize) -> Result<CellResult> + Sync,
{
    let results: Vec<Result<CellResult>> = if jobs <= 1 {
        cells.iter().map(|&(t, j)| f(t, j)).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| cells.par_iter().map(|&(t, j)| f(t, j)).collect())
    };
    let mut report = ErrorReport::default();
    for r in results {
        match r? {
            CellResult::Done(rows, summary) => {
                report.rows.extend(rows);
                report.cells.push(summary);
            }
            CellResult::Skipped(s) => report.skipped.push(s),
        }
    }
    Ok(report)
}

/// Scores a neural family from checkpoints written by a previous run
/// (see [`EvalContext::save_checkpoints`]). Cells that cannot have a
/// validation split are skipped; any other cell without a checkpoint fails
/// with [`Error::MissingCheckpoint`].
pub fn evaluate_checkpoints(
    src: &dyn DataSource,
    regions: &[String],
    family: Family,
    config: &EvalConfig,
    dir: &Path,
) -> Result<ErrorReport> {
    let kind = family.model_kind().ok_or_else(|| Error::Config(format!("{} has no checkpoints", family.label())))?;
    if regions.len() != src.n_regions() {
        return Err(Error::Contract(format!("{} region names for {} regions", regions.len(), src.n_regions())));
    }
    let fallback_spec = config.train.model_spec(kind);
    let cells = config.grid.cells(src.n_days());
    collect_cells(&cells, config.jobs, |t, j| {
        let country = src.country().to_string();
        let label = family.label().to_string();
        let path = checkpoint_path(dir, &country, family, t, j);
        let prefix = Prefix::new(src, t);
        let traced = Traced::new(&prefix);
        if !path.exists() {
            return match prepare_cell(&traced, t, j, &fallback_spec) {
                Err(Error::InsufficientData(reason)) => {
                    Ok(CellResult::Skipped(SkippedCell { country, model: label, t, horizon: j, reason }))
                }
                Err(e) => Err(e),
                Ok(_) => Err(Error::MissingCheckpoint { t, horizon: j, path }),
            };
        }
        let (ckpt, _) = Checkpoint::load(&path)?;
        let cell = prepare_cell(&traced, t, j, ckpt.model.spec())?;
        let prediction = ckpt.model.predict(&cell.test)?;
        let summary = CellSummary {
            country,
            model: label.clone(),
            t,
            horizon: j,
            train_targets: cell.split.train_targets,
            validation_targets: cell.split.validation_targets,
            test_target: cell.split.test_target,
            max_day_read: traced.log().max_case_day().max(traced.log().max_mobility_day()),
            epochs_run: Some(ckpt.epochs_run),
            best_val_mae: Some(ckpt.best_val_mae),
        };
        Ok(CellResult::Done(report_rows(src, regions, &label, t, j, &prediction), summary))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, CountryDataset, SyntheticConfig};

    fn dataset(n_days: usize) -> CountryDataset {
        let cfg = SyntheticConfig { n_regions: 4, n_days, n_countries: 1, ..Default::default() };
        generate_synthetic(&cfg).unwrap().remove(0)
    }

    #[test]
    fn grid_cell_count() {
        let cells = ProtocolGrid::default().cells(30);
        assert_eq!(cells.first(), Some(&(14, 1)));
        assert_eq!(cells.last(), Some(&(29, 1)));
        let expected: usize = (14..=29).map(|t| (30 - t).min(14)).sum();
        assert_eq!(cells.len(), expected);
    }

    #[test]
    fn last_day_matches_baseline_module() {
        let ds = dataset(30);
        let report =
            rolling_evaluate(&ds, &ds.regions, Family::LastDay, &EvalConfig::default(), EvalContext::default())
                .unwrap();
        assert!(report.skipped.is_empty());
        for r in &report.rows {
            let u = ds.regions.iter().position(|x| *x == r.region).unwrap();
            let series = ds.region_range(u, 1, r.t);
            assert_eq!(r.prediction, last_day_predict(&series, r.horizon).unwrap());
            assert_eq!(r.actual, ds.case(u, r.t + r.horizon));
        }
        assert!(report.cells.iter().all(|c| c.max_day_read <= c.t));
    }

    #[test]
    fn summary_matches_rows() {
        let ds = dataset(30);
        let mut report =
            rolling_evaluate(&ds, &ds.regions, Family::Avg, &EvalConfig::default(), EvalContext::default()).unwrap();
        report.merge(
            rolling_evaluate(&ds, &ds.regions, Family::AvgWindow, &EvalConfig::default(), EvalContext::default())
                .unwrap(),
        );
        let s = report.summary();
        for model in ["AVG", "AVG_WINDOW"] {
            let rows: Vec<&ReportRow> = report.rows.iter().filter(|r| r.model == model && r.horizon <= 7).collect();
            let direct = rows.iter().map(|r| r.abs_error).sum::<f64>() / rows.len() as f64;
            assert!((s[model]["1-7"] - direct).abs() < 1e-9);
            // weighted mean of per-horizon errors
            let per = report.per_horizon(None, model);
            let counts: BTreeMap<usize, usize> =
                (1..=7).map(|j| (j, rows.iter().filter(|r| r.horizon == j).count())).collect();
            let weighted = (1..=7).map(|j| per[&j] * counts[&j] as f64).sum::<f64>() / rows.len() as f64;
            assert!((weighted - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn neural_cells_skip_without_validation_and_are_parallel_deterministic() {
        let ds = dataset(24);
        let cfg = EvalConfig {
            train: TrainConfig { hidden: 4, max_epochs: 2, ..Default::default() },
            grid: ProtocolGrid { t_end: Some(15), dt: 8, ..Default::default() },
            ..Default::default()
        };
        let a = rolling_evaluate(&ds, &ds.regions, Family::Mpnn, &cfg, EvalContext::default()).unwrap();
        let b =
            rolling_evaluate(&ds, &ds.regions, Family::Mpnn, &EvalConfig { jobs: 3, ..cfg }, EvalContext::default())
                .unwrap();
        assert_eq!(a, b);
        // T=14: validation exists for j <= 6; T=15: for j <= 7.
        let skipped: Vec<(usize, usize)> = a.skipped.iter().map(|s| (s.t, s.horizon)).collect();
        assert_eq!(skipped, vec![(14, 7), (14, 8), (15, 8)]);
        assert!(a.cells.iter().all(|c| c.max_day_read <= c.t && c.train_targets.iter().all(|&d| d <= c.t)));
    }

    #[test]
    fn saved_checkpoints_reproduce_rows_and_missing_cells_are_named() {
        let ds = dataset(22);
        let cfg = EvalConfig {
            train: TrainConfig { hidden: 4, max_epochs: 3, ..Default::default() },
            grid: ProtocolGrid { t_end: Some(15), dt: 3, ..Default::default() },
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let ctx = EvalContext { save_checkpoints: Some(dir.path()), ..Default::default() };
        let trained = rolling_evaluate(&ds, &ds.regions, Family::Mpnn, &cfg, ctx).unwrap();
        let reloaded = evaluate_checkpoints(&ds, &ds.regions, Family::Mpnn, &cfg, dir.path()).unwrap();
        assert_eq!(trained, reloaded);

        std::fs::remove_file(checkpoint_path(dir.path(), &ds.country, Family::Mpnn, 15, 2)).unwrap();
        match evaluate_checkpoints(&ds, &ds.regions, Family::Mpnn, &cfg, dir.path()) {
            Err(Error::MissingCheckpoint { t: 15, horizon: 2, .. }) => {}
            other => panic!("expected missing checkpoint, got {other:?}"),
        }
    }
}
