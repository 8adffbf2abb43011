//! The `mobcast` command line.
//!
//! Every subcommand writes `manifest.json` into its output directory before
//! doing any work (status `incomplete`) and rewrites it on success (status
//! `complete`). The manifest holds the argument vector, the resolved run
//! configuration, its SHA-256, the seed and the crate and format versions.
//!
//! Run configurations are TOML files:
//!
//! ```toml
//! seed = 1
//! models = ["mpnn", "avg_window"]
//! data = ["bundles/SYN0"]
//! jobs = 4
//!
//! [train]
//! hidden = 16
//! max_epochs = 200
//!
//! [grid]
//! t_stride = 7
//! ```
//!
//! Tables `train`, `meta`, `grid`, `baselines` and `synthetic` take the
//! fields of the corresponding library configs; unknown keys are rejected.
//! The top-level `seed` is copied into every seeded component.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{
    align_and_filter, generate_synthetic, load_bundle, load_cases, load_mobility, load_region_mapping, save_bundle,
    CountryDataset, DataSource, RawCountry, RegionUniverse, SyntheticConfig, BUNDLE_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::eval::{
    case_stats, emit_report, evaluate_checkpoints, load_rows, region_correlations, relative_error, CellSummary,
    ErrorReport, EvalConfig, EvalContext, Family, ProtocolGrid, ReportExtras, SkippedCell,
};
use crate::meta::{maml_meta_train, MetaConfig};
use crate::models::{ModelKind, CHECKPOINT_VERSION};
use crate::train::{Checkpoint, TrainConfig};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "MOBCAST_DATA_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_CHECKPOINT_FILE: &str = "meta.ckpt";
/// Window of the relative error written next to each report.
pub const RELATIVE_ERROR_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Window of AVG_WINDOW.
    pub window: usize,
    pub ar_order: usize,
    pub ar_differencing: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self { window: e.baseline_window, ar_order: e.ar_order, ar_differencing: e.ar_differencing }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Bundle directories, or directories of bundles.
    pub data: Vec<PathBuf>,
    /// Countries to evaluate; empty means every loaded country.
    pub countries: Vec<String>,
    pub models: Vec<Family>,
    pub jobs: usize,
    /// Meta-trained initialization used by MPNN+TL.
    pub meta_checkpoint: Option<PathBuf>,
    /// Regions with fewer total cases are dropped at ingestion.
    pub min_total_cases: f64,
    pub train: TrainConfig,
    pub meta: MetaConfig,
    pub grid: ProtocolGrid,
    pub baselines: BaselineConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: Vec::new(),
            countries: Vec::new(),
            models: vec![Family::Mpnn],
            jobs: 1,
            meta_checkpoint: None,
            min_total_cases: 10.0,
            train: TrainConfig::default(),
            meta: MetaConfig::default(),
            grid: ProtocolGrid::default(),
            baselines: BaselineConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copies the top-level seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.meta.seed = seed;
        self.synthetic.noise_seed = seed;
        self
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            train: self.train.clone(),
            grid: self.grid.clone(),
            baseline_window: self.baselines.window,
            ar_order: self.baselines.ar_order,
            ar_differencing: self.baselines.ar_differencing,
            seed: self.seed,
            jobs: self.jobs,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        self.train.validate()?;
        self.meta.validate()?;
        self.synthetic.validate()
    }
}

#[derive(Debug, Parser)]
#[command(name = "mobcast", version, about = "Forecast regional case counts from mobility graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate raw mobility and case files into a bundle.
    Ingest(IngestArgs),
    /// Generate synthetic country bundles.
    Synth(SynthArgs),
    /// Mobility/case shift correlations and daily case statistics.
    Correlate(CorrelateArgs),
    /// Train per-cell models over the protocol grid and report their errors.
    Train(RunArgs),
    /// Meta-train an initialization on several countries.
    MetaTrain(MetaTrainArgs),
    /// Score checkpoints from `train`, or train and score in one go.
    Evaluate(EvaluateArgs),
    /// Merge report directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Bundle directory or directory of bundles; defaults to the configured
    /// data, then to $MOBCAST_DATA_DIR.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Restrict to these countries.
    #[arg(long = "country")]
    pub countries: Vec<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub mobility: PathBuf,
    #[arg(long)]
    pub cases: PathBuf,
    /// Two-column CSV `source_name,region_id`.
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long)]
    pub country: String,
    #[arg(long)]
    pub min_total_cases: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub countries: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 14)]
    pub max_shift: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Model families (`avg`, `avg_window`, `last_day`, `arima`, `lstm`,
    /// `mpnn`, `mpnn_lstm`, `mpnn_tl`, `tl_base`).
    #[arg(long = "model")]
    pub models: Vec<Family>,
    /// Train only this anchor day (needs --horizon).
    #[arg(long, requires = "horizon")]
    pub t: Option<usize>,
    #[arg(long, requires = "t")]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub meta_checkpoint: Option<PathBuf>,
    /// Grid cells run in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetaTrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// `mpnn` or `mpnn_lstm`.
    #[arg(long, default_value = "mpnn")]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory of a `train` run; its checkpoints are scored instead
    /// of training.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report directories to merge.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: Vec<String>,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    version: &'a str,
    bundle_format_version: &'a str,
    checkpoint_format_version: u32,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    outputs: Vec<String>,
}

struct Run<'a> {
    command: &'a str,
    args: Vec<String>,
    out: PathBuf,
    config: RunConfig,
}

impl Run<'_> {
    fn write_manifest(&self, status: &str, error: Option<String>, outputs: Vec<String>) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let manifest = Manifest {
            command: self.command,
            args: self.args.clone(),
            status,
            error,
            version: env!("CARGO_PKG_VERSION"),
            bundle_format_version: BUNDLE_FORMAT_VERSION,
            checkpoint_format_version: CHECKPOINT_VERSION,
            seed: self.config.seed,
            config_sha256: self.config.content_hash(),
            config: &self.config,
            outputs,
        };
        let path = self.out.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = common.seed.unwrap_or(config.seed);
    Ok(config.with_seed(seed))
}

fn bundle_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join(MANIFEST_FILE).is_file() && path.join("cases.csv").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut dirs: Vec<PathBuf> =
        entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("cases.csv").is_file()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("{}: no dataset bundle found", path.display())));
    }
    Ok(dirs)
}

/// Loads every bundle named by the flags, the config or the environment.
fn load_datasets(data: &DataArgs, config: &mut RunConfig) -> Result<Vec<CountryDataset>> {
    if !data.data.is_empty() {
        config.data = data.data.clone();
    }
    if !data.countries.is_empty() {
        config.countries = data.countries.clone();
    }
    if config.data.is_empty() {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) => config.data = vec![PathBuf::from(dir)],
            None => return Err(Error::Config(format!("no data given (use --data or set {DATA_DIR_ENV})"))),
        }
    }
    let mut out = Vec::new();
    for root in &config.data {
        for dir in bundle_dirs(root)? {
            out.push(load_bundle(&dir)?);
        }
    }
    for c in &config.countries {
        if !out.iter().any(|d| &d.country == c) {
            return Err(Error::Config(format!("country {c} not found in the given data")));
        }
    }
    Ok(out)
}

fn selected<'a>(datasets: &'a [CountryDataset], config: &RunConfig) -> Vec<&'a CountryDataset> {
    datasets.iter().filter(|d| config.countries.is_empty() || config.countries.contains(&d.country)).collect()
}

fn relative_errors(report: &ErrorReport) -> serde_json::Value {
    let mut groups: std::collections::BTreeMap<String, Vec<crate::eval::ReportRow>> = Default::default();
    for r in &report.rows {
        groups.entry(format!("{}/{}", r.country, r.model)).or_default().push(r.clone());
    }
    let map = groups
        .into_iter()
        .map(|(k, rows)| {
            let v = match relative_error(&rows, RELATIVE_ERROR_WINDOW) {
                Ok(r) => serde_json::to_value(r).expect("serializable"),
                Err(_) => serde_json::Value::Null,
            };
            (k, v)
        })
        .collect();
    serde_json::Value::Object(map)
}

fn write_report(report: &ErrorReport, dir: &Path, extras: &ReportExtras) -> Result<()> {
    emit_report(report, dir, extras)?;
    let path = dir.join("relative_error.json");
    let body = serde_json::to_string_pretty(&relative_errors(report)).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
}

/// Outcome of a command: outputs written and whether every requested cell
/// completed.
struct Outcome {
    outputs: Vec<String>,
    complete: Result<()>,
}

impl Outcome {
    fn done(outputs: Vec<String>) -> Self {
        Self { outputs, complete: Ok(()) }
    }
}

fn cmd_ingest(args: &IngestArgs, config: &mut RunConfig) -> Result<Outcome> {
    if let Some(m) = args.min_total_cases {
        config.min_total_cases = m;
    }
    let mapping = load_region_mapping(&args.regions)?;
    let universe = RegionUniverse::from_mapping(&mapping)?;
    let mobility = load_mobility(&args.mobility, &universe)?;
    let cases = load_cases(&args.cases, &universe, None)?;
    let raw = RawCountry { country: args.country.clone(), regions: universe.ids().to_vec(), mobility, cases };
    let dataset = align_and_filter(&raw, config.min_total_cases)?;
    let dir = args.common.out.join(&dataset.country);
    save_bundle(&dataset, &dir)?;
    info!("{}: {} regions, {} days", dataset.country, dataset.n_regions(), dataset.n_days());
    Ok(Outcome::done(vec![dataset.country.clone()]))
}

fn cmd_synth(args: &SynthArgs, config: &mut RunConfig) -> Result<Outcome> {
    let s = &mut config.synthetic;
    if let Some(v) = args.regions {
        s.n_regions = v;
    }
    if let Some(v) = args.days {
        s.n_days = v;
    }
    if let Some(v) = args.countries {
        s.n_countries = v;
    }
    let datasets = generate_synthetic(&config.synthetic)?;
    let mut outputs = Vec::new();
    for d in &datasets {
        save_bundle(d, &args.common.out.join(&d.country))?;
        outputs.push(d.country.clone());
    }
    Ok(Outcome::done(outputs))
}

fn cmd_correlate(args: &CorrelateArgs, config: &mut RunConfig) -> Result<Outcome> {
    if args.max_shift == 0 {
        return Err(Error::Config("max-shift must be >= 1".into()));
    }
    let datasets = load_datasets(&args.data, config)?;
    let mut outputs = Vec::new();
    for d in selected(&datasets, config) {
        let extras = ReportExtras {
            correlations: region_correlations(d, &d.regions, 1..=args.max_shift)?,
            case_stats: case_stats(d, &d.regions),
        };
        let dir = args.common.out.join(&d.country);
        emit_report(&ErrorReport::default(), &dir, &extras)?;
        outputs.push(d.country.clone());
    }
    Ok(Outcome::done(outputs))
}

fn apply_run_flags(args: &RunArgs, config: &mut RunConfig) {
    if !args.models.is_empty() {
        config.models = args.models.clone();
    }
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    if let (Some(t), Some(j)) = (args.t, args.horizon) {
        config.grid.t_start = t;
        config.grid.t_end = Some(t);
        config.grid.dt = config.grid.dt.max(j);
        config.grid.horizon = Some(j);
    }
    if args.meta_checkpoint.is_some() {
        config.meta_checkpoint = args.meta_checkpoint.clone();
    }
}

/// Shared by `train` and `evaluate`.
fn run_grid(args: &RunArgs, checkpoints: Option<&Path>, save: bool, config: &mut RunConfig) -> Result<Outcome> {
    apply_run_flags(args, config);
    config.validate()?;
    let datasets = load_datasets(&args.data, config)?;
    let meta = match (&config.meta_checkpoint, config.models.contains(&Family::MpnnTl)) {
        (Some(path), true) => Some(Checkpoint::load(path)?.0.model),
        (None, true) => return Err(Error::Config("mpnn_tl needs --meta-checkpoint".into())),
        _ => None,
    };
    let eval_cfg = config.eval_config();
    let ckpt_dir = args.common.out.join("checkpoints");
    let mut report = ErrorReport::default();
    for target in selected(&datasets, config) {
        let foreign: Vec<&dyn DataSource> =
            datasets.iter().filter(|d| d.country != target.country).map(|d| d as &dyn DataSource).collect();
        for &family in &config.models {
            info!("{} {}", target.country, family.label());
            let part = match checkpoints {
                Some(dir) if family.is_neural() => {
                    evaluate_checkpoints(target, &target.regions, family, &eval_cfg, &dir.join("checkpoints"))?
                }
                _ => {
                    let ctx = EvalContext {
                        meta_model: meta.as_ref(),
                        foreign: &foreign,
                        save_checkpoints: (save && family.is_neural()).then_some(ckpt_dir.as_path()),
                    };
                    crate::eval::rolling_evaluate(target, &target.regions, family, &eval_cfg, ctx)?
                }
            };
            report.merge(part);
        }
    }
    write_report(&report, &args.common.out, &ReportExtras::default())?;
    let complete = match (config.grid.horizon, report.skipped.first()) {
        (Some(_), Some(s)) => Err(Error::InsufficientData(format!(
            "requested cell T={}, j={} of {} could not run: {}",
            s.t, s.horizon, s.country, s.reason
        ))),
        _ => Ok(()),
    };
    let mut outputs = vec!["rows.csv".to_string(), "summary.json".into(), "relative_error.json".into()];
    if save && config.models.iter().any(|f| f.is_neural()) {
        outputs.push("checkpoints".into());
    }
    Ok(Outcome { outputs, complete })
}

fn cmd_meta_train(args: &MetaTrainArgs, config: &mut RunConfig) -> Result<Outcome> {
    config.validate()?;
    let kind: ModelKind = match args.model.as_str() {
        "mpnn" => ModelKind::Mpnn,
        "mpnn_lstm" => ModelKind::MpnnLstm,
        other => return Err(Error::Config(format!("meta-training supports mpnn and mpnn_lstm, not {other}"))),
    };
    let datasets = load_datasets(&args.data, config)?;
    let sources: Vec<&dyn DataSource> = selected(&datasets, config).into_iter().map(|d| d as &dyn DataSource).collect();
    let outcome = maml_meta_train(&sources, &config.train.model_spec(kind), &config.meta)?;
    let ckpt = Checkpoint { model: outcome.model, best_val_mae: f64::NAN, best_epoch: 0, epochs_run: 0 };
    let countries: Vec<&str> = sources.iter().map(|s| s.country()).collect();
    let path = args.common.out.join(META_CHECKPOINT_FILE);
    ckpt.save(&path, serde_json::json!({ "countries": countries, "tasks_run": outcome.tasks_run }))?;
    info!("meta-trained on {} tasks", outcome.tasks_run);
    Ok(Outcome::done(vec![META_CHECKPOINT_FILE.into()]))
}

fn load_report_dir(dir: &Path) -> Result<ErrorReport> {
    let rows = load_rows(&dir.join("rows.csv"))?;
    let path = dir.join("skipped.csv");
    let skipped = if path.exists() {
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        r.deserialize::<SkippedCell>().map(|s| s.map_err(|e| Error::csv(&path, e))).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let path = dir.join("cells.json");
    let cells: Vec<CellSummary> = if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?
    } else {
        Vec::new()
    };
    Ok(ErrorReport { rows, skipped, cells })
}

fn cmd_report(args: &ReportArgs) -> Result<Outcome> {
    let mut report = ErrorReport::default();
    for dir in &args.inputs {
        report.merge(load_report_dir(dir)?);
    }
    write_report(&report, &args.out, &ReportExtras::default())?;
    Ok(Outcome::done(vec!["rows.csv".into(), "summary.json".into()]))
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest(_) => "ingest",
        Command::Synth(_) => "synth",
        Command::Correlate(_) => "correlate",
        Command::Train(_) => "train",
        Command::MetaTrain(_) => "meta-train",
        Command::Evaluate(_) => "evaluate",
        Command::Report(_) => "report",
    }
}

/// Runs a parsed command. `args` are recorded in the manifest.
pub fn execute(cli: &Cli, args: Vec<String>) -> Result<()> {
    let (common_out, common) = match &cli.command {
        Command::Ingest(a) => (&a.common.out, Some(&a.common)),
        Command::Synth(a) => (&a.common.out, Some(&a.common)),
        Command::Correlate(a) => (&a.common.out, Some(&a.common)),
        Command::Train(a) => (&a.common.out, Some(&a.common)),
        Command::MetaTrain(a) => (&a.common.out, Some(&a.common)),
        Command::Evaluate(a) => (&a.run.common.out, Some(&a.run.common)),
        Command::Report(a) => (&a.out, None),
    };
    let config = match common {
        Some(c) => resolve_config(c)?,
        None => RunConfig::default(),
    };
    let mut run = Run { command: command_name(&cli.command), args, out: common_out.clone(), config };
    run.write_manifest("incomplete", None, Vec::new())?;

    let mut config = run.config.clone();
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &mut config),
        Command::Synth(a) => cmd_synth(a, &mut config),
        Command::Correlate(a) => cmd_correlate(a, &mut config),
        Command::Train(a) => run_grid(a, None, true, &mut config),
        Command::MetaTrain(a) => cmd_meta_train(a, &mut config),
        Command::Evaluate(a) => run_grid(&a.run, a.checkpoints.as_deref(), false, &mut config),
        Command::Report(a) => cmd_report(a),
    };
    run.config = config;
    match result {
        Ok(Outcome { outputs, complete: Ok(()) }) => run.write_manifest("complete", None, outputs),
        Ok(Outcome { outputs, complete: Err(e) }) => {
            run.write_manifest("incomplete", Some(e.to_string()), outputs)?;
            Err(e)
        }
        Err(e) => {
            // best effort: the original error matters more than a failed rewrite
            let _ = run.write_manifest("incomplete", Some(e.to_string()), Vec::new());
            Err(e)
        }
    }
}

/// Parses `argv` (program name first) and runs it. Returns the exit status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let recorded = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> i32 {
        main_with_args(std::iter::once("mobcast").chain(args.iter().copied()))
    }

    #[test]
    fn config_rejects_unknown_keys_and_defaults_match_library() {
        let err = toml::from_str::<RunConfig>("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(toml::from_str::<RunConfig>("[train]\nlearning_rate = 0.1\n").is_err());
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.max_epochs, 500);
        assert_eq!(cfg.grid.dt, 14);
        assert_eq!(cfg.grid.t_start, 14);
        let cfg: RunConfig =
            toml::from_str("seed = 3\nmodels = [\"mpnn_tl\", \"avg_window\"]\n[grid]\nt_stride = 7\n").unwrap();
        assert_eq!(cfg.models, vec![Family::MpnnTl, Family::AvgWindow]);
        assert_ne!(cfg.content_hash(), RunConfig::default().content_hash());
    }

    #[test]
    fn invalid_flags_exit_nonzero() {
        assert_eq!(run(&["train", "--bogus"]), 2);
        assert_eq!(run(&["frobnicate"]), 2);
    }

    #[test]
    fn synth_train_evaluate_flow() {
        let tmp = tempfile::tempdir().unwrap();
        let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
        assert_eq!(
            run(&["synth", "--regions", "4", "--days", "24", "--countries", "2", "--seed", "1", "--out", &p("data")]),
            0
        );
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join("data/manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["status"], "complete");
        assert_eq!(manifest["seed"], 1);

        let cfg = tmp.path().join("run.toml");
        fs::write(&cfg, "[train]\nhidden = 4\nmax_epochs = 2\n[grid]\nt_end = 15\ndt = 3\n").unwrap();
        let cfg = cfg.to_string_lossy().into_owned();
        let train = [
            "train",
            "--config",
            &cfg,
            "--data",
            &p("data"),
            "--country",
            "SYN0",
            "--model",
            "mpnn",
            "--model",
            "last_day",
            "--out",
            &p("train"),
        ];
        assert_eq!(run(&train), 0);
        let ckpt = tmp.path().join("train/checkpoints/SYN0/mpnn/T15_j2.ckpt");
        assert!(ckpt.exists());

        let eval = [
            "evaluate",
            "--config",
            &cfg,
            "--data",
            &p("data"),
            "--country",
            "SYN0",
            "--model",
            "mpnn",
            "--checkpoints",
            &p("train"),
            "--out",
            &p("eval"),
        ];
        assert_eq!(run(&eval), 0);
        let trained = load_rows(&tmp.path().join("train/rows.csv")).unwrap();
        let scored = load_rows(&tmp.path().join("eval/rows.csv")).unwrap();
        assert_eq!(trained.into_iter().filter(|r| r.model == "MPNN").collect::<Vec<_>>(), scored);

        fs::remove_file(&ckpt).unwrap();
        assert_eq!(run(&eval), 1);
        let manifest = fs::read_to_string(tmp.path().join("eval/manifest.json")).unwrap();
        assert!(manifest.contains("\"incomplete\"") && manifest.contains("T=15, j=2"));
    }

    #[test]
    fn explicitly_requested_cell_without_validation_fails() {
        let tmp = tempfile::tempdir().unwrap();
        let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
        assert_eq!(run(&["synth", "--regions", "3", "--days", "24", "--countries", "1", "--out", &p("data")]), 0);
        assert_eq!(
            run(&[
                "train",
                "--data",
                &p("data"),
                "--model",
                "last_day",
                "--t",
                "14",
                "--horizon",
                "3",
                "--out",
                &p("a")
            ]),
            0
        );
        assert_eq!(
            run(&["train", "--data", &p("data"), "--model", "mpnn", "--t", "14", "--horizon", "9", "--out", &p("b")]),
            1
        );
    }
}
