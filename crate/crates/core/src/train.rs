//! Supervised training: target-day splits, MSE loss, Adam with minibatches,
//! validation-MAE early stopping and checkpoints.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::DataSource;
use crate::error::{Error, Result};
use crate::graphs::{GraphSample, SampleBuilder};
use crate::models::{load_checkpoint, save_checkpoint, Model, ModelKind, ModelSpec};
use crate::numcore::{adam_step, AdamState, Matrix, Mode, Rng, Tape};

/// First anchor day of the rolling protocol.
pub const PROTOCOL_START: usize = 14;
/// Offsets from T of the validation target days.
pub const VALIDATION_OFFSETS: [usize; 5] = [1, 3, 5, 7, 9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub patience_start_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub dropout: f64,
    /// Feature window d.
    pub window: usize,
    /// Aggregation layers K.
    pub layers: usize,
    /// Days per sample of MPNN+LSTM.
    pub seq_len: usize,
    pub batch_norm: bool,
    pub all_step_features: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 50,
            patience_start_epoch: 100,
            batch_size: 8,
            lr: 1e-3,
            hidden: 64,
            dropout: 0.5,
            window: 7,
            layers: 2,
            seq_len: 7,
            batch_norm: true,
            all_step_features: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.batch_size == 0 || self.hidden == 0 || self.window == 0 || self.layers == 0 {
            return Err(Error::Config("patience, batch_size, hidden, window and layers must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn model_spec(&self, kind: ModelKind) -> ModelSpec {
        let base = ModelSpec {
            kind,
            window: self.window,
            hidden: self.hidden,
            layers: self.layers,
            dropout: self.dropout,
            batch_norm: self.batch_norm,
            seq_len: 1,
            all_step_features: false,
        };
        match kind {
            ModelKind::Mpnn => base,
            ModelKind::MpnnLstm => {
                ModelSpec { seq_len: self.seq_len, all_step_features: self.all_step_features, ..base }
            }
            ModelKind::Lstm => ModelSpec { dropout: 0.0, batch_norm: false, ..base },
        }
    }
}

/// Seed owned by one (country, T, j) cell, independent of evaluation order.
pub fn cell_seed(seed: u64, country: &str, t_last: usize, horizon: usize) -> u64 {
    Rng::derive_seed(seed, &[Rng::hash_str(country), t_last as u64, horizon as u64])
}

/// Mean of squared differences over all (region, sample) pairs.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Contract(format!("mse_loss over {} predictions and {} targets", pred.len(), target.len())));
    }
    Ok(pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64)
}

fn mae(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64
}

/// Target days of one (T, j) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub t_last: usize,
    pub horizon: usize,
    pub validation_targets: Vec<usize>,
    pub train_targets: Vec<usize>,
    pub test_target: usize,
}

/// Splits the valid targets `first_anchor + j ..= T` into validation days
/// `{T−1, T−3, T−5, T−7, T−9}` and training days (everything else).
pub fn make_splits(t_last: usize, horizon: usize, first_anchor: usize) -> Result<SplitSpec> {
    if t_last < PROTOCOL_START {
        return Err(Error::Contract(format!("T={t_last} precedes the protocol start {PROTOCOL_START}")));
    }
    if horizon == 0 {
        return Err(Error::Contract("horizon must be >= 1".into()));
    }
    let first_target = first_anchor + horizon;
    let valid = |d: usize| d >= first_target && d <= t_last;
    let validation_targets: Vec<usize> =
        VALIDATION_OFFSETS.iter().rev().filter_map(|o| t_last.checked_sub(*o)).filter(|d| valid(*d)).collect();
    let train_targets: Vec<usize> = (first_target..=t_last).filter(|d| !validation_targets.contains(d)).collect();
    if train_targets.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no training target left for T={t_last}, j={horizon} (first valid target {first_target})"
        )));
    }
    Ok(SplitSpec { t_last, horizon, validation_targets, train_targets, test_target: t_last + horizon })
}

/// Samples of one cell read from `src`, which must cover days `1..=T`.
#[derive(Debug, Clone)]
pub struct CellData {
    pub split: SplitSpec,
    pub train: Vec<GraphSample>,
    pub validation: Vec<GraphSample>,
    /// Input at anchor T; its target lies beyond `src`.
    pub test: GraphSample,
}

pub fn prepare_cell(
    src: &(impl DataSource + ?Sized),
    t_last: usize,
    horizon: usize,
    spec: &ModelSpec,
) -> Result<CellData> {
    let variant = spec.variant();
    let split = make_splits(t_last, horizon, variant.first_anchor(spec.window))?;
    if src.n_days() < t_last {
        return Err(Error::Window(format!("T={t_last} beyond the {} available days", src.n_days())));
    }
    let mut builder = SampleBuilder::new(src, spec.window, variant)?;
    let train = split.train_targets.iter().map(|d| builder.labelled(d - horizon, horizon)).collect::<Result<_>>()?;
    let validation =
        split.validation_targets.iter().map(|d| builder.labelled(d - horizon, horizon)).collect::<Result<_>>()?;
    let test = builder.unlabelled(t_last, horizon)?;
    Ok(CellData { split, train, validation, test })
}

/// Counter rule: an epoch without improvement only counts once the epoch
/// index exceeds `start`; training stops when `patience` such epochs have
/// accumulated since the last improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    start: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, start: usize) -> Self {
        Self { patience, start, best: f64::INFINITY, stale: 0 }
    }

    /// Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        let improved = value < self.best;
        if improved {
            self.best = value;
            self.stale = 0;
        } else if epoch > self.start {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub best_val_mae: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({
            "best_val_mae": self.best_val_mae,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "extra": extra,
        });
        save_checkpoint(path, &self.model, &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (model, meta) = load_checkpoint(path)?;
        let field = |k: &str| {
            meta.get(k).cloned().ok_or_else(|| Error::Format {
                version: crate::models::CHECKPOINT_VERSION.to_string(),
                message: format!("{}: metadata lacks {k}", path.display()),
            })
        };
        let ckpt = Checkpoint {
            model,
            best_val_mae: field("best_val_mae")?.as_f64().unwrap_or(f64::NAN),
            best_epoch: field("best_epoch")?.as_u64().unwrap_or(0) as usize,
            epochs_run: field("epochs_run")?.as_u64().unwrap_or(0) as usize,
        };
        Ok((ckpt, meta.get("extra").cloned().unwrap_or(serde_json::Value::Null)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Mean absolute error of eval-mode predictions over every (sample, region).
pub fn evaluate_mae(model: &Model, samples: &[GraphSample]) -> Result<f64> {
    let refs: Vec<&GraphSample> = samples.iter().collect();
    let preds = model.predict_batch(&refs)?;
    let (mut total, mut count) = (0.0, 0usize);
    for (p, s) in preds.iter().zip(samples) {
        total += mae(p, s.target()?) * p.len() as f64;
        count += p.len();
    }
    Ok(total / count as f64)
}

fn batch_loss(model: &mut Model, tape: &mut Tape, batch: &[&GraphSample], rng: &mut Rng) -> Result<(f64, Vec<Matrix>)> {
    tape.reset();
    let y = model.forward(tape, batch, Mode::Train, rng)?;
    let target: Vec<f64> = batch.iter().map(|s| s.target().map(<[f64]>::to_vec)).collect::<Result<Vec<_>>>()?.concat();
    let t = tape.constant(Matrix::column(&target));
    let d = tape.sub(y, t)?;
    let sq = tape.square(d);
    let loss = tape.mean(sq)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.params(&model.params().shapes());
    Ok((value, grads))
}

/// Loss and parameter gradients of one train-mode batch (updates batchnorm
/// running statistics as a side effect).
pub fn loss_and_gradients(model: &mut Model, batch: &[&GraphSample], rng: &mut Rng) -> Result<(f64, Vec<Matrix>)> {
    batch_loss(model, &mut Tape::new(), batch, rng)
}

fn norms_text(model: &Model) -> String {
    model.params().norms().iter().map(|(n, v)| format!("{n}={v:.3e}")).collect::<Vec<_>>().join(", ")
}

/// Trains from `init` and returns the parameters with the lowest validation
/// MAE seen, the initial parameters (epoch 0) included.
pub fn train_model(
    init: Model,
    train: &[GraphSample],
    validation: &[GraphSample],
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} training and {} validation samples",
            train.len(),
            validation.len()
        )));
    }
    let mut rng = Rng::new(config.seed);
    let mut model = init;
    let mut adam = AdamState::new(&model.params().shapes());
    let mut tape = Tape::new();
    let mut stopper = EarlyStopping::new(config.patience, config.patience_start_epoch);

    let v0 = evaluate_mae(&model, validation)?;
    stopper.observe(0, v0);
    let mut best = Checkpoint { model: model.clone(), best_val_mae: v0, best_epoch: 0, epochs_run: 0 };
    let mut history = vec![EpochRecord { epoch: 0, train_loss: None, val_mae: v0 }];

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut rows) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&GraphSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_loss(&mut model, &mut tape, &batch, &mut rng)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b, norms: norms_text(&model) });
            }
            adam_step(model.params_mut().values_mut(), &grads, &mut adam, config.lr)?;
            let n: usize = batch.iter().map(|s| s.n_nodes()).sum();
            loss_sum += loss * n as f64;
            rows += n;
        }
        let val = evaluate_mae(&model, validation)?;
        if !val.is_finite() || !model.params().is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                norms: norms_text(&model),
            });
        }
        let record = EpochRecord { epoch, train_loss: Some(loss_sum / rows as f64), val_mae: val };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        history.push(record);
        let (improved, stop) = stopper.observe(epoch, val);
        best.epochs_run = epoch;
        if improved {
            best.model = model.clone();
            best.best_val_mae = val;
            best.best_epoch = epoch;
        }
        if stop {
            break;
        }
    }
    Ok(TrainOutcome { checkpoint: best, history })
}

pub fn predict(checkpoint: &Checkpoint, sample: &GraphSample) -> Result<Vec<f64>> {
    checkpoint.model.predict(sample)
}
