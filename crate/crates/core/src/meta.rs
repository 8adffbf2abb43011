//! Transfer across countries.
//!
//! A task `(i, j)` of a country trains on every sample whose target day is
//! at most `i` and tests on the single sample targeting day `i + j`.
//! Meta-training runs, for each task, one pass of plain SGD over the task's
//! training batches from a copy of θ and then moves θ along the test-loss
//! gradient taken at the adapted parameters (first-order MAML):
//!
//! ```text
//! θ_t = θ − α·∇L_Tr(θ)            (per batch)
//! θ   = θ − α_m·∇L_Te(θ_t) / |M_tr|
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{DataSource, Prefix};
use crate::error::{Error, Result};
use crate::graphs::{GraphSample, SampleBuilder};
use crate::models::{Model, ModelSpec};
use crate::numcore::{sgd_step, Matrix, ParamSet, Rng};
use crate::train::{
    cell_seed, loss_and_gradients, prepare_cell, train_model, CellData, Checkpoint, TrainConfig, TrainOutcome,
    PROTOCOL_START,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Inner SGD step α.
    pub alpha: f64,
    /// Meta step α_m.
    pub alpha_meta: f64,
    pub dt: usize,
    pub t_start: usize,
    /// Last train-prefix length i; defaults to each country's last day.
    pub t_max: Option<usize>,
    /// Passes over the meta-train task sets.
    pub repeats: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            alpha_meta: 1e-3,
            dt: 14,
            t_start: PROTOCOL_START,
            t_max: None,
            repeats: 1,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.alpha_meta >= 0.0 && self.alpha_meta.is_finite()) {
            return Err(Error::Config(format!(
                "step sizes must be finite and >= 0 (α={}, α_m={})",
                self.alpha, self.alpha_meta
            )));
        }
        if self.dt == 0 || self.repeats == 0 || self.batch_size == 0 {
            return Err(Error::Config("dt, repeats and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub country: String,
    pub i: usize,
    pub j: usize,
    /// Target days of Tr (may be empty for long horizons at small i).
    pub train_targets: Vec<usize>,
    pub test_target: usize,
}

/// Tasks of one country in `(i, j)` order, skipping those whose test target
/// lies beyond the data.
pub fn enumerate_tasks(
    src: &(impl DataSource + ?Sized),
    first_anchor: usize,
    config: &MetaConfig,
) -> Result<Vec<TaskSplit>> {
    let t_max = config.t_max.unwrap_or(src.n_days()).min(src.n_days());
    let mut tasks = Vec::new();
    for i in config.t_start..=t_max {
        for j in 1..=config.dt {
            if i + j > src.n_days() {
                continue;
            }
            tasks.push(TaskSplit {
                country: src.country().to_string(),
                i,
                j,
                train_targets: (first_anchor + j..=i).collect(),
                test_target: i + j,
            });
        }
    }
    if tasks.is_empty() {
        return Err(Error::EmptyTaskSet(format!(
            "{}: no task with 14 <= i <= {t_max} and a test day within {} days",
            src.country(),
            src.n_days()
        )));
    }
    Ok(tasks)
}

/// Access to the trainable tensors of a meta-learned state.
pub trait MetaParams: Clone {
    fn values(&self) -> &[Matrix];
    fn values_mut(&mut self) -> &mut [Matrix];
}

impl MetaParams for ParamSet {
    fn values(&self) -> &[Matrix] {
        ParamSet::values(self)
    }
    fn values_mut(&mut self) -> &mut [Matrix] {
        ParamSet::values_mut(self)
    }
}

impl MetaParams for Model {
    fn values(&self) -> &[Matrix] {
        self.params().values()
    }
    fn values_mut(&mut self) -> &mut [Matrix] {
        self.params_mut().values_mut()
    }
}

/// One first-order meta step for one task. `grad` returns the loss gradient
/// of a batch at the given state. State other than the trainable tensors
/// (batchnorm statistics) is taken from the adapted copy.
pub fn first_order_step<S: MetaParams, B>(
    theta: &mut S,
    train_batches: &[B],
    test: &B,
    alpha: f64,
    alpha_meta: f64,
    n_countries: usize,
    mut grad: impl FnMut(&mut S, &B) -> Result<Vec<Matrix>>,
) -> Result<()> {
    let mut adapted = theta.clone();
    for b in train_batches {
        let g = grad(&mut adapted, b)?;
        sgd_step(adapted.values_mut(), &g, alpha)?;
    }
    let g = grad(&mut adapted, test)?;
    let mut updated = theta.values().to_vec();
    sgd_step(&mut updated, &g, alpha_meta / n_countries as f64)?;
    *theta = adapted;
    theta.values_mut().clone_from_slice(&updated);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MetaOutcome {
    pub model: Model,
    pub tasks_run: usize,
}

/// Meta-trains a Glorot-initialized model over the countries in order.
pub fn maml_meta_train(countries: &[&dyn DataSource], spec: &ModelSpec, config: &MetaConfig) -> Result<MetaOutcome> {
    config.validate()?;
    if countries.is_empty() {
        return Err(Error::Config("meta-training needs at least one country".into()));
    }
    let mut rng = Rng::new(config.seed);
    let mut model = Model::new(spec.clone(), &mut rng)?;
    let first_anchor = spec.variant().first_anchor(spec.window);

    // Samples per (country, j) over the whole series; Tr and Te index into them.
    let mut plans = Vec::with_capacity(countries.len());
    for src in countries {
        let tasks = enumerate_tasks(*src, first_anchor, config)?;
        let mut builder = SampleBuilder::new(*src, spec.window, spec.variant())?;
        let mut by_horizon: BTreeMap<usize, Vec<GraphSample>> = BTreeMap::new();
        for j in 1..=config.dt {
            by_horizon.insert(j, builder.all_up_to(j, src.n_days())?);
        }
        plans.push((tasks, by_horizon));
    }

    let mut tasks_run = 0;
    for _ in 0..config.repeats {
        for (tasks, by_horizon) in &plans {
            for task in tasks {
                let samples = &by_horizon[&task.j];
                let mut tr: Vec<&GraphSample> = samples.iter().filter(|s| s.target_day() <= task.i).collect();
                rng.shuffle(&mut tr);
                let batches: Vec<Vec<&GraphSample>> = tr.chunks(config.batch_size).map(<[_]>::to_vec).collect();
                let te = vec![samples
                    .iter()
                    .find(|s| s.target_day() == task.test_target)
                    .ok_or_else(|| Error::Contract(format!("no test sample for task {task:?}")))?];
                first_order_step(
                    &mut model,
                    &batches,
                    &te,
                    config.alpha,
                    config.alpha_meta,
                    countries.len(),
                    |m, b| {
                        let (loss, g) = loss_and_gradients(m, b, &mut rng)?;
                        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
                            return Err(Error::NonFiniteLoss {
                                epoch: tasks_run,
                                batch: 0,
                                norms: format!("meta task {} (i={}, j={})", task.country, task.i, task.j),
                            });
                        }
                        Ok(g)
                    },
                )?;
                tasks_run += 1;
            }
        }
    }
    Ok(MetaOutcome { model, tasks_run })
}

#[derive(Debug, Clone)]
pub struct FineTunedCell {
    pub t_last: usize,
    pub horizon: usize,
    pub checkpoint: Checkpoint,
    pub prediction: Vec<f64>,
    pub actual: Vec<f64>,
    /// Mean absolute error over regions on the test day.
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub cells: Vec<FineTunedCell>,
    pub mean_error: f64,
}

/// Trains one model per `(T, j)` cell of the target country starting from
/// the meta-learned parameters. Only `target` is read.
pub fn fine_tune(
    meta: &Model,
    target: &dyn DataSource,
    cells: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<FineTuneOutcome> {
    let mut out = Vec::with_capacity(cells.len());
    for &(t, j) in cells {
        if t + j > target.n_days() {
            return Err(Error::InsufficientData(format!("test day {} beyond {} days", t + j, target.n_days())));
        }
        let prefix = Prefix::new(target, t);
        let cell = prepare_cell(&prefix, t, j, meta.spec())?;
        let cfg = TrainConfig { seed: cell_seed(config.seed, target.country(), t, j), ..config.clone() };
        let outcome = train_model(meta.clone(), &cell.train, &cell.validation, &cfg, None)?;
        let prediction = outcome.checkpoint.model.predict(&cell.test)?;
        let actual = target.cases_on(t + j);
        let error = prediction.iter().zip(&actual).map(|(p, y)| (p - y).abs()).sum::<f64>() / actual.len() as f64;
        out.push(FineTunedCell { t_last: t, horizon: j, checkpoint: outcome.checkpoint, prediction, actual, error });
    }
    if out.is_empty() {
        return Err(Error::EmptyTaskSet("no fine-tuning cell".into()));
    }
    let mean_error = out.iter().map(|c| c.error).sum::<f64>() / out.len() as f64;
    Ok(FineTuneOutcome { cells: out, mean_error })
}

/// Trains one model on the foreign countries' samples for horizon `j`
/// (every target within their data) plus the target's training split, and
/// validates on the target's validation split. `target` must end at day T.
pub fn tl_base_train(
    foreign: &[&dyn DataSource],
    target: &dyn DataSource,
    t_last: usize,
    horizon: usize,
    init: Model,
    config: &TrainConfig,
) -> Result<(TrainOutcome, CellData)> {
    let spec = init.spec().clone();
    let cell = prepare_cell(target, t_last, horizon, &spec)?;
    let mut pooled = Vec::new();
    for src in foreign {
        pooled.extend(SampleBuilder::new(*src, spec.window, spec.variant())?.all_up_to(horizon, src.n_days())?);
    }
    pooled.extend(cell.train.iter().cloned());
    let outcome = train_model(init, &pooled, &cell.validation, config, None)?;
    Ok((outcome, cell))
}
