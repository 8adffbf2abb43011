//! Forecasting networks over one parameter registry each:
//!
//! * `Mpnn`: K aggregation layers `H^{i+1} = ReLU(A·H^i·W^{i+1})`, each
//!   followed by batchnorm and dropout, then an MLP head over
//!   `[H^0 | H^1 | … | H^K]` with a final ReLU.
//! * `MpnnLstm`: the same trunk (shared across days) produces one
//!   representation per day; a two-layer LSTM runs over the days of every
//!   node and the head sees `[h_last | X_last]`.
//! * `Lstm`: a two-layer LSTM over each region's feature window read as a
//!   sequence of scalars, with a linear head.
//!
//! Parameter names: `agg{i}.weight`, `agg{i}.bn.gamma`, `agg{i}.bn.beta`,
//! `lstm{l}.{input,forget,cell,output}.{w_x,w_h,bias}`, `head.fc1.*`,
//! `head.fc2.*` (`head.weight`/`head.bias` for the baseline LSTM).

mod checkpoint;
mod lstm;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use lstm::{lstm_cell, Gate, LstmGates};

use crate::error::{Error, Result};
use crate::graphs::{GraphSample, GraphStep, Variant};
use crate::numcore::{
    batchnorm_apply, dropout_apply, glorot_init, Matrix, Mode, ParamSet, Rng, RunningStats, Tape, Var,
};

/// Stacked LSTM layers in the recurrent models.
pub const LSTM_LAYERS: usize = 2;
const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mpnn,
    MpnnLstm,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Feature window length d.
    pub window: usize,
    pub hidden: usize,
    /// Aggregation layers K (unused by the baseline LSTM).
    pub layers: usize,
    pub dropout: f64,
    pub batch_norm: bool,
    /// Days per sample for `MpnnLstm`; 1 otherwise.
    pub seq_len: usize,
    /// `MpnnLstm` only: feed every day's raw window to the head, not just the last.
    pub all_step_features: bool,
}

impl ModelSpec {
    pub fn mpnn() -> Self {
        Self {
            kind: ModelKind::Mpnn,
            window: 7,
            hidden: 64,
            layers: 2,
            dropout: 0.5,
            batch_norm: true,
            seq_len: 1,
            all_step_features: false,
        }
    }

    pub fn mpnn_lstm() -> Self {
        Self { kind: ModelKind::MpnnLstm, seq_len: 7, ..Self::mpnn() }
    }

    pub fn lstm() -> Self {
        Self { kind: ModelKind::Lstm, dropout: 0.0, batch_norm: false, ..Self::mpnn() }
    }

    pub fn variant(&self) -> Variant {
        match self.kind {
            ModelKind::MpnnLstm => Variant::Sequence { steps: self.seq_len },
            _ => Variant::Static,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hidden == 0 {
            return Err(Error::Config("window and hidden width must be >= 1".into()));
        }
        if self.kind != ModelKind::Lstm && self.layers == 0 {
            return Err(Error::Config("graph models need at least one aggregation layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.seq_len == 0 {
            return Err(Error::Contract("sequence length must be >= 1".into()));
        }
        if self.kind != ModelKind::MpnnLstm && self.seq_len != 1 {
            return Err(Error::Config(format!(
                "{:?} takes one day per sample, seq_len is {}",
                self.kind, self.seq_len
            )));
        }
        Ok(())
    }

    fn head_input(&self) -> usize {
        match self.kind {
            ModelKind::Mpnn => self.window + self.layers * self.hidden,
            ModelKind::MpnnLstm => {
                let raw = if self.all_step_features { self.seq_len * self.window } else { self.window };
                self.hidden + raw
            }
            ModelKind::Lstm => self.hidden,
        }
    }
}

/// Parameters plus batchnorm running statistics (one per aggregation layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamSet,
    stats: Vec<RunningStats>,
}

impl Model {
    /// Glorot-uniform weights, zero biases, unit batchnorm scales.
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let h = spec.hidden;
        let mut params = ParamSet::new();
        let mut stats = Vec::new();
        if spec.kind != ModelKind::Lstm {
            for i in 1..=spec.layers {
                let fan_in = if i == 1 { spec.window } else { h };
                params.register(format!("agg{i}.weight"), glorot_init(fan_in, h, rng));
                if spec.batch_norm {
                    params.register(format!("agg{i}.bn.gamma"), Matrix::filled(1, h, 1.0));
                    params.register(format!("agg{i}.bn.beta"), Matrix::zeros(1, h));
                    stats.push(RunningStats::new(h));
                }
            }
        }
        if spec.kind != ModelKind::Mpnn {
            let first_in = if spec.kind == ModelKind::Lstm { 1 } else { spec.layers * h };
            for l in 1..=LSTM_LAYERS {
                let fan_in = if l == 1 { first_in } else { h };
                for g in GATES {
                    params.register(format!("lstm{l}.{g}.w_x"), glorot_init(fan_in, h, rng));
                    params.register(format!("lstm{l}.{g}.w_h"), glorot_init(h, h, rng));
                    params.register(format!("lstm{l}.{g}.bias"), Matrix::zeros(1, h));
                }
            }
        }
        if spec.kind == ModelKind::Lstm {
            params.register("head.weight", glorot_init(h, 1, rng));
            params.register("head.bias", Matrix::zeros(1, 1));
        } else {
            params.register("head.fc1.weight", glorot_init(spec.head_input(), h, rng));
            params.register("head.fc1.bias", Matrix::zeros(1, h));
            params.register("head.fc2.weight", glorot_init(h, 1, rng));
            params.register("head.fc2.bias", Matrix::zeros(1, 1));
        }
        Ok(Self { spec, params, stats })
    }

    /// Same layout as [`Model::new`] with every parameter set to zero.
    pub fn zeroed(spec: ModelSpec) -> Result<Self> {
        let mut m = Self::new(spec, &mut Rng::new(0))?;
        for v in m.params.values_mut() {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    /// Records the forward pass of a batch and returns the stacked
    /// predictions, one row per node of every sample in batch order.
    pub fn forward(&mut self, tape: &mut Tape, batch: &[&GraphSample], mode: Mode, rng: &mut Rng) -> Result<Var> {
        record(&self.spec, &self.params, &mut self.stats, tape, batch, mode, rng)
    }

    /// Eval-mode predictions for each sample of the batch.
    pub fn predict_batch(&self, batch: &[&GraphSample]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let mut stats = self.stats.clone();
        let out = record(&self.spec, &self.params, &mut stats, &mut tape, batch, Mode::Eval, &mut Rng::new(0))?;
        let values = tape.value(out).data();
        let mut offset = 0;
        Ok(batch
            .iter()
            .map(|s| {
                let n = s.n_nodes();
                let v = values[offset..offset + n].to_vec();
                offset += n;
                v
            })
            .collect())
    }

    pub fn predict(&self, sample: &GraphSample) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[sample])?.remove(0))
    }
}

/// The forward pass with parameters and statistics passed separately, so
/// gradient checks can perturb a copy of the registry.
pub fn record(
    spec: &ModelSpec,
    params: &ParamSet,
    stats: &mut [RunningStats],
    tape: &mut Tape,
    batch: &[&GraphSample],
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    check_batch(spec, batch)?;
    let leaves = Leaves { params, vars: (0..params.len()).map(|i| params.leaf(tape, i)).collect() };
    match spec.kind {
        ModelKind::Mpnn => {
            let (blocks, x) = day_inputs(tape, batch, 0)?;
            let mut parts = vec![x];
            parts.extend(trunk(spec, &leaves, stats, tape, blocks, x, mode, rng)?);
            let input = tape.concat_all(&parts)?;
            mlp_head(tape, &leaves, input)
        }
        ModelKind::MpnnLstm => {
            let mut reps = Vec::with_capacity(spec.seq_len);
            let mut raw = Vec::with_capacity(spec.seq_len);
            for s in 0..spec.seq_len {
                let (blocks, x) = day_inputs(tape, batch, s)?;
                let hs = trunk(spec, &leaves, stats, tape, blocks, x, mode, rng)?;
                reps.push(tape.concat_all(&hs)?);
                raw.push(x);
            }
            let layers = lstm_layers(&leaves)?;
            let h = lstm::run_stack(tape, &reps, &layers, spec.hidden)?;
            let mut parts = vec![h];
            if spec.all_step_features {
                parts.extend(raw);
            } else {
                parts.push(*raw.last().expect("seq_len >= 1"));
            }
            let input = tape.concat_all(&parts)?;
            mlp_head(tape, &leaves, input)
        }
        ModelKind::Lstm => {
            let x = stacked_features(batch, 0)?;
            let inputs: Vec<Var> = (0..spec.window).map(|c| tape.constant(x.cols_slice(c, 1))).collect();
            let layers = lstm_layers(&leaves)?;
            let h = lstm::run_stack(tape, &inputs, &layers, spec.hidden)?;
            let z = tape.matmul(h, leaves.get("head.weight")?)?;
            let z = tape.add_row(z, leaves.get("head.bias")?)?;
            Ok(tape.relu(z))
        }
    }
}

struct Leaves<'a> {
    params: &'a ParamSet,
    vars: Vec<Var>,
}

impl Leaves<'_> {
    fn get(&self, name: &str) -> Result<Var> {
        self.params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("parameter {name} missing from the registry")))
    }
}

fn check_batch(spec: &ModelSpec, batch: &[&GraphSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let steps = spec.variant().steps();
    for s in batch {
        if s.steps.len() != steps {
            return Err(Error::Contract(format!(
                "{:?} expects {steps} day(s) per sample, got {}",
                spec.kind,
                s.steps.len()
            )));
        }
        for GraphStep { adjacency, features, .. } in &s.steps {
            if features.cols() != spec.window {
                return Err(Error::Contract(format!(
                    "feature window has {} days, model expects {}",
                    features.cols(),
                    spec.window
                )));
            }
            if adjacency.shape() != (features.rows(), features.rows()) {
                return Err(Error::Dimension(format!(
                    "adjacency {:?} does not match {} nodes",
                    adjacency.shape(),
                    features.rows()
                )));
            }
        }
    }
    Ok(())
}

fn stacked_features(batch: &[&GraphSample], step: usize) -> Result<Matrix> {
    let parts: Vec<&Matrix> = batch.iter().map(|s| &s.steps[step].features).collect();
    Matrix::vstack(&parts)
}

fn day_inputs(tape: &mut Tape, batch: &[&GraphSample], step: usize) -> Result<(Arc<Vec<Arc<Matrix>>>, Var)> {
    let blocks = Arc::new(batch.iter().map(|s| s.steps[step].adjacency.clone()).collect());
    let x = tape.constant(stacked_features(batch, step)?);
    Ok((blocks, x))
}

/// Aggregation layers; returns `[H^1, …, H^K]`.
#[allow(clippy::too_many_arguments)]
fn trunk(
    spec: &ModelSpec,
    leaves: &Leaves,
    stats: &mut [RunningStats],
    tape: &mut Tape,
    blocks: Arc<Vec<Arc<Matrix>>>,
    x: Var,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Vec<Var>> {
    let mut h = x;
    let mut out = Vec::with_capacity(spec.layers);
    for i in 1..=spec.layers {
        let w = leaves.get(&format!("agg{i}.weight"))?;
        // Multiply by the (n x n) graph on the narrower side.
        let z = if tape.value(h).cols() <= tape.value(w).cols() {
            let m = tape.block_matmul(blocks.clone(), h)?;
            tape.matmul(m, w)?
        } else {
            let m = tape.matmul(h, w)?;
            tape.block_matmul(blocks.clone(), m)?
        };
        h = tape.relu(z);
        if spec.batch_norm {
            let gamma = leaves.get(&format!("agg{i}.bn.gamma"))?;
            let beta = leaves.get(&format!("agg{i}.bn.beta"))?;
            let st =
                stats.get_mut(i - 1).ok_or_else(|| Error::Contract(format!("no running statistics for layer {i}")))?;
            h = batchnorm_apply(tape, h, gamma, beta, st, mode)?;
        }
        h = dropout_apply(tape, h, spec.dropout, rng, mode)?;
        out.push(h);
    }
    Ok(out)
}

fn lstm_layers(leaves: &Leaves) -> Result<Vec<LstmGates>> {
    (1..=LSTM_LAYERS)
        .map(|l| {
            let gate = |g: &str| -> Result<Gate> {
                Ok(Gate {
                    wx: leaves.get(&format!("lstm{l}.{g}.w_x"))?,
                    wh: leaves.get(&format!("lstm{l}.{g}.w_h"))?,
                    b: leaves.get(&format!("lstm{l}.{g}.bias"))?,
                })
            };
            Ok(LstmGates {
                input: gate("input")?,
                forget: gate("forget")?,
                cell: gate("cell")?,
                output: gate("output")?,
            })
        })
        .collect()
}

fn mlp_head(tape: &mut Tape, leaves: &Leaves, input: Var) -> Result<Var> {
    let z = tape.matmul(input, leaves.get("head.fc1.weight")?)?;
    let z = tape.add_row(z, leaves.get("head.fc1.bias")?)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, leaves.get("head.fc2.weight")?)?;
    let z = tape.add_row(z, leaves.get("head.fc2.bias")?)?;
    Ok(tape.relu(z))
}

fn single(steps: Vec<GraphStep>) -> GraphSample {
    let day = steps.last().map_or(0, |s| s.day);
    GraphSample { anchor: day, horizon: 1, steps, target: None }
}

fn run_single(model: &mut Model, sample: &GraphSample, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &[sample], mode, rng)?;
    Ok(tape.value(out).data().to_vec())
}

/// MPNN forecast for one graph: one nonnegative value per node.
pub fn mpnn_forward(model: &mut Model, a_norm: Arc<Matrix>, x: Matrix, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
    run_single(model, &single(vec![GraphStep { day: 0, adjacency: a_norm, features: x }]), mode, rng)
}

/// MPNN+LSTM forecast for one sequence of `(A_norm, X)` days, oldest first.
pub fn mpnn_lstm_forward(
    model: &mut Model,
    days: &[(Arc<Matrix>, Matrix)],
    mode: Mode,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if days.is_empty() {
        return Err(Error::Contract("sequence must contain at least one day".into()));
    }
    let steps = days
        .iter()
        .enumerate()
        .map(|(d, (a, x))| GraphStep { day: d, adjacency: a.clone(), features: x.clone() })
        .collect();
    run_single(model, &single(steps), mode, rng)
}

/// Baseline LSTM forecast from each region's window (`n x d`, oldest first).
pub fn baseline_lstm_forward(model: &mut Model, window: &Matrix) -> Result<Vec<f64>> {
    let n = window.rows();
    let step = GraphStep { day: 0, adjacency: Arc::new(Matrix::identity(n)), features: window.clone() };
    run_single(model, &single(vec![step]), Mode::Eval, &mut Rng::new(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::normalize_incoming;
    use crate::numcore::gradcheck::check_gradients;
    use crate::numcore::sigmoid;

    fn random_matrix(r: usize, c: usize, lo: f64, hi: f64, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
    }

    fn random_graph(n: usize, rng: &mut Rng) -> Arc<Matrix> {
        Arc::new(normalize_incoming(&random_matrix(n, n, 0.0, 3.0, rng)).unwrap())
    }

    fn small(kind: ModelKind) -> ModelSpec {
        let base = match kind {
            ModelKind::Mpnn => ModelSpec::mpnn(),
            ModelKind::MpnnLstm => ModelSpec::mpnn_lstm(),
            ModelKind::Lstm => ModelSpec::lstm(),
        };
        ModelSpec { window: 3, hidden: 4, seq_len: if kind == ModelKind::MpnnLstm { 2 } else { 1 }, ..base }
    }

    fn sample(spec: &ModelSpec, n: usize, rng: &mut Rng) -> GraphSample {
        let steps = (0..spec.seq_len)
            .map(|d| GraphStep {
                day: d + 1,
                adjacency: random_graph(n, rng),
                features: random_matrix(n, spec.window, 0.0, 2.0, rng),
            })
            .collect();
        GraphSample { anchor: spec.seq_len, horizon: 1, steps, target: Some(vec![1.0; n]) }
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let mut rng = Rng::new(3);
        for kind in [ModelKind::Mpnn, ModelKind::MpnnLstm, ModelKind::Lstm] {
            let spec = small(kind);
            let m = Model::zeroed(spec.clone()).unwrap();
            let s = sample(&spec, 5, &mut rng);
            assert_eq!(m.predict(&s).unwrap(), vec![0.0; 5], "{kind:?}");
        }
    }

    #[test]
    fn skip_concatenation_width() {
        let spec = ModelSpec { layers: 1, batch_norm: false, dropout: 0.0, ..ModelSpec::mpnn() };
        let m = Model::new(spec, &mut Rng::new(1)).unwrap();
        assert_eq!(m.params().by_name("head.fc1.weight").unwrap().shape(), (7 + 64, 64));
        // With A = I and W = I (d = hidden), the head sees [X | ReLU(X)].
        let spec = ModelSpec { window: 3, hidden: 3, layers: 1, batch_norm: false, dropout: 0.0, ..ModelSpec::mpnn() };
        let mut m = Model::zeroed(spec.clone()).unwrap();
        *m.params_mut().by_name_mut("agg1.weight").unwrap() = Matrix::identity(3);
        let mut fc1 = Matrix::zeros(6, 3);
        fc1.set(3, 0, 1.0);
        *m.params_mut().by_name_mut("head.fc1.weight").unwrap() = fc1;
        *m.params_mut().by_name_mut("head.fc2.weight").unwrap() = Matrix::from_rows(&[vec![1.0], vec![0.0], vec![0.0]]);
        let x = Matrix::from_rows(&[vec![-1.0, 0.0, 0.0], vec![2.5, 1.0, 1.0]]);
        let y = mpnn_forward(&mut m, Arc::new(Matrix::identity(2)), x, Mode::Eval, &mut Rng::new(0)).unwrap();
        assert_eq!(y, vec![0.0, 2.5]);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = Rng::new(11);
        let spec = ModelSpec { hidden: 8, ..small(ModelKind::Mpnn) };
        let mut m = Model::new(spec, &mut rng).unwrap();
        for st in m.stats_mut() {
            st.mean.iter_mut().for_each(|v| *v = rng.uniform());
            st.var.iter_mut().for_each(|v| *v = rng.uniform_range(0.5, 2.0));
        }
        let n = 6;
        let a = random_graph(n, &mut rng);
        let x = random_matrix(n, 3, 0.0, 5.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let mut pa = Matrix::zeros(n, n);
        let mut px = Matrix::zeros(n, 3);
        for (i, &pi) in perm.iter().enumerate() {
            for (j, &pj) in perm.iter().enumerate() {
                pa.set(i, j, a.get(pi, pj));
            }
            px.row_mut(i).copy_from_slice(x.row(pi));
        }
        let y = mpnn_forward(&mut m, a, x, Mode::Eval, &mut Rng::new(0)).unwrap();
        let py = mpnn_forward(&mut m, Arc::new(pa), px, Mode::Eval, &mut Rng::new(0)).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            assert!((py[i] - y[pi]).abs() < 1e-6);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        for kind in [ModelKind::Mpnn, ModelKind::MpnnLstm, ModelKind::Lstm] {
            let spec = ModelSpec { dropout: if kind == ModelKind::Lstm { 0.0 } else { 0.2 }, ..small(kind) };
            let mut m = Model::new(spec.clone(), &mut rng).unwrap();
            // Positive biases keep the ReLUs away from their kink at exactly 0.
            for i in 0..m.params().len() {
                if m.params().names()[i].ends_with("bias") {
                    let v = &mut m.params_mut().values_mut()[i];
                    v.data_mut().iter_mut().for_each(|x| *x = rng.uniform_range(0.05, 0.3));
                }
            }
            let batch = [sample(&spec, 4, &mut rng), sample(&spec, 3, &mut rng)];
            let refs: Vec<&GraphSample> = batch.iter().collect();
            let target = Matrix::from_vec(7, 1, (0..7).map(|_| rng.uniform_range(0.0, 2.0)).collect()).unwrap();
            let report = check_gradients(m.params(), 1e-6, 1e-6, |p, tape| {
                let mut stats = m.stats().to_vec();
                let y = record(&spec, p, &mut stats, tape, &refs, Mode::Train, &mut Rng::new(9))?;
                let t = tape.constant(target.clone());
                let d = tape.sub(y, t)?;
                let sq = tape.square(d);
                tape.mean(sq)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{kind:?}: {report:?}");
            assert!(report.nonzero > 0);
        }
    }

    #[test]
    fn mpnn_lstm_repeated_day_matches_scalar_trace() {
        // One node, hidden width 1: every quantity is a scalar.
        let spec = ModelSpec {
            window: 1,
            hidden: 1,
            layers: 1,
            dropout: 0.0,
            batch_norm: false,
            seq_len: 3,
            ..ModelSpec::mpnn_lstm()
        };
        let mut m = Model::zeroed(spec).unwrap();
        let set = |m: &mut Model, name: &str, v: f64| *m.params_mut().by_name_mut(name).unwrap() = Matrix::scalar(v);
        set(&mut m, "agg1.weight", 0.8);
        for l in 1..=2 {
            for (g, wx, wh, b) in [
                ("input", 0.5, 0.3, 2.0),
                ("forget", 0.2, -0.4, 3.0),
                ("cell", 1.1, 0.7, 0.1),
                ("output", 0.4, 0.2, 2.5),
            ] {
                set(&mut m, &format!("lstm{l}.{g}.w_x"), wx);
                set(&mut m, &format!("lstm{l}.{g}.w_h"), wh);
                set(&mut m, &format!("lstm{l}.{g}.bias"), b);
            }
        }
        *m.params_mut().by_name_mut("head.fc1.weight").unwrap() = Matrix::from_rows(&[vec![1.5], vec![0.25]]);
        set(&mut m, "head.fc2.weight", 2.0);
        set(&mut m, "head.fc2.bias", 0.1);

        let x = 1.7;
        let day = (Arc::new(Matrix::identity(1)), Matrix::scalar(x));
        let y = mpnn_lstm_forward(&mut m, &[day.clone(), day.clone(), day], Mode::Eval, &mut Rng::new(0)).unwrap();

        let cell = |x: f64, h: f64, c: f64| {
            let i = sigmoid(0.5 * x + 0.3 * h + 2.0);
            let f = sigmoid(0.2 * x - 0.4 * h + 3.0);
            let g = (1.1 * x + 0.7 * h + 0.1).tanh();
            let o = sigmoid(0.4 * x + 0.2 * h + 2.5);
            let c = f * c + i * g;
            (o * c.tanh(), c)
        };
        let r = (0.8 * x).max(0.0);
        let (mut h1, mut c1, mut h2, mut c2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..3 {
            (h1, c1) = cell(r, h1, c1);
            (h2, c2) = cell(h1, h2, c2);
        }
        let z = (1.5 * h2 + 0.25 * x).max(0.0);
        let expected = (2.0 * z + 0.1).max(0.0);
        assert!((y[0] - expected).abs() < 1e-12, "{} vs {expected}", y[0]);
    }

    #[test]
    fn baseline_lstm_without_recurrence_matches_closed_form() {
        let spec = ModelSpec { window: 7, hidden: 1, ..ModelSpec::lstm() };
        let mut m = Model::zeroed(spec).unwrap();
        let set = |m: &mut Model, name: &str, v: f64| *m.params_mut().by_name_mut(name).unwrap() = Matrix::scalar(v);
        // Layer 1 gates see only the constant input; layer 2 passes h through
        // an input gate fixed open and a forget gate fixed shut.
        for (g, wx, b) in [("input", 0.3, 0.0), ("forget", -0.2, 0.5), ("cell", 0.6, 0.0), ("output", 0.1, 0.2)] {
            set(&mut m, &format!("lstm1.{g}.w_x"), wx);
            set(&mut m, &format!("lstm1.{g}.bias"), b);
        }
        set(&mut m, "lstm2.input.bias", 50.0);
        set(&mut m, "lstm2.forget.bias", -50.0);
        set(&mut m, "lstm2.output.bias", 50.0);
        set(&mut m, "lstm2.cell.w_x", 1.0);
        set(&mut m, "head.weight", 3.0);
        set(&mut m, "head.bias", 0.05);

        let x = 2.0;
        let y = baseline_lstm_forward(&mut m, &Matrix::filled(1, 7, x)).unwrap()[0];
        let (i, f, g, o) = (sigmoid(0.3 * x), sigmoid(-0.2 * x + 0.5), (0.6 * x).tanh(), sigmoid(0.1 * x + 0.2));
        let c7 = i * g * (1.0 - f.powi(7)) / (1.0 - f);
        let h1 = o * c7.tanh();
        let h2 = h1.tanh().tanh();
        let expected = (3.0 * h2 + 0.05).max(0.0);
        assert!((y - expected).abs() < 1e-12, "{y} vs {expected}");
    }

    #[test]
    fn outputs_are_nonnegative() {
        let mut rng = Rng::new(21);
        for trial in 0..1000 {
            let kind = [ModelKind::Mpnn, ModelKind::MpnnLstm, ModelKind::Lstm][trial % 3];
            let spec = ModelSpec {
                hidden: 3,
                window: 2,
                seq_len: if kind == ModelKind::MpnnLstm { 2 } else { 1 },
                ..small(kind)
            };
            let mut m = Model::new(spec.clone(), &mut rng).unwrap();
            for v in m.params_mut().values_mut() {
                v.data_mut().iter_mut().for_each(|x| *x = rng.uniform_range(-2.0, 2.0));
            }
            let s = sample(&spec, 3, &mut rng);
            assert!(m.predict(&s).unwrap().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn wrong_window_is_contract_error() {
        let mut m = Model::new(ModelSpec::lstm(), &mut Rng::new(0)).unwrap();
        assert!(matches!(baseline_lstm_forward(&mut m, &Matrix::zeros(2, 5)), Err(Error::Contract(_))));
        let mut m = Model::new(ModelSpec { seq_len: 2, ..ModelSpec::mpnn_lstm() }, &mut Rng::new(0)).unwrap();
        assert!(matches!(mpnn_lstm_forward(&mut m, &[], Mode::Eval, &mut Rng::new(0)), Err(Error::Contract(_))));
    }
}
