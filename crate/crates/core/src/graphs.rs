//! Daily mobility graphs, node feature windows and supervised samples.
//!
//! A sample anchored at day `t` with horizon `j` uses the graph(s) and case
//! windows up to day `t` and targets the cases of day `t + j`.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataio::DataSource;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Default feature window length in days.
pub const DEFAULT_WINDOW: usize = 7;
/// Default sequence length of the recurrent variant.
pub const DEFAULT_SEQ_LEN: usize = 7;

/// Divides every row by its sum so each node's incoming weights sum to 1.
/// Rows without incoming movement stay zero.
pub fn normalize_incoming(m: &Matrix) -> Result<Matrix> {
    if m.rows() != m.cols() {
        return Err(Error::Dimension(format!("normalize_incoming: {}x{} is not square", m.rows(), m.cols())));
    }
    if let Some(v) = m.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Contract(format!("normalize_incoming: negative or NaN weight {v}")));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        let s: f64 = out.row(r).iter().sum();
        if s > 0.0 {
            out.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(out)
}

/// Cases of every region over the `d` days ending at `t` (oldest first).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub anchor: usize,
    pub d: usize,
    /// n x d
    pub x: Matrix,
}

pub fn node_features(src: &(impl DataSource + ?Sized), t: usize, d: usize) -> Result<FeatureWindow> {
    if d == 0 || t < d || t > src.n_days() {
        return Err(Error::Window(format!(
            "window of {d} days ending at day {t} does not fit in days 1..={}",
            src.n_days()
        )));
    }
    let n = src.n_regions();
    let mut x = Matrix::zeros(n, d);
    for (c, day) in (t + 1 - d..=t).enumerate() {
        for r in 0..n {
            x.set(r, c, src.case(r, day));
        }
    }
    Ok(FeatureWindow { anchor: t, d, x })
}

/// `A_norm · X`: row `u` mixes the case windows of every region sending
/// people into `u`, weighted by their share of `u`'s incoming movement.
pub fn latent_message(a_norm: &Matrix, x: &Matrix) -> Result<Matrix> {
    if a_norm.rows() != a_norm.cols() {
        return Err(Error::Dimension(format!(
            "latent_message: adjacency {}x{} is not square",
            a_norm.rows(),
            a_norm.cols()
        )));
    }
    a_norm.matmul(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// One (graph, window) pair at the anchor day.
    Static,
    /// The `steps` consecutive days ending at the anchor.
    Sequence { steps: usize },
}

impl Variant {
    pub fn steps(self) -> usize {
        match self {
            Variant::Static => 1,
            Variant::Sequence { steps } => steps,
        }
    }

    /// Earliest anchor whose inputs fit in the data for window length `d`.
    pub fn first_anchor(self, d: usize) -> usize {
        d + self.steps() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStep {
    pub day: usize,
    pub adjacency: Arc<Matrix>,
    pub features: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub anchor: usize,
    pub horizon: usize,
    /// Oldest first; the last step is the anchor day.
    pub steps: Vec<GraphStep>,
    /// Cases at `anchor + horizon`; `None` for a test sample whose target
    /// lies beyond the observed data.
    pub target: Option<Vec<f64>>,
}

impl GraphSample {
    pub fn target_day(&self) -> usize {
        self.anchor + self.horizon
    }

    pub fn n_nodes(&self) -> usize {
        self.steps.last().map_or(0, |s| s.features.rows())
    }

    pub fn last(&self) -> &GraphStep {
        self.steps.last().expect("sample has at least one step")
    }

    pub fn target(&self) -> Result<&[f64]> {
        self.target
            .as_deref()
            .ok_or_else(|| Error::Contract(format!("sample targeting day {} has no target", self.target_day())))
    }
}

/// Builds samples while normalizing each day's graph once.
pub struct SampleBuilder<'a, S: DataSource + ?Sized> {
    src: &'a S,
    d: usize,
    variant: Variant,
    graphs: HashMap<usize, Arc<Matrix>>,
}

impl<'a, S: DataSource + ?Sized> SampleBuilder<'a, S> {
    pub fn new(src: &'a S, d: usize, variant: Variant) -> Result<Self> {
        if d == 0 || variant.steps() == 0 {
            return Err(Error::Contract("window length and sequence length must be >= 1".into()));
        }
        Ok(Self { src, d, variant, graphs: HashMap::new() })
    }

    fn graph(&mut self, day: usize) -> Result<Arc<Matrix>> {
        if let Some(g) = self.graphs.get(&day) {
            return Ok(g.clone());
        }
        let g = Arc::new(normalize_incoming(self.src.mobility_on(day))?);
        self.graphs.insert(day, g.clone());
        Ok(g)
    }

    /// Inputs for anchor `t` (no target).
    pub fn inputs(&mut self, t: usize) -> Result<Vec<GraphStep>> {
        let s = self.variant.steps();
        if t < self.variant.first_anchor(self.d) || t > self.src.n_days() {
            return Err(Error::Window(format!(
                "anchor {t} needs days {}..={t}, data covers 1..={}",
                (t + 1).saturating_sub(self.d + s - 1),
                self.src.n_days()
            )));
        }
        (t + 1 - s..=t)
            .map(|day| {
                Ok(GraphStep { day, adjacency: self.graph(day)?, features: node_features(self.src, day, self.d)?.x })
            })
            .collect()
    }

    /// Sample anchored at `t` whose target (day `t + j`) is read from the source.
    pub fn labelled(&mut self, t: usize, j: usize) -> Result<GraphSample> {
        let steps = self.inputs(t)?;
        let target = self.src.cases_on(t + j);
        Ok(GraphSample { anchor: t, horizon: j, steps, target: Some(target) })
    }

    /// Sample anchored at `t` without a target.
    pub fn unlabelled(&mut self, t: usize, j: usize) -> Result<GraphSample> {
        Ok(GraphSample { anchor: t, horizon: j, steps: self.inputs(t)?, target: None })
    }

    /// Every labelled sample whose target day is at most `last_target`,
    /// ordered by target day.
    pub fn all_up_to(&mut self, j: usize, last_target: usize) -> Result<Vec<GraphSample>> {
        let first = self.variant.first_anchor(self.d);
        let mut out = Vec::new();
        let mut t = first;
        while t + j <= last_target {
            out.push(self.labelled(t, j)?);
            t += 1;
        }
        Ok(out)
    }
}

/// All samples for horizon `j` that fit within days `1..=t_last`: anchors
/// `t >= first_anchor(d)` with `t + j <= t_last`. Empty when nothing fits.
pub fn assemble_samples(
    src: &(impl DataSource + ?Sized),
    d: usize,
    j: usize,
    t_last: usize,
    variant: Variant,
) -> Result<Vec<GraphSample>> {
    if j == 0 {
        return Err(Error::Contract("horizon must be >= 1".into()));
    }
    if t_last > src.n_days() {
        return Err(Error::Window(format!("T={t_last} beyond the {} available days", src.n_days())));
    }
    SampleBuilder::new(src, d, variant)?.all_up_to(j, t_last)
}

/// The single test input at anchor `T` for horizon `j` (target day `T + j`).
pub fn test_sample(
    src: &(impl DataSource + ?Sized),
    d: usize,
    j: usize,
    t_last: usize,
    variant: Variant,
) -> Result<GraphSample> {
    SampleBuilder::new(src, d, variant)?.unlabelled(t_last, j)
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::dataio::CountryDataset;

    fn dataset(rows: &[Vec<f64>]) -> CountryDataset {
        let n = rows.len();
        let t = rows[0].len();
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        CountryDataset::new(
            "t",
            (0..n).map(|i| format!("r{i}")).collect(),
            start.iter_days().take(t).collect(),
            Matrix::from_rows(rows),
            (0..t).map(|_| Matrix::filled(n, n, 2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[vec![2.0, 2.0], vec![0.0, 4.0]]);
        assert_eq!(normalize_incoming(&m).unwrap(), Matrix::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]));
        assert_eq!(normalize_incoming(&Matrix::zeros(3, 3)).unwrap(), Matrix::zeros(3, 3));
        assert_eq!(normalize_incoming(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let neg = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 1.0]]);
        assert!(matches!(normalize_incoming(&neg), Err(Error::Contract(_))));
    }

    #[test]
    fn feature_windows() {
        let ds = dataset(&[vec![1.0, 2.0, 3.0, 4.0]]);
        assert_eq!(node_features(&ds, 4, 2).unwrap().x, Matrix::from_rows(&[vec![3.0, 4.0]]));
        assert_eq!(node_features(&ds, 3, 1).unwrap().x, Matrix::from_rows(&[vec![3.0]]));
        assert!(matches!(node_features(&ds, 1, 2), Err(Error::Window(_))));
    }

    #[test]
    fn message_examples() {
        let x = Matrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 0.0]]);
        assert_eq!(latent_message(&Matrix::identity(2), &x).unwrap(), x);
        let a = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]);
        let z = latent_message(&a, &Matrix::column(&[2.0, 4.0])).unwrap();
        assert_eq!(z, Matrix::column(&[3.0, 4.0]));
        assert_eq!(latent_message(&a, &Matrix::zeros(2, 3)).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn static_anchor_count() {
        let ds = dataset(&[(1..=20).map(f64::from).collect()]);
        let s = assemble_samples(&ds, 7, 1, 14, Variant::Static).unwrap();
        let anchors: Vec<usize> = s.iter().map(|x| x.anchor).collect();
        assert_eq!(anchors, (7..=13).collect::<Vec<_>>());
        assert_eq!(s[0].target.as_deref(), Some(&[8.0][..]));
        assert!(assemble_samples(&ds, 7, 8, 14, Variant::Static).unwrap().is_empty());
    }

    #[test]
    fn sequence_input_days() {
        let ds = dataset(&[(1..=20).map(f64::from).collect()]);
        let s = assemble_samples(&ds, 7, 1, 14, Variant::Sequence { steps: 7 }).unwrap();
        let last = s.iter().find(|x| x.anchor == 13).unwrap();
        let days: Vec<usize> = last.steps.iter().map(|st| st.day).collect();
        assert_eq!(days, (7..=13).collect::<Vec<_>>());
        assert_eq!(s.first().unwrap().anchor, 13);
    }
}
