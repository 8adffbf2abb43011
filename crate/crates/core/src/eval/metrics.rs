use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ReportRow;
use crate::dataio::DataSource;
use crate::error::{Error, Result};

/// Mean absolute error over all (region, test day) pairs.
pub fn error_metric(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != actual.len() {
        return Err(Error::Contract(format!(
            "error metric over {} predictions and {} actuals",
            pred.len(),
            actual.len()
        )));
    }
    Ok(pred.iter().zip(actual).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64)
}

/// Error metric of report rows.
pub fn rows_error(rows: &[&ReportRow]) -> Result<f64> {
    let (p, y): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.prediction, r.actual)).unzip();
    error_metric(&p, &y)
}

/// One term `|Σŷ − Σy| / Σy`, or `None` when the actual sum is zero.
pub fn relative_term(pred_sum: f64, actual_sum: f64) -> Option<f64> {
    (actual_sum != 0.0).then(|| (pred_sum - actual_sum).abs() / actual_sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    /// Mean term per region (regions whose terms were all skipped are absent).
    pub per_region: BTreeMap<String, f64>,
    pub pooled: f64,
    pub terms: usize,
    pub skipped: usize,
}

/// Relative error of `window`-day forecast sums. For every anchor T and
/// region where horizons `1..=window` are all present, compares the sum of
/// predictions with the sum of actuals. Rows must come from one country and
/// one model.
pub fn relative_error(rows: &[ReportRow], window: usize) -> Result<RelativeError> {
    if window == 0 {
        return Err(Error::Contract("relative error window must be >= 1".into()));
    }
    let mut sums: BTreeMap<(&str, usize), (f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.horizon >= 1 && r.horizon <= window) {
        let e = sums.entry((r.region.as_str(), r.t)).or_insert((0.0, 0.0, 0));
        e.0 += r.prediction;
        e.1 += r.actual;
        e.2 += 1;
    }
    let mut per_region: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let (mut total, mut terms, mut skipped) = (0.0, 0usize, 0usize);
    for ((region, _), (p, y, count)) in sums {
        if count != window {
            continue;
        }
        match relative_term(p, y) {
            Some(term) => {
                let e = per_region.entry(region.to_string()).or_insert((0.0, 0));
                e.0 += term;
                e.1 += 1;
                total += term;
                terms += 1;
            }
            None => skipped += 1,
        }
    }
    if terms == 0 {
        return Err(Error::Undefined(format!("relative error: no window with nonzero actuals ({skipped} skipped)")));
    }
    Ok(RelativeError {
        per_region: per_region.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        pooled: total / terms as f64,
        terms,
        skipped,
    })
}

/// Pearson correlation of `m[i]` with `c[i + shift]` for `i` in
/// `0..L − shift`, `L = min(len(m), len(c))`. `None` when either window has
/// zero variance.
pub fn pearson_shift_correlation(m: &[f64], c: &[f64], shift: usize) -> Result<Option<f64>> {
    let len = m.len().min(c.len());
    if len <= shift + 1 {
        return Err(Error::Contract(format!("series of length {len} too short for shift {shift}")));
    }
    let k = len - shift;
    let x = &m[..k];
    let y = &c[shift..shift + k];
    let mx = x.iter().sum::<f64>() / k as f64;
    let my = y.iter().sum::<f64>() / k as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// People moving into or out of each region per day: row sum + column sum
/// of the raw matrix with the self-loop counted once. `[region][day]`.
pub fn mobility_totals(src: &(impl DataSource + ?Sized)) -> Vec<Vec<f64>> {
    let n = src.n_regions();
    let mut out = vec![Vec::with_capacity(src.n_days()); n];
    for day in 1..=src.n_days() {
        let m = src.mobility_on(day);
        for (u, series) in out.iter_mut().enumerate() {
            let row: f64 = m.row(u).iter().sum();
            let col: f64 = (0..n).map(|v| m.get(v, u)).sum();
            series.push(row + col - m.get(u, u));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub region: String,
    pub shift: usize,
    pub pearson: Option<f64>,
}

/// Correlation of mobility totals with cases `shift` days later for every
/// region and shift in `shifts`.
pub fn region_correlations(
    src: &(impl DataSource + ?Sized),
    regions: &[String],
    shifts: std::ops::RangeInclusive<usize>,
) -> Result<Vec<Correlation>> {
    let totals = mobility_totals(src);
    let mut out = Vec::new();
    for (u, region) in regions.iter().enumerate() {
        let cases = src.region_range(u, 1, src.n_days());
        for s in shifts.clone() {
            out.push(Correlation {
                region: region.clone(),
                shift: s,
                pearson: pearson_shift_correlation(&totals[u], &cases, s)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStats {
    pub region: String,
    pub mean: f64,
    pub std: f64,
    /// Largest absolute change between consecutive days.
    pub max_diff: f64,
}

/// Daily new-case summary per region (population standard deviation).
pub fn case_stats(src: &(impl DataSource + ?Sized), regions: &[String]) -> Vec<CaseStats> {
    regions
        .iter()
        .enumerate()
        .map(|(u, region)| {
            let s = src.region_range(u, 1, src.n_days());
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / s.len() as f64;
            let max_diff = s.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
            CaseStats { region: region.clone(), mean, std: var.sqrt(), max_diff }
        })
        .collect()
}
