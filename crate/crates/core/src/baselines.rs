//! Reference forecasters operating on one region's case series (days 1..=T).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_AR_ORDER: usize = 7;
pub const DEFAULT_DIFFERENCING: usize = 1;
pub const RIDGE_LAMBDA: f64 = 1e-6;

fn nonempty(series: &[f64], name: &str) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Contract(format!("{name} needs a nonempty series")));
    }
    Ok(())
}

/// Mean of the whole history; the same for every horizon.
pub fn avg_predict(series: &[f64], _horizon: usize) -> Result<f64> {
    nonempty(series, "avg")?;
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Mean of the last `min(window, len)` values.
pub fn avg_window_predict(series: &[f64], window: usize, _horizon: usize) -> Result<f64> {
    nonempty(series, "avg_window")?;
    if window == 0 {
        return Err(Error::Contract("avg_window needs a window of at least one day".into()));
    }
    let tail = &series[series.len().saturating_sub(window)..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn last_day_predict(series: &[f64], _horizon: usize) -> Result<f64> {
    nonempty(series, "last_day")?;
    Ok(series[series.len() - 1])
}

/// AR(p) on the (optionally first-differenced) series:
/// `z_t = intercept + Σ_k coefficients[k−1]·z_{t−k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    pub differencing: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// The design was rank deficient and the fit used ridge regularization.
    pub ridge_fallback: bool,
}

fn difference(series: &[f64], differencing: usize) -> Result<Vec<f64>> {
    match differencing {
        0 => Ok(series.to_vec()),
        1 => Ok(series.windows(2).map(|w| w[1] - w[0]).collect()),
        d => Err(Error::Config(format!("differencing must be 0 or 1, got {d}"))),
    }
}

/// Design matrix rows `[1, z_{t−1}, …, z_{t−p}]` and responses `z_t`.
fn design(z: &[f64], p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    (p..z.len()).map(|t| (std::iter::once(1.0).chain((1..=p).map(|k| z[t - k])).collect(), z[t])).unzip()
}

/// Least squares by Householder QR. Returns `None` when a diagonal entry of
/// R is negligible against the largest column norm.
fn qr_solve(x: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = x.len();
    let k = x[0].len();
    let mut a: Vec<Vec<f64>> = x.to_vec();
    let mut b = y.to_vec();
    let scale = (0..k).map(|c| a.iter().map(|r| r[c] * r[c]).sum::<f64>().sqrt()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    for c in 0..k {
        let norm = (c..m).map(|r| a[r][c] * a[r][c]).sum::<f64>().sqrt();
        if norm <= 1e-10 * scale {
            return None;
        }
        let alpha = if a[c][c] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (c..m).map(|r| a[r][c]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|e| e * e).sum();
        for col in c..k {
            let dot: f64 = (c..m).map(|r| v[r - c] * a[r][col]).sum();
            let f = 2.0 * dot / vnorm2;
            (c..m).for_each(|r| a[r][col] -= f * v[r - c]);
        }
        let dot: f64 = (c..m).map(|r| v[r - c] * b[r]).sum();
        let f = 2.0 * dot / vnorm2;
        (c..m).for_each(|r| b[r] -= f * v[r - c]);
        if a[c][c].abs() <= 1e-10 * scale {
            return None;
        }
    }
    let mut beta = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|j| a[c][j] * beta[j]).sum();
        beta[c] = (b[c] - s) / a[c][c];
    }
    Some(beta)
}

/// Solves `(XᵀX + λI)β = Xᵀy` by Cholesky factorization.
fn ridge_solve(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let k = x[0].len();
    let mut g = vec![vec![0.0; k]; k];
    let mut h = vec![0.0; k];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..k {
            h[i] += row[i] * yi;
            for j in 0..k {
                g[i][j] += row[i] * row[j];
            }
        }
    }
    (0..k).for_each(|i| g[i][i] += lambda);
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                l[i][i] = (g[i][i] - s).max(f64::MIN_POSITIVE).sqrt();
            } else {
                l[i][j] = (g[i][j] - s) / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; k];
    for i in 0..k {
        z[i] = (h[i] - (0..i).map(|p| l[i][p] * z[p]).sum::<f64>()) / l[i][i];
    }
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        beta[i] = (z[i] - (i + 1..k).map(|p| l[p][i] * beta[p]).sum::<f64>()) / l[i][i];
    }
    beta
}

/// Ordinary least squares fit of an AR(`order`) model with intercept.
pub fn ar_fit(series: &[f64], order: usize, differencing: usize) -> Result<ArModel> {
    let z = difference(series, differencing)?;
    if z.len() < order + 2 {
        return Err(Error::Contract(format!(
            "AR({order}) with differencing {differencing} needs {} values, got {}",
            order + 2 + differencing,
            series.len()
        )));
    }
    let (x, y) = design(&z, order);
    let (beta, ridge_fallback) = match qr_solve(&x, &y) {
        Some(b) => (b, false),
        None => (ridge_solve(&x, &y, RIDGE_LAMBDA), true),
    };
    Ok(ArModel { order, differencing, intercept: beta[0], coefficients: beta[1..].to_vec(), ridge_fallback })
}

/// Recursive `horizon`-step forecast from the end of `series`, undifferenced
/// and clamped at zero.
pub fn ar_predict(model: &ArModel, series: &[f64], horizon: usize) -> Result<f64> {
    nonempty(series, "ar_predict")?;
    if horizon == 0 {
        return Err(Error::Contract("horizon must be >= 1".into()));
    }
    let mut z = difference(series, model.differencing)?;
    if z.len() < model.order {
        return Err(Error::Contract(format!("AR({}) forecast needs {} lagged values", model.order, model.order)));
    }
    for _ in 0..horizon {
        let t = z.len();
        let next = model.intercept + model.coefficients.iter().enumerate().map(|(k, c)| c * z[t - 1 - k]).sum::<f64>();
        z.push(next);
    }
    let forecast = match model.differencing {
        0 => z[z.len() - 1],
        _ => series[series.len() - 1] + z[z.len() - horizon..].iter().sum::<f64>(),
    };
    Ok(forecast.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar1(len: usize) -> Vec<f64> {
        let mut s = vec![0.0];
        while s.len() < len {
            s.push(0.5 * s[s.len() - 1] + 1.0);
        }
        s
    }

    #[test]
    fn simple_baselines() {
        assert_eq!(avg_predict(&[3.0, 5.0, 7.0], 1).unwrap(), 5.0);
        assert_eq!(avg_predict(&[0.0; 3], 4).unwrap(), 0.0);
        assert_eq!(avg_window_predict(&[1.0, 2.0, 3.0, 4.0], 2, 1).unwrap(), 3.5);
        assert_eq!(avg_window_predict(&[1.0, 2.0, 6.0], 9, 1).unwrap(), 3.0);
        assert_eq!(avg_window_predict(&[1.0, 2.0, 6.0], 1, 1).unwrap(), 6.0);
        assert_eq!(last_day_predict(&[1.0, 9.0, 4.0], 3).unwrap(), 4.0);
        assert_eq!(last_day_predict(&[2.5], 1).unwrap(), 2.5);
        assert!(matches!(avg_predict(&[], 1), Err(Error::Contract(_))));
        assert!(matches!(last_day_predict(&[], 1), Err(Error::Contract(_))));
    }

    #[test]
    fn recovers_exact_ar1() {
        let s = ar1(25);
        let m = ar_fit(&s, 1, 0).unwrap();
        assert!(!m.ridge_fallback);
        assert!((m.coefficients[0] - 0.5).abs() < 1e-8 && (m.intercept - 1.0).abs() < 1e-8, "{m:?}");
        let s = ar1(12);
        let m = ar_fit(&s[..11], 1, 0).unwrap();
        assert!((ar_predict(&m, &s[..11], 1).unwrap() - s[11]).abs() < 1e-6);
    }

    #[test]
    fn residuals_are_orthogonal_to_regressors() {
        let s: Vec<f64> = (0..40).map(|t| ((t as f64) * 0.7).sin() * 10.0 + t as f64 + 20.0).collect();
        let m = ar_fit(&s, 3, 0).unwrap();
        let (x, y) = design(&s, 3);
        for c in 0..4 {
            let dot: f64 = x
                .iter()
                .zip(&y)
                .map(|(row, yi)| {
                    let fit = m.intercept + (0..3).map(|k| m.coefficients[k] * row[k + 1]).sum::<f64>();
                    row[c] * (yi - fit)
                })
                .sum();
            assert!(dot.abs() < 1e-8, "column {c}: {dot}");
        }
    }

    #[test]
    fn constant_series_with_differencing_forecasts_last_value() {
        let s = vec![4.0; 20];
        let m = ar_fit(&s, 7, 1).unwrap();
        assert!(m.ridge_fallback);
        assert!((ar_predict(&m, &s, 5).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn forecast_clamps_and_zero_model() {
        let zero =
            ArModel { order: 2, differencing: 0, intercept: 0.0, coefficients: vec![0.0, 0.0], ridge_fallback: false };
        assert_eq!(ar_predict(&zero, &[5.0, 6.0, 7.0], 3).unwrap(), 0.0);
        let neg = ArModel { intercept: -5.0, ..zero };
        assert_eq!(ar_predict(&neg, &[5.0, 6.0, 7.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(matches!(ar_fit(&[1.0; 9], 7, 1), Err(Error::Contract(_))));
        assert!(ar_fit(&[1.0; 10], 7, 1).is_ok());
    }
}
