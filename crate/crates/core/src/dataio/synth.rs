//! Seeded multi-country epidemics driven by synthetic mobility.
//!
//! Mobility of a country is a symmetric mixture of `mixing_degree` random
//! partner permutations plus a dominant diagonal:
//!
//! ```text
//! M(t) = scale · ( s·W(t)·I + Σ_k w_k(t)·(P_k + P_kᵀ) ),   W(t) = 2·Σ_k w_k(t)
//! ```
//!
//! Every row and column of `M(t)` has the same sum, so its row-normalized
//! form is doubly stochastic and the latent process
//! `I(t+1) = β·RowNormalize(M(t))·I(t)` multiplies total infections by
//! exactly β per day. Weights follow a weekly rhythm with log-normal jitter.
//! Observed cases are `round(underreporting·I)`, or a Poisson draw with that
//! mean when observation noise is on. Country `k` seeds its outbreak on day
//! `1 + k·outbreak_spacing`.

use chrono::NaiveDate;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::CountryDataset;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_regions: usize,
    pub n_days: usize,
    pub n_countries: usize,
    /// Daily growth factor β of latent infections.
    pub base_rate: f64,
    /// Within-region movement relative to total outgoing movement.
    pub self_loop_strength: f64,
    /// Probability that a latent infection is reported.
    pub underreporting: f64,
    pub noise_seed: u64,
    pub observation_noise: bool,
    pub initial_infections: f64,
    pub outbreak_spacing: usize,
    pub mixing_degree: usize,
    /// People represented by one unit of mixing weight.
    pub mobility_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_regions: 30,
            n_days: 90,
            n_countries: 4,
            base_rate: 1.05,
            self_loop_strength: 3.0,
            underreporting: 0.5,
            noise_seed: 1,
            observation_noise: true,
            initial_infections: 40.0,
            outbreak_spacing: 7,
            mixing_degree: 3,
            mobility_scale: 500.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0 || self.n_days == 0 || self.n_countries == 0 {
            return Err(Error::Config("synthetic counts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.underreporting) {
            return Err(Error::Config(format!("underreporting {} outside [0, 1]", self.underreporting)));
        }
        if !(self.base_rate >= 0.0) || !(self.self_loop_strength >= 0.0) || !(self.mobility_scale > 0.0) {
            return Err(Error::Config("base_rate, self_loop_strength must be >= 0, mobility_scale > 0".into()));
        }
        Ok(())
    }
}

fn random_permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

fn poisson(mean: f64, rng: &mut Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(mean.round())
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<CountryDataset>> {
    config.validate()?;
    let start = NaiveDate::from_ymd_opt(2020, 2, 24).expect("valid date");
    let dates: Vec<NaiveDate> = start.iter_days().take(config.n_days).collect();
    (0..config.n_countries).map(|k| generate_country(config, k, &dates)).collect()
}

fn generate_country(config: &SyntheticConfig, k: usize, dates: &[NaiveDate]) -> Result<CountryDataset> {
    let n = config.n_regions;
    let t_total = config.n_days;
    let mut rng = Rng::new(Rng::derive_seed(config.noise_seed, &[k as u64]));

    let partners: Vec<Vec<usize>> = (0..config.mixing_degree).map(|_| random_permutation(n, &mut rng)).collect();
    let base_weights: Vec<f64> = (0..config.mixing_degree).map(|_| rng.uniform_range(0.5, 1.5)).collect();
    let phase = rng.uniform() * 7.0;

    let mut mobility = Vec::with_capacity(t_total);
    for t in 0..t_total {
        let weekly = 1.0 + 0.25 * (std::f64::consts::TAU * (t as f64 + phase) / 7.0).sin();
        let weights: Vec<f64> = base_weights.iter().map(|b| b * weekly * (0.1 * rng.normal()).exp()).collect();
        let outgoing: f64 = 2.0 * weights.iter().sum::<f64>();
        let mut m = Matrix::zeros(n, n);
        for u in 0..n {
            m.set(u, u, config.self_loop_strength * outgoing.max(1.0));
        }
        for (perm, w) in partners.iter().zip(&weights) {
            for (u, &v) in perm.iter().enumerate() {
                m.set(u, v, m.get(u, v) + w);
                m.set(v, u, m.get(v, u) + w);
            }
        }
        mobility.push(m.scale(config.mobility_scale));
    }

    let seed_region = rng.below(n as u64) as usize;
    let start_day = 1 + k * config.outbreak_spacing;
    let mut latent = vec![0.0; n];
    let mut cases = Matrix::zeros(n, t_total);
    for day in 1..=t_total {
        if day == start_day {
            latent[seed_region] += config.initial_infections;
        }
        for (u, &li) in latent.iter().enumerate() {
            let mean = config.underreporting * li;
            let observed = if config.observation_noise { poisson(mean, &mut rng) } else { mean.round() };
            cases.set(u, day - 1, observed);
        }
        if day < t_total {
            let a = row_normalize(&mobility[day - 1]);
            let spread = a.matmul(&Matrix::column(&latent))?;
            latent = spread.data().iter().map(|v| config.base_rate * v).collect();
        }
    }

    let country = format!("SYN{k}");
    let regions = (0..n).map(|i| format!("{country}-R{i:02}")).collect();
    CountryDataset::new(country, regions, dates.to_vec(), cases, mobility)
}

fn row_normalize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let s: f64 = out.row(r).iter().sum();
        if s > 0.0 {
            out.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
    }
    out
}

/// Latent infection totals per day, recomputed without observation noise.
/// Exposed for property tests of the generator.
pub fn latent_totals(
    config: &SyntheticConfig,
    dataset: &CountryDataset,
    country_index: usize,
    seed_region: usize,
) -> Vec<f64> {
    let n = dataset.n_regions();
    let start_day = 1 + country_index * config.outbreak_spacing;
    let mut latent = vec![0.0; n];
    let mut totals = Vec::with_capacity(dataset.n_days());
    for day in 1..=dataset.n_days() {
        if day == start_day {
            latent[seed_region] += config.initial_infections;
        }
        totals.push(latent.iter().sum());
        let a = row_normalize(&dataset.mobility[day - 1]);
        let spread = a.matmul(&Matrix::column(&latent)).expect("square");
        latent = spread.data().iter().map(|v| config.base_rate * v).collect();
    }
    totals
}
