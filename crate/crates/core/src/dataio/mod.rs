//! Country datasets: ingestion of raw mobility and case files, alignment,
//! synthetic epidemics and on-disk bundles.
//!
//! Days are numbered from 1 (the first aligned date) throughout the crate.

mod bundle;
mod ingest;
mod source;
mod synth;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use bundle::{load_bundle, save_bundle, BUNDLE_FORMAT_VERSION};
pub use ingest::{
    align_and_filter, load_cases, load_mobility, load_region_mapping, CaseTable, RawCountry, RegionUniverse,
};
pub use source::{AccessLog, DataSource, Prefix, Traced};
pub use synth::{generate_synthetic, latent_totals, SyntheticConfig};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Period of the day a raw mobility recording was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimeOfDay {
    Midnight,
    Morning,
    Afternoon,
}

impl TimeOfDay {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "midnight" => Some(Self::Midnight),
            "1" | "morning" => Some(Self::Morning),
            "2" | "afternoon" => Some(Self::Afternoon),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawMobilityRecord {
    pub date: NaiveDate,
    pub time_of_day: Option<TimeOfDay>,
    pub origin: String,
    pub destination: String,
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub date: NaiveDate,
    pub region: String,
    pub new_cases: i64,
}

/// Aligned daily cases and mobility of one country.
///
/// `mobility[t][u][v]` is the number of people that moved from region `v`
/// into region `u` on day `t + 1`; the diagonal holds within-region movement.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryDataset {
    pub country: String,
    pub regions: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// n x T_total daily new cases.
    pub cases: Matrix,
    pub mobility: Vec<Matrix>,
}

impl CountryDataset {
    /// Builds a dataset after checking every structural invariant.
    pub fn new(
        country: impl Into<String>,
        regions: Vec<String>,
        dates: Vec<NaiveDate>,
        cases: Matrix,
        mobility: Vec<Matrix>,
    ) -> Result<Self> {
        let ds = Self { country: country.into(), regions, dates, cases, mobility };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.regions.len();
        let t = self.dates.len();
        if n == 0 {
            return Err(Error::EmptyDataset(format!("{}: no regions", self.country)));
        }
        if self.cases.shape() != (n, t) {
            return Err(Error::Dimension(format!(
                "{}: case matrix is {}x{}, expected {n}x{t}",
                self.country,
                self.cases.rows(),
                self.cases.cols()
            )));
        }
        if self.mobility.len() != t {
            return Err(Error::Dimension(format!(
                "{}: {} mobility matrices for {t} days",
                self.country,
                self.mobility.len()
            )));
        }
        for (i, m) in self.mobility.iter().enumerate() {
            if m.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "{}: mobility on {} is {}x{}, expected {n}x{n}",
                    self.country,
                    self.dates[i],
                    m.rows(),
                    m.cols()
                )));
            }
            if m.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Contract(format!(
                    "{}: negative or non-finite mobility on {}",
                    self.country, self.dates[i]
                )));
            }
        }
        for w in self.dates.windows(2) {
            if w[1] != w[0].succ_opt().unwrap_or(w[0]) {
                return Err(Error::Contract(format!(
                    "{}: dates {} and {} are not consecutive",
                    self.country, w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    /// Daily series of one region.
    pub fn region_series(&self, region: usize) -> &[f64] {
        self.cases.row(region)
    }
}
