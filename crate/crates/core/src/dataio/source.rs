use std::sync::atomic::{AtomicUsize, Ordering};

use super::CountryDataset;
use crate::numcore::Matrix;

/// Read access to a country's daily data. Days are 1-based.
pub trait DataSource: Sync {
    fn country(&self) -> &str;
    fn n_regions(&self) -> usize;
    fn n_days(&self) -> usize;
    fn case(&self, region: usize, day: usize) -> f64;
    /// Raw mobility matrix of `day` (destination rows, origin columns).
    fn mobility_on(&self, day: usize) -> &Matrix;

    fn cases_on(&self, day: usize) -> Vec<f64> {
        (0..self.n_regions()).map(|r| self.case(r, day)).collect()
    }

    /// Cases of `region` for days `first..=last`.
    fn region_range(&self, region: usize, first: usize, last: usize) -> Vec<f64> {
        (first..=last).map(|d| self.case(region, d)).collect()
    }
}

impl DataSource for CountryDataset {
    fn country(&self) -> &str {
        &self.country
    }

    fn n_regions(&self) -> usize {
        self.regions.len()
    }

    fn n_days(&self) -> usize {
        self.dates.len()
    }

    fn case(&self, region: usize, day: usize) -> f64 {
        assert!(day >= 1 && day <= self.dates.len(), "day {day} outside 1..={}", self.dates.len());
        self.cases.get(region, day - 1)
    }

    fn mobility_on(&self, day: usize) -> &Matrix {
        assert!(day >= 1 && day <= self.dates.len(), "day {day} outside 1..={}", self.dates.len());
        &self.mobility[day - 1]
    }
}

/// View of the first `last_day` days of a source. Reading past the end is a
/// programming error and panics, which makes look-ahead impossible for any
/// code handed a prefix.
pub struct Prefix<'a, S: DataSource + ?Sized> {
    inner: &'a S,
    last_day: usize,
}

impl<'a, S: DataSource + ?Sized> Prefix<'a, S> {
    pub fn new(inner: &'a S, last_day: usize) -> Self {
        assert!(last_day <= inner.n_days(), "prefix {last_day} longer than source");
        Self { inner, last_day }
    }
}

impl<S: DataSource + ?Sized> DataSource for Prefix<'_, S> {
    fn country(&self) -> &str {
        self.inner.country()
    }

    fn n_regions(&self) -> usize {
        self.inner.n_regions()
    }

    fn n_days(&self) -> usize {
        self.last_day
    }

    fn case(&self, region: usize, day: usize) -> f64 {
        assert!(day <= self.last_day, "look-ahead: day {day} read through a prefix ending at {}", self.last_day);
        self.inner.case(region, day)
    }

    fn mobility_on(&self, day: usize) -> &Matrix {
        assert!(
            day <= self.last_day,
            "look-ahead: mobility of day {day} read through a prefix ending at {}",
            self.last_day
        );
        self.inner.mobility_on(day)
    }
}

/// Counters filled in by [`Traced`].
#[derive(Debug, Default)]
pub struct AccessLog {
    max_case_day: AtomicUsize,
    case_reads: AtomicUsize,
    max_mobility_day: AtomicUsize,
    mobility_reads: AtomicUsize,
}

impl AccessLog {
    pub fn max_case_day(&self) -> usize {
        self.max_case_day.load(Ordering::SeqCst)
    }

    pub fn case_reads(&self) -> usize {
        self.case_reads.load(Ordering::SeqCst)
    }

    pub fn max_mobility_day(&self) -> usize {
        self.max_mobility_day.load(Ordering::SeqCst)
    }

    pub fn mobility_reads(&self) -> usize {
        self.mobility_reads.load(Ordering::SeqCst)
    }

    pub fn total_reads(&self) -> usize {
        self.case_reads() + self.mobility_reads()
    }

    pub fn reset(&self) {
        self.max_case_day.store(0, Ordering::SeqCst);
        self.case_reads.store(0, Ordering::SeqCst);
        self.max_mobility_day.store(0, Ordering::SeqCst);
        self.mobility_reads.store(0, Ordering::SeqCst);
    }
}

/// Wrapper recording which days were read.
pub struct Traced<'a, S: DataSource + ?Sized> {
    inner: &'a S,
    log: AccessLog,
}

impl<'a, S: DataSource + ?Sized> Traced<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self { inner, log: AccessLog::default() }
    }

    pub fn log(&self) -> &AccessLog {
        &self.log
    }
}

impl<S: DataSource + ?Sized> DataSource for Traced<'_, S> {
    fn country(&self) -> &str {
        self.inner.country()
    }

    fn n_regions(&self) -> usize {
        self.inner.n_regions()
    }

    fn n_days(&self) -> usize {
        self.inner.n_days()
    }

    fn case(&self, region: usize, day: usize) -> f64 {
        self.log.case_reads.fetch_add(1, Ordering::SeqCst);
        self.log.max_case_day.fetch_max(day, Ordering::SeqCst);
        self.inner.case(region, day)
    }

    fn mobility_on(&self, day: usize) -> &Matrix {
        self.log.mobility_reads.fetch_add(1, Ordering::SeqCst);
        self.log.max_mobility_day.fetch_max(day, Ordering::SeqCst);
        self.inner.mobility_on(day)
    }
}
