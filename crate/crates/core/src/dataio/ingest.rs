use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use log::warn;

use super::{CountryDataset, TimeOfDay};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Declared set of region ids, plus optional source-name aliases.
#[derive(Debug, Clone, Default)]
pub struct RegionUniverse {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    aliases: HashMap<String, String>,
}

impl RegionUniverse {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Ingestion(format!("duplicate region id {id}")));
            }
        }
        Ok(Self { ids, index, aliases: HashMap::new() })
    }

    /// Universe made of the distinct target ids of a mapping, in first-seen order.
    pub fn from_mapping(mapping: &[(String, String)]) -> Result<Self> {
        let mut seen = HashSet::new();
        let ids = mapping.iter().filter(|(_, id)| seen.insert(id.clone())).map(|(_, id)| id.clone()).collect();
        let mut u = Self::new(ids)?;
        u.aliases = mapping.iter().cloned().collect();
        Ok(u)
    }

    pub fn with_aliases(mut self, mapping: &[(String, String)]) -> Result<Self> {
        for (name, id) in mapping {
            if !self.index.contains_key(id) {
                return Err(Error::Ingestion(format!("mapping targets unknown region id {id}")));
            }
            self.aliases.insert(name.clone(), id.clone());
        }
        Ok(self)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn resolve(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.index.get(name).or_else(|| self.aliases.get(name).and_then(|id| self.index.get(id))).copied()
    }
}

fn parse_date(s: &str, path: &Path, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Ingestion(format!("{}:{line}: unparseable date {s:?} ({e})", path.display())))
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| Error::csv(path, e))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Ingestion(format!("{}: missing column {name}", path.display())))
}

/// Two-column `source_name,region_id` mapping file.
pub fn load_region_mapping(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let src = column(&headers, "source_name", path)?;
    let dst = column(&headers, "region_id", path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        out.push((rec[src].to_string(), rec[dst].to_string()));
    }
    Ok(out)
}

/// Reads a mobility CSV and sums the (up to three) recordings of every
/// (day, origin, destination) into one entry `M[destination][origin]`.
/// Pairs without a record are zero.
pub fn load_mobility(path: &Path, regions: &RegionUniverse) -> Result<BTreeMap<NaiveDate, Matrix>> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let date_col = column(&headers, "date", path)?;
    let tod_col = headers.iter().position(|h| h == "time_of_day");
    let origin_col = column(&headers, "origin", path)?;
    let dest_col = column(&headers, "destination", path)?;
    let count_col = column(&headers, "count", path)?;

    let n = regions.len();
    let mut days: BTreeMap<NaiveDate, Matrix> = BTreeMap::new();
    let mut seen: HashSet<(NaiveDate, Option<TimeOfDay>, usize, usize)> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = parse_date(&rec[date_col], path, line)?;
        let tod = match tod_col {
            Some(c) => Some(TimeOfDay::parse(&rec[c]).ok_or_else(|| {
                Error::Ingestion(format!("{}:{line}: invalid time_of_day {:?}", path.display(), &rec[c]))
            })?),
            None => None,
        };
        let origin = regions.resolve(&rec[origin_col]).ok_or_else(|| {
            Error::Ingestion(format!("{}:{line}: unknown region id {}", path.display(), &rec[origin_col]))
        })?;
        let dest = regions.resolve(&rec[dest_col]).ok_or_else(|| {
            Error::Ingestion(format!("{}:{line}: unknown region id {}", path.display(), &rec[dest_col]))
        })?;
        let count: f64 = rec[count_col].parse().map_err(|_| {
            Error::Ingestion(format!("{}:{line}: unparseable count {:?}", path.display(), &rec[count_col]))
        })?;
        if !(count >= 0.0) || !count.is_finite() {
            return Err(Error::Ingestion(format!("{}:{line}: negative count {count}", path.display())));
        }
        if !seen.insert((date, tod, origin, dest)) {
            return Err(Error::Ingestion(format!(
                "{}:{line}: duplicate recording for {date} {:?} {}→{}",
                path.display(),
                tod,
                &rec[origin_col],
                &rec[dest_col]
            )));
        }
        let m = days.entry(date).or_insert_with(|| Matrix::zeros(n, n));
        let v = m.get(dest, origin);
        m.set(dest, origin, v + count);
    }
    Ok(days)
}

/// Daily case matrix with ingestion counters.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseTable {
    pub dates: Vec<NaiveDate>,
    /// n x dates.len()
    pub values: Matrix,
    pub clamped: usize,
    pub missing: usize,
    pub unknown_regions: usize,
}

fn date_range(first: NaiveDate, last: NaiveDate) -> Vec<NaiveDate> {
    first.iter_days().take_while(|d| *d <= last).collect()
}

/// Reads a `date,region,new_cases` file. Negative values are clamped to 0
/// and (region, day) pairs without a record are 0; both are counted and
/// logged. Without `range` the table spans the file's first to last date.
pub fn load_cases(path: &Path, regions: &RegionUniverse, range: Option<(NaiveDate, NaiveDate)>) -> Result<CaseTable> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let date_col = column(&headers, "date", path)?;
    let region_col = column(&headers, "region", path)?;
    let cases_col = column(&headers, "new_cases", path)?;

    let mut records: Vec<(NaiveDate, usize, f64)> = Vec::new();
    let mut unknown = HashSet::new();
    let mut unknown_regions = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = parse_date(&rec[date_col], path, line)?;
        let value: f64 = rec[cases_col].parse().map_err(|_| {
            Error::Ingestion(format!("{}:{line}: unparseable case count {:?}", path.display(), &rec[cases_col]))
        })?;
        match regions.resolve(&rec[region_col]) {
            Some(r) => records.push((date, r, value)),
            None => {
                unknown_regions += 1;
                unknown.insert(rec[region_col].to_string());
            }
        }
    }
    if !unknown.is_empty() {
        let mut names: Vec<_> = unknown.into_iter().collect();
        names.sort();
        warn!(
            "{}: skipped {unknown_regions} records of regions outside the universe: {}",
            path.display(),
            names.join(", ")
        );
    }

    let (first, last) = match range {
        Some(r) => r,
        None => {
            let first = records.iter().map(|r| r.0).min();
            let last = records.iter().map(|r| r.0).max();
            match (first, last) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::EmptyDataset(format!("{}: no case records", path.display()))),
            }
        }
    };
    let dates = date_range(first, last);
    let n = regions.len();
    let mut values = Matrix::zeros(n, dates.len());
    let mut present = vec![false; n * dates.len()];
    let mut clamped = 0;
    for (date, r, v) in records {
        if date < first || date > last {
            continue;
        }
        let t = (date - first).num_days() as usize;
        let v = if v < 0.0 {
            clamped += 1;
            0.0
        } else {
            v
        };
        values.set(r, t, values.get(r, t) + v);
        present[r * dates.len() + t] = true;
    }
    let missing = present.iter().filter(|p| !**p).count();
    if clamped > 0 {
        warn!("{}: clamped {clamped} negative daily counts to 0", path.display());
    }
    if missing > 0 {
        warn!("{}: {missing} (region, day) pairs missing, filled with 0", path.display());
    }
    Ok(CaseTable { dates, values, clamped, missing, unknown_regions })
}

/// Loaded but not yet aligned country data.
#[derive(Debug, Clone)]
pub struct RawCountry {
    pub country: String,
    pub regions: Vec<String>,
    pub mobility: BTreeMap<NaiveDate, Matrix>,
    pub cases: CaseTable,
}

/// Restricts to the dates covered by both mobility and cases and drops
/// regions with fewer than `min_total_cases` cases over the whole case table.
pub fn align_and_filter(raw: &RawCountry, min_total_cases: f64) -> Result<CountryDataset> {
    let (Some(&m_first), Some(&m_last)) = (raw.mobility.keys().next(), raw.mobility.keys().next_back()) else {
        return Err(Error::EmptyDataset(format!("{}: no mobility data", raw.country)));
    };
    let (Some(&c_first), Some(&c_last)) = (raw.cases.dates.first(), raw.cases.dates.last()) else {
        return Err(Error::EmptyDataset(format!("{}: no case data", raw.country)));
    };
    let first = m_first.max(c_first);
    let last = m_last.min(c_last);
    if first > last {
        return Err(Error::EmptyDataset(format!(
            "{}: mobility ({m_first}..{m_last}) and cases ({c_first}..{c_last}) do not overlap",
            raw.country
        )));
    }

    let keep: Vec<usize> =
        (0..raw.regions.len()).filter(|&r| raw.cases.values.row(r).iter().sum::<f64>() >= min_total_cases).collect();
    if keep.is_empty() {
        return Err(Error::EmptyDataset(format!("{}: no region has at least {min_total_cases} cases", raw.country)));
    }
    let dropped = raw.regions.len() - keep.len();
    if dropped > 0 {
        log::info!("{}: dropped {dropped} regions below {min_total_cases} total cases", raw.country);
    }

    let dates = date_range(first, last);
    let n = keep.len();
    let offset = (first - c_first).num_days() as usize;
    let mut cases = Matrix::zeros(n, dates.len());
    for (i, &r) in keep.iter().enumerate() {
        for t in 0..dates.len() {
            cases.set(i, t, raw.cases.values.get(r, offset + t));
        }
    }
    let mut mobility = Vec::with_capacity(dates.len());
    for date in &dates {
        let mut m = Matrix::zeros(n, n);
        match raw.mobility.get(date) {
            Some(full) => {
                for (i, &a) in keep.iter().enumerate() {
                    for (j, &b) in keep.iter().enumerate() {
                        m.set(i, j, full.get(a, b));
                    }
                }
            }
            None => warn!("{}: no mobility recorded on {date}; using an empty graph", raw.country),
        }
        mobility.push(m);
    }
    let regions = keep.iter().map(|&r| raw.regions[r].clone()).collect();
    CountryDataset::new(raw.country.clone(), regions, dates, cases, mobility)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn universe(ids: &[&str]) -> RegionUniverse {
        RegionUniverse::new(ids.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn three_recordings_are_summed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.csv",
            "date,time_of_day,origin,destination,count\n\
             2020-03-01,0,a,b,10\n2020-03-01,1,a,b,5\n2020-03-01,2,a,b,0\n2020-03-01,1,a,a,7\n",
        );
        let u = universe(&["a", "b", "c"]);
        let m = load_mobility(&p, &u).unwrap();
        let day = &m[&d("2020-03-01")];
        assert_eq!(day.get(1, 0), 15.0);
        assert_eq!(day.get(2, 0), 0.0);
        assert_eq!(day.get(0, 0), 7.0);
    }

    #[test]
    fn pre_aggregated_variant_and_aliases() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "date,origin,destination,count\n2020-03-01,Milano,b,4\n");
        let u = universe(&["a", "b"]).with_aliases(&[("Milano".into(), "a".into())]).unwrap();
        let m = load_mobility(&p, &u).unwrap();
        assert_eq!(m[&d("2020-03-01")].get(1, 0), 4.0);
    }

    #[test]
    fn mobility_errors() {
        let dir = tempfile::tempdir().unwrap();
        let u = universe(&["a", "b"]);
        let p = write(dir.path(), "m1.csv", "date,time_of_day,origin,destination,count\n2020-03-01,0,a,zz,1\n");
        let err = load_mobility(&p, &u).unwrap_err().to_string();
        assert!(err.contains("zz"), "{err}");
        let p = write(dir.path(), "m2.csv", "date,time_of_day,origin,destination,count\n2020-03-01,0,a,b,-1\n");
        assert!(matches!(load_mobility(&p, &u), Err(Error::Ingestion(_))));
    }

    #[test]
    fn cases_clamped_and_missing_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.csv",
            "date,region,new_cases\n2020-03-01,r1,12\n2020-03-02,r1,-3\n2020-03-01,r2,1\n2020-03-02,r2,1\n2020-03-03,r2,1\n",
        );
        let u = universe(&["r1", "r2"]);
        let t = load_cases(&p, &u, None).unwrap();
        assert_eq!(t.values.get(0, 0), 12.0);
        assert_eq!(t.values.get(0, 1), 0.0);
        assert_eq!(t.values.get(0, 2), 0.0);
        assert_eq!(t.clamped, 1);
        assert_eq!(t.missing, 1);
    }

    #[test]
    fn bad_case_date_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "date,region,new_cases\n2020-03-01,r1,1\n03/02/2020,r1,2\n");
        let err = load_cases(&p, &universe(&["r1"]), None).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    fn raw(totals: &[f64], mob_start: u32, case_start: u32, days: u32) -> RawCountry {
        let n = totals.len();
        let c_first = d("2020-03-01") + chrono::Days::new(case_start as u64);
        let dates: Vec<_> = (0..days).map(|i| c_first + chrono::Days::new(i as u64)).collect();
        let mut values = Matrix::zeros(n, days as usize);
        for (r, &tot) in totals.iter().enumerate() {
            values.set(r, days as usize - 1, tot);
        }
        let m_first = d("2020-03-01") + chrono::Days::new(mob_start as u64);
        let mobility =
            (0..days + 5).map(|i| (m_first + chrono::Days::new(i as u64), Matrix::filled(n, n, 1.0))).collect();
        RawCountry {
            country: "x".into(),
            regions: (0..n).map(|i| format!("r{i}")).collect(),
            mobility,
            cases: CaseTable { dates, values, clamped: 0, missing: 0, unknown_regions: 0 },
        }
    }

    #[test]
    fn filter_threshold_is_strict_less() {
        let ds = align_and_filter(&raw(&[9.0, 10.0, 50.0], 0, 0, 10), 10.0).unwrap();
        assert_eq!(ds.regions, vec!["r1".to_string(), "r2".to_string()]);
        assert_eq!(ds.mobility[0].shape(), (2, 2));
    }

    #[test]
    fn dates_are_intersection() {
        // cases from day 3, mobility from day 5
        let ds = align_and_filter(&raw(&[20.0], 5, 3, 10), 10.0).unwrap();
        assert_eq!(ds.dates[0], d("2020-03-06"));
        assert_eq!(*ds.dates.last().unwrap(), d("2020-03-13"));
    }

    #[test]
    fn empty_result_is_error() {
        assert!(matches!(align_and_filter(&raw(&[1.0, 2.0], 0, 0, 5), 10.0), Err(Error::EmptyDataset(_))));
    }
}
