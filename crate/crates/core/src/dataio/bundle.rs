//! On-disk dataset bundle:
//!
//! ```text
//! <dir>/manifest.json          country, n, t_total, dates, regions, format_version
//! <dir>/cases.csv              region,<date_1>,...,<date_T>   (one row per region)
//! <dir>/mobility/<date>.csv    dense n x n, row = destination, column = origin
//! ```
//!
//! Values are written in Rust's shortest round-trip decimal form, so a
//! save/load cycle reproduces every `f64` bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::CountryDataset;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const BUNDLE_FORMAT_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: String,
    country: String,
    n: usize,
    t_total: usize,
    dates: Vec<NaiveDate>,
    regions: Vec<String>,
}

fn format_err(message: impl Into<String>) -> Error {
    Error::Format { version: BUNDLE_FORMAT_VERSION.to_string(), message: message.into() }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn save_bundle(dataset: &CountryDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let mob_dir = dir.join("mobility");
    fs::create_dir_all(&mob_dir).map_err(|e| Error::io(&mob_dir, e))?;

    let manifest = Manifest {
        format_version: BUNDLE_FORMAT_VERSION.to_string(),
        country: dataset.country.clone(),
        n: dataset.n_regions(),
        t_total: dataset.n_days(),
        dates: dataset.dates.clone(),
        regions: dataset.regions.clone(),
    };
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    write_file(&path, &(body + "\n"))?;

    let mut cases = String::from("region");
    for d in &dataset.dates {
        cases.push(',');
        cases.push_str(&d.to_string());
    }
    cases.push('\n');
    for (r, id) in dataset.regions.iter().enumerate() {
        cases.push_str(id);
        for v in dataset.cases.row(r) {
            cases.push(',');
            cases.push_str(&v.to_string());
        }
        cases.push('\n');
    }
    write_file(&dir.join("cases.csv"), &cases)?;

    for (date, m) in dataset.dates.iter().zip(&dataset.mobility) {
        write_file(&mob_dir.join(format!("{date}.csv")), &dense_csv(m))?;
    }
    Ok(())
}

fn dense_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn parse_value(s: &str, path: &Path) -> Result<f64> {
    s.trim().parse().map_err(|_| format_err(format!("{}: bad number {s:?}", path.display())))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            format_err(format!("missing {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

pub fn load_bundle(dir: &Path) -> Result<CountryDataset> {
    let path = dir.join("manifest.json");
    let manifest: Manifest =
        serde_json::from_str(&read_to_string(&path)?).map_err(|e| format_err(format!("{}: {e}", path.display())))?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(format_err(format!("unsupported bundle version {:?}", manifest.format_version)));
    }
    let n = manifest.n;
    if manifest.regions.len() != n || manifest.dates.len() != manifest.t_total {
        return Err(format_err(format!(
            "manifest declares n={n}, t_total={} but lists {} regions and {} dates",
            manifest.t_total,
            manifest.regions.len(),
            manifest.dates.len()
        )));
    }

    let path = dir.join("cases.csv");
    let body = read_to_string(&path)?;
    let mut lines = body.lines();
    let header = lines.next().ok_or_else(|| format_err("empty cases.csv"))?;
    let header_dates: Vec<&str> = header.split(',').skip(1).collect();
    if header_dates.len() != manifest.t_total
        || header_dates.iter().zip(&manifest.dates).any(|(h, d)| *h != d.to_string())
    {
        return Err(format_err("cases.csv dates do not match the manifest"));
    }
    let mut cases = Matrix::zeros(n, manifest.t_total);
    let mut rows = 0;
    for line in lines.filter(|l| !l.is_empty()) {
        if rows >= n {
            return Err(format_err(format!("cases.csv has more than the {n} regions in the manifest")));
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default();
        if id != manifest.regions[rows] {
            return Err(format_err(format!(
                "cases.csv row {rows} is {id:?}, manifest says {:?}",
                manifest.regions[rows]
            )));
        }
        let values: Vec<f64> = fields.map(|f| parse_value(f, &path)).collect::<Result<_>>()?;
        if values.len() != manifest.t_total {
            return Err(format_err(format!("cases.csv row {id} has {} values", values.len())));
        }
        cases.row_mut(rows).copy_from_slice(&values);
        rows += 1;
    }
    if rows != n {
        return Err(format_err(format!("cases.csv has {rows} regions, manifest declares {n}")));
    }

    let mut mobility = Vec::with_capacity(manifest.t_total);
    for date in &manifest.dates {
        let path = dir.join("mobility").join(format!("{date}.csv"));
        let body = read_to_string(&path)?;
        let mut data = Vec::with_capacity(n * n);
        let mut r = 0;
        for line in body.lines().filter(|l| !l.is_empty()) {
            let row: Vec<f64> = line.split(',').map(|f| parse_value(f, &path)).collect::<Result<_>>()?;
            if row.len() != n {
                return Err(format_err(format!("{}: row {r} has {} columns, expected {n}", path.display(), row.len())));
            }
            data.extend(row);
            r += 1;
        }
        if r != n {
            return Err(format_err(format!("{}: {r} rows, expected {n}", path.display())));
        }
        mobility.push(Matrix::from_vec(n, n, data)?);
    }
    CountryDataset::new(manifest.country, manifest.regions, manifest.dates, cases, mobility)
}
