//! Multivariate time series with a missing-value mask.
//!
//! CSV layout: first column `time` (simulated data) or `date` (ISO-8601,
//! ingested data), then one column per series. Missing cells are empty.
//! Provenance goes into a side-car `<file>.meta` key-value document.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::kvdoc::KvDoc;

#[derive(Debug, Clone, PartialEq)]
pub struct PathPanel {
    pub names: Vec<String>,
    /// Observation times; for dated panels the observation index.
    pub times: Vec<f64>,
    pub dates: Option<Vec<NaiveDate>>,
    /// `values[i][t]`; NaN wherever `missing[i][t]`.
    pub values: Vec<Vec<f64>>,
    pub missing: Vec<Vec<bool>>,
    pub meta: KvDoc,
}

impl PathPanel {
    /// Fully observed panel.
    pub fn new(names: Vec<String>, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let missing = values.iter().map(|s| vec![false; s.len()]).collect();
        Self::with_mask(names, times, values, missing)
    }

    pub fn with_mask(
        names: Vec<String>,
        times: Vec<f64>,
        mut values: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if names.len() != values.len() || names.len() != missing.len() {
            return Err(Error::Dimension(format!(
                "{} names, {} value rows, {} mask rows",
                names.len(),
                values.len(),
                missing.len()
            )));
        }
        if names.is_empty() {
            return Err(Error::Dimension("panel needs at least one series".into()));
        }
        for (s, m) in values.iter().zip(&missing) {
            if s.len() != times.len() || m.len() != times.len() {
                return Err(Error::Dimension(format!(
                    "series length {} / mask length {} differ from {} times",
                    s.len(),
                    m.len(),
                    times.len()
                )));
            }
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("times must be strictly increasing".into()));
        }
        for (s, m) in values.iter_mut().zip(&missing) {
            for (v, &gone) in s.iter_mut().zip(m) {
                if gone {
                    *v = f64::NAN;
                }
            }
        }
        Ok(PathPanel { names, times, dates: None, values, missing, meta: KvDoc::new() })
    }

    /// Attaches a date index; times become `0, 1, 2, ...`.
    pub fn with_dates(mut self, dates: Vec<NaiveDate>) -> Result<Self> {
        if dates.len() != self.times.len() {
            return Err(Error::Dimension(format!("{} dates for {} observations", dates.len(), self.times.len())));
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        self.times = (0..dates.len()).map(|t| t as f64).collect();
        self.dates = Some(dates);
        Ok(self)
    }

    pub fn n_series(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        if self.missing[i][t] {
            None
        } else {
            Some(self.values[i][t])
        }
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|m| m.iter().any(|&x| x))
    }

    pub fn missing_count(&self, i: usize) -> usize {
        self.missing[i].iter().filter(|&&x| x).count()
    }

    /// Keeps only the listed series, in the given order.
    pub fn select(&self, which: &[usize]) -> Result<PathPanel> {
        if let Some(&bad) = which.iter().find(|&&i| i >= self.n_series()) {
            return Err(Error::Dimension(format!("series index {bad} out of range")));
        }
        Ok(PathPanel {
            names: which.iter().map(|&i| self.names[i].clone()).collect(),
            times: self.times.clone(),
            dates: self.dates.clone(),
            values: which.iter().map(|&i| self.values[i].clone()).collect(),
            missing: which.iter().map(|&i| self.missing[i].clone()).collect(),
            meta: self.meta.clone(),
        })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![if self.dates.is_some() { "date".to_string() } else { "time".to_string() }];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for t in 0..self.len() {
            row.clear();
            row.push(match &self.dates {
                Some(d) => d[t].format("%Y-%m-%d").to_string(),
                None => self.times[t].to_string(),
            });
            for i in 0..self.n_series() {
                row.push(self.get(i, t).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let first = header.get(0).unwrap_or("");
        let dated = match first {
            "date" => true,
            "time" => false,
            other => return Err(Error::Data(format!("first column must be `time` or `date`, got `{other}`"))),
        };
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::Data("panel CSV has no series columns".into()));
        }
        let mut times = Vec::new();
        let mut dates = Vec::new();
        let mut values = vec![Vec::new(); names.len()];
        let mut missing = vec![Vec::new(); names.len()];
        for (row_no, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = row_no + 2;
            if rec.len() != names.len() + 1 {
                return Err(Error::Data(format!("line {line}: expected {} fields, got {}", names.len() + 1, rec.len())));
            }
            if dated {
                dates.push(parse_date(&rec[0]).map_err(|e| Error::Data(format!("line {line}: {e}")))?);
            } else {
                times.push(rec[0].parse::<f64>().map_err(|_| Error::Data(format!("line {line}: bad time `{}`", &rec[0])))?);
            }
            for i in 0..names.len() {
                let cell = &rec[i + 1];
                if cell.is_empty() {
                    values[i].push(f64::NAN);
                    missing[i].push(true);
                } else {
                    let v = cell
                        .parse::<f64>()
                        .map_err(|_| Error::Data(format!("line {line}, column `{}`: bad number `{cell}`", names[i])))?;
                    values[i].push(v);
                    missing[i].push(false);
                }
            }
        }
        if dated {
            let n = dates.len();
            PathPanel::with_mask(names, (0..n).map(|t| t as f64).collect(), values, missing)?.with_dates(dates)
        } else {
            PathPanel::with_mask(names, times, values, missing)
        }
    }

    /// Writes the CSV and, when `meta` is non-empty, the side-car document.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()?)?;
        if !self.meta.is_empty() {
            self.meta.save(meta_path(path))?;
        }
        Ok(())
    }

    /// Reads the CSV and its side-car document if one exists.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let mut panel = Self::from_csv_str(&text)?;
        let side = meta_path(path);
        if side.exists() {
            panel.meta = KvDoc::load(side)?;
        }
        Ok(panel)
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub(crate) fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| format!("bad date `{s}`"))
}
