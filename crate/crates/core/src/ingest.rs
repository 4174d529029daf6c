//! Realized-variance ingestion and panel summaries.
//!
//! Raw input is either wide (`date,SYM1,SYM2,...`) or long (`date,symbol,rv`).
//! Each present, positive `RV` becomes `log(100 √(252 RV))`; zero `RV` becomes a
//! missing value and is counted under `zeros.<symbol>` in the panel's metadata.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::kvdoc::KvDoc;
use crate::panel::{parse_date, PathPanel};

/// Annualized percent log-volatility of a daily realized variance.
pub fn log_volatility(rv: f64) -> f64 {
    (100.0 * (rv * 252.0).sqrt()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvRow {
    pub date: NaiveDate,
    pub symbol: String,
    /// `None` for an empty cell.
    pub rv: Option<f64>,
    /// 1-based line in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawRvTable {
    pub rows: Vec<RvRow>,
}

impl RawRvTable {
    /// Symbols in order of first appearance.
    pub fn symbols(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rows.iter().filter(|r| seen.insert(r.symbol.clone())).map(|r| r.symbol.clone()).collect()
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("date") || header.len() < 2 {
            return Err(Error::Data("RV file must start with a `date` column followed by data columns".into()));
        }
        let long = header.len() == 3 && header[1] == "symbol" && header[2] == "rv";
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            if rec.len() != header.len() {
                return Err(Error::Data(format!("line {line}: expected {} fields, got {}", header.len(), rec.len())));
            }
            let date = parse_date(&rec[0]).map_err(|e| Error::Data(format!("line {line}: {e}")))?;
            let cell = |c: &str, sym: &str| -> Result<Option<f64>> {
                if c.is_empty() {
                    return Ok(None);
                }
                c.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Data(format!("line {line}, `{sym}`: bad number `{c}`")))
            };
            if long {
                rows.push(RvRow { date, symbol: rec[1].to_string(), rv: cell(&rec[2], &rec[1])?, line });
            } else {
                for (c, sym) in header.iter().enumerate().skip(1) {
                    rows.push(RvRow { date, symbol: sym.clone(), rv: cell(&rec[c], sym)?, line });
                }
            }
        }
        Ok(RawRvTable { rows })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }
}

/// Builds the log-volatility panel of `selection` on the union of their dates
/// within `range` (inclusive).
pub fn ingest_rv(raw: &RawRvTable, selection: &[String], range: Option<(NaiveDate, NaiveDate)>) -> Result<PathPanel> {
    if selection.is_empty() {
        return Err(Error::Data("empty symbol selection".into()));
    }
    let available: BTreeSet<&str> = raw.rows.iter().map(|r| r.symbol.as_str()).collect();
    if let Some(s) = selection.iter().find(|s| !available.contains(s.as_str())) {
        return Err(Error::Data(format!("symbol `{s}` not in the input")));
    }
    let col: BTreeMap<&str, usize> = selection.iter().enumerate().map(|(c, s)| (s.as_str(), c)).collect();
    let in_range = |d: NaiveDate| range.map_or(true, |(a, b)| d >= a && d <= b);
    let mut cells: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut zeros = vec![0usize; selection.len()];
    for row in &raw.rows {
        let Some(&c) = col.get(row.symbol.as_str()) else { continue };
        if !in_range(row.date) {
            continue;
        }
        if let Some(rv) = row.rv {
            if rv < 0.0 || !rv.is_finite() {
                return Err(Error::Data(format!("line {}: invalid realized variance {rv} for `{}`", row.line, row.symbol)));
            }
        }
        if row.rv.is_some() && !seen.insert((row.date, c)) {
            return Err(Error::Data(format!("line {}: duplicate value for `{}` on {}", row.line, row.symbol, row.date)));
        }
        let slot = cells.entry(row.date).or_insert_with(|| vec![None; selection.len()]);
        match row.rv {
            Some(rv) if rv == 0.0 => zeros[c] += 1,
            Some(rv) => slot[c] = Some(log_volatility(rv)),
            None => {}
        }
    }
    if cells.is_empty() {
        return Err(Error::Data("no observations in the selected range".into()));
    }
    let dates: Vec<NaiveDate> = cells.keys().copied().collect();
    let mut values = vec![Vec::with_capacity(dates.len()); selection.len()];
    let mut missing = vec![Vec::with_capacity(dates.len()); selection.len()];
    for row in cells.values() {
        for c in 0..selection.len() {
            values[c].push(row[c].unwrap_or(f64::NAN));
            missing[c].push(row[c].is_none());
        }
    }
    let n = dates.len();
    let mut panel =
        PathPanel::with_mask(selection.to_vec(), (0..n).map(|t| t as f64).collect(), values, missing)?.with_dates(dates)?;
    let mut meta = KvDoc::new();
    meta.set("transform", "log(100*sqrt(252*rv))");
    for (c, s) in selection.iter().enumerate() {
        meta.set(&format!("zeros.{s}"), zeros[c]);
    }
    panel.meta = meta;
    Ok(panel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSummary {
    pub name: String,
    /// Masked observations, including zero-RV days.
    pub missing: usize,
    /// Zero-RV days (from the panel metadata).
    pub zeros: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub leading_missing: usize,
    pub trailing_missing: usize,
    pub longest_missing_run: usize,
}

/// Per-series statistics over non-missing values (sample SD with `n − 1`).
pub fn summarize_panel(panel: &PathPanel) -> Result<Vec<SeriesSummary>> {
    (0..panel.n_series())
        .map(|i| {
            let name = panel.names[i].clone();
            let mut xs: Vec<f64> = (0..panel.len()).filter_map(|t| panel.get(i, t)).collect();
            if xs.is_empty() {
                return Err(Error::Data(format!("series `{name}` is entirely missing")));
            }
            let n = xs.len() as f64;
            let mean = xs[0] + xs.iter().map(|x| x - xs[0]).sum::<f64>() / n;
            let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            xs.sort_by(f64::total_cmp);
            let m = xs.len();
            let median = if m % 2 == 1 { xs[m / 2] } else { 0.5 * (xs[m / 2 - 1] + xs[m / 2]) };
            let mask = &panel.missing[i];
            let leading_missing = mask.iter().take_while(|&&x| x).count();
            let trailing_missing = mask.iter().rev().take_while(|&&x| x).count();
            let longest_missing_run = mask
                .iter()
                .fold((0usize, 0usize), |(best, run), &x| if x { (best.max(run + 1), run + 1) } else { (best, 0) })
                .0;
            let zeros = panel.meta.get_u64(&format!("zeros.{name}"))?.unwrap_or(0) as usize;
            Ok(SeriesSummary {
                name,
                missing: panel.missing_count(i),
                zeros,
                mean,
                sd,
                min: xs[0],
                median,
                max: xs[m - 1],
                leading_missing,
                trailing_missing,
                longest_missing_run,
            })
        })
        .collect()
}

pub fn summary_csv(rows: &[SeriesSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "series", "missing", "zeros", "mean", "sd", "min", "median", "max", "leading_missing", "trailing_missing",
        "longest_missing_run",
    ])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.missing.to_string(),
            r.zeros.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.min.to_string(),
            r.median.to_string(),
            r.max.to_string(),
            r.leading_missing.to_string(),
            r.trailing_missing.to_string(),
            r.longest_missing_run.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
