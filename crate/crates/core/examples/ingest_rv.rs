//! Realized variance in wide format to a log-volatility panel.

use mfou::ingest::{ingest_rv, summarize_panel, summary_csv, RawRvTable};

const DATA: &str = "\
date,SPX,FTSE
2021-01-04,1.2e-4,0.9e-4
2021-01-05,0.8e-4,
2021-01-06,1.5e-4,1.1e-4
2021-01-07,0,1.0e-4
2021-01-08,1.1e-4,0.7e-4
";

fn main() -> mfou::Result<()> {
    let raw = RawRvTable::from_csv_str(DATA)?;
    let panel = ingest_rv(&raw, &raw.symbols(), None)?;
    print!("{}", panel.to_csv_string()?);
    print!("{}", summary_csv(&summarize_panel(&panel)?)?);
    Ok(())
}
