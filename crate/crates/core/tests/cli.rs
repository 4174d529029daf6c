use std::path::Path;
use std::process::{Command, Output};

use mfou::panel::PathPanel;
use mfou::{KvDoc, ModelParams};
use proptest::prelude::*;
use tempfile::TempDir;

const SIM: [&str; 6] = ["--set", "sim.delta_fine=1/504", "--set", "sim.warmup_horizon=24", "--set", "sim.seed=42"];

fn mfou(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfou"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MFOU_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = mfou(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn csv_rows(path: impl AsRef<Path>) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    (header, r.records().map(|x| x.unwrap()).collect())
}

#[test]
fn simulate_writes_a_daily_panel_and_a_manifest() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["simulate"];
    args.extend(SIM);
    ok(&args, dir.path());
    let (header, rows) = csv_rows(dir.path().join("panel.csv"));
    assert_eq!(header.iter().collect::<Vec<_>>(), ["time", "y1", "y2"]);
    assert_eq!(rows.len(), 5041);
    let manifest = KvDoc::load(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.get("manifest.command"), Some("simulate"));
    assert_eq!(manifest.get("manifest.seeds"), Some("42"));
    assert_eq!(manifest.get("config.sim.seed"), Some("42"));
}

#[test]
fn rerunning_from_a_manifest_reproduces_the_artifacts() {
    let first = TempDir::new().unwrap();
    let mut args = vec!["simulate", "--set", "sim.horizon=2"];
    args.extend(SIM);
    ok(&args, first.path());
    let second = TempDir::new().unwrap();
    let manifest = first.path().join("manifest.txt");
    ok(&["simulate", "--config", manifest.to_str().unwrap()], second.path());
    assert_eq!(read(first.path().join("panel.csv")), read(second.path().join("panel.csv")));
    let (a, b) = (KvDoc::load(&manifest).unwrap(), KvDoc::load(second.path().join("manifest.txt")).unwrap());
    assert_eq!(a.get("manifest.config_hash"), b.get("manifest.config_hash"));
    assert_eq!(a.get("manifest.artifact.1.sha256"), b.get("manifest.artifact.1.sha256"));
}

#[test]
fn cov_writes_exact_and_small_alpha_columns() {
    let dir = TempDir::new().unwrap();
    ok(&["cov", "--set", "cov.accuracy=fast"], dir.path());
    let (header, rows) = csv_rows(dir.path().join("cov.csv"));
    assert_eq!(rows.len(), 51);
    assert_eq!(header.len(), 2 + 8);
    assert_eq!(&header[2], "gamma.1.1");
    assert_eq!(&header[6], "asym.1.1");
    // Both columns share the lag-zero value.
    assert_eq!(rows[0][2], rows[0][6]);
    let g: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(g.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn estimate_output_reloads_to_the_reported_loss() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["simulate", "--set", "sim.horizon=10"];
    args.extend(SIM);
    ok(&args, dir.path());
    let panel = dir.path().join("panel.csv");
    let est = dir.path().join("est");
    ok(&["estimate", "--panel", panel.to_str().unwrap(), "--set", "estimate.accuracy=fast"], &est);
    let theta = ModelParams::from_kv(&KvDoc::load(est.join("theta.txt")).unwrap()).unwrap();
    assert_eq!(ModelParams::from_csv(&read(est.join("theta.csv"))).unwrap(), theta);
    let diag = KvDoc::load(est.join("diagnostics.txt")).unwrap();
    let loss = diag.require_f64("loss").unwrap();
    let opts = mfou::estimator::EstimateOptions::from_kv(&diag.section("options")).unwrap();
    let sample = mfou::estimator::SampleMoments::from_panel(&PathPanel::read_csv(&panel).unwrap(), &opts.lags).unwrap();
    let again = mfou::estimator::mde_loss(&theta, &sample, &opts).unwrap();
    assert!((again - loss).abs() <= 1e-9 * loss, "{again} vs {loss}");
    let (_, resid) = csv_rows(est.join("residuals.csv"));
    assert_eq!(resid.len(), 31);

    let asym = dir.path().join("asym");
    ok(&["estimate-asym", "--panel", panel.to_str().unwrap(), "--set", "estimate.accuracy=fast"], &asym);
    assert!(asym.join("levels.txt").exists());
}

#[test]
fn failures_report_a_kind_and_exit_code() {
    let dir = TempDir::new().unwrap();
    let o = mfou(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let missing = dir.path().join("nope.csv");
    let o = mfou(&["summarize", "--panel", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = KvDoc::parse(&String::from_utf8_lossy(&o.stderr)).unwrap();
    assert!(matches!(err.get("error.kind"), Some(k) if k != "other"), "{err:?}");
    let o = mfou(&["cov", "--set", "params.n=2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = mfou(&["simulate", "--set", "nonsense"], dir.path());
    let err = KvDoc::parse(&String::from_utf8_lossy(&o.stderr)).unwrap();
    assert_eq!(err.get("error.kind"), Some("config"));
}

#[test]
fn ingest_then_summarize() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("rv.csv");
    let mut text = String::from("date,AAA,BBB\n");
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    for d in 0..40 {
        let date = start + chrono::Days::new(d);
        let b = if d == 7 { String::new() } else { format!("{}", 2e-4 * (1.0 + (d % 5) as f64)) };
        text.push_str(&format!("{},{},{}\n", date.format("%Y-%m-%d"), 1e-4 * (1.0 + (d % 3) as f64), b));
    }
    std::fs::write(&input, text).unwrap();
    ok(&["ingest", "--input", input.to_str().unwrap(), "--symbols", "BBB,AAA", "--from", "2020-01-05"], dir.path());
    let panel = PathPanel::read_csv(dir.path().join("panel.csv")).unwrap();
    assert_eq!(panel.names, ["BBB", "AAA"]);
    assert_eq!(panel.len(), 36);
    assert_eq!(panel.missing_count(0), 1);
    ok(&["summarize", "--panel", dir.path().join("panel.csv").to_str().unwrap()], dir.path());
    let (header, rows) = csv_rows(dir.path().join("summary.csv"));
    assert!(header.iter().any(|h| h == "mean"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn spillover_from_parameters() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["spillover".to_string()];
    let keys = [
        ("n", "3"),
        ("alpha.1", "1"), ("alpha.2", "1"), ("alpha.3", "1"),
        ("nu.1", "1"), ("nu.2", "1"), ("nu.3", "1"),
        ("hurst.1", "0.1"), ("hurst.2", "0.3"), ("hurst.3", "0.6"),
        ("rho.1.2", "0.5"), ("rho.1.3", "0.2"), ("rho.2.3", "0.4"),
    ];
    for (k, v) in keys {
        args.push("--set".into());
        args.push(format!("params.{k}={v}"));
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args, dir.path());
    let (_, psi) = csv_rows(dir.path().join("psi.csv"));
    assert_eq!(psi.len(), 3);
    for row in &psi {
        let s: f64 = row.iter().skip(1).map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    let (_, idx) = csv_rows(dir.path().join("spillover_indices.csv"));
    assert_eq!(idx.len(), 4);
    assert_eq!(&idx[3][0], "total");
    assert!(dir.path().join("net_pairwise_edges.csv").exists());
}

#[test]
fn tiny_monte_carlo_run() {
    let dir = TempDir::new().unwrap();
    let args = [
        "mc",
        "--set", "mc.replications=4",
        "--set", "mc.seed=7",
        "--set", "sim.delta_fine=1/252",
        "--set", "sim.horizon=2",
        "--set", "sim.warmup_horizon=4",
        "--set", "estimate.accuracy=fast",
        "--set", "estimate.max_iter=20",
    ];
    ok(&args, dir.path());
    let (_, table) = csv_rows(dir.path().join("mc_table.csv"));
    assert_eq!(table.len(), 8);
    let (_, z) = csv_rows(dir.path().join("mc_standardized.csv"));
    assert_eq!(z.len(), 4);
    let (_, dens) = csv_rows(dir.path().join("mc_density.csv"));
    assert_eq!(dens.len(), 161);
    let again = TempDir::new().unwrap();
    ok(&args, again.path());
    assert_eq!(read(dir.path().join("mc_table.csv")), read(again.path().join("mc_table.csv")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn panel_csv_round_trips(values in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.9, -1e6f64..1e6), 5), 1..4)) {
        let n = values.len();
        let t = values[0].len();
        let names: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let times: Vec<f64> = (0..t).map(|k| k as f64 / 252.0).collect();
        let data: Vec<Vec<f64>> = values.iter().map(|s| s.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
        let mask: Vec<Vec<bool>> = values.iter().map(|s| s.iter().map(Option::is_none).collect()).collect();
        let panel = PathPanel::with_mask(names, times, data, mask).unwrap();
        let back = PathPanel::from_csv_str(&panel.to_csv_string().unwrap()).unwrap();
        prop_assert_eq!(&back.names, &panel.names);
        prop_assert_eq!(&back.times, &panel.times);
        prop_assert_eq!(&back.missing, &panel.missing);
        for i in 0..n {
            for k in 0..t {
                prop_assert_eq!(back.get(i, k), panel.get(i, k));
            }
        }
    }
}
