use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use mfou::covariance::{ccf_asymptotic, ccf_exact_lags, ccf_zero, Accuracy};
use mfou::estimator::{
    levels_kv, mde_estimate, mde_estimate_asymptotic, mde_estimate_pairwise, EstimateOptions, EstimateResult,
};
use mfou::ingest::{ingest_rv, summarize_panel, summary_csv, RawRvTable};
use mfou::manifest::{config_of, RunManifest};
use mfou::montecarlo::{run_mc, McScenario};
use mfou::panel::PathPanel;
use mfou::simulator::{simulate_mfou, SimConfig};
use mfou::spillover::spillover_from_params;
use mfou::{KvDoc, ModelParams};

#[derive(Parser)]
#[command(name = "mfou", version, about = "Multivariate fractional Ornstein-Uhlenbeck volatility toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration document (or a previous run's manifest).
    #[arg(long, global = true, env = "MFOU_CONFIG")]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set sim.seed=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel from `params.*` and `sim.*`.
    Simulate,
    /// Exact-formula minimum-distance estimate.
    Estimate(EstimateArgs),
    /// Small-alpha estimate with free lag-zero levels.
    EstimateAsym(EstimateArgs),
    /// Monte Carlo replication study.
    Mc,
    /// Exact and small-alpha cross-covariances on the lag grid `0..=cov.k_max`.
    Cov,
    /// Causal-model spillover indices from `params.*` or from a panel.
    Spillover {
        /// Estimate the causal model on this panel first.
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Realized-variance CSV to a log-volatility panel.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated symbols; all by default.
        #[arg(long, value_delimiter = ',')]
        symbols: Vec<String>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    /// Per-series statistics of a panel.
    Summarize {
        #[arg(long)]
        panel: PathBuf,
    },
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Univariate fits plus per-pair correlations instead of the joint fit.
    #[arg(long)]
    pairwise: bool,
    /// Tie each asymmetry coefficient to the causal value.
    #[arg(long)]
    causal: bool,
}

fn load_config(common: &Common) -> anyhow::Result<KvDoc> {
    let mut doc = match &common.config {
        Some(p) => KvDoc::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => KvDoc::new(),
    };
    doc = config_of(&doc);
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| mfou::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        doc.set(k.trim(), v.trim());
    }
    Ok(doc)
}

fn panel_a() -> ModelParams {
    ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.0)
}

fn params_from(cfg: &KvDoc) -> anyhow::Result<ModelParams> {
    let sec = cfg.section("params");
    Ok(if sec.is_empty() { panel_a() } else { ModelParams::from_kv(&sec)? })
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn write(&mut self, name: &str, text: &str) -> anyhow::Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.add_artifact(&path)?;
        Ok(path)
    }

    fn write_panel(&mut self, name: &str, panel: &PathPanel) -> anyhow::Result<()> {
        let path = self.out.join(name);
        panel.write_csv(&path)?;
        self.manifest.add_artifact(&path)?;
        let side = mfou::panel::meta_path(&path);
        if side.exists() {
            self.manifest.add_artifact(side)?;
        }
        Ok(())
    }

    fn write_estimate(&mut self, r: &EstimateResult, opts: &EstimateOptions) -> anyhow::Result<()> {
        self.write("theta.txt", &r.theta_hat.to_kv().to_string())?;
        self.write("theta.csv", &r.theta_hat.to_csv())?;
        if let Some(lv) = &r.levels {
            self.write("levels.txt", &levels_kv(lv).to_string())?;
        }
        self.write("residuals.csv", &r.residuals_csv()?)?;
        let mut diag = r.diagnostics_kv();
        for (k, v) in opts.to_kv().iter() {
            diag.set(&format!("options.{k}"), v);
        }
        for v in &r.coherency.violations {
            diag.set(&format!("violation.{}", v.constraint), v);
        }
        self.write("diagnostics.txt", &diag.to_string())?;
        Ok(())
    }
}

fn read_panel(run: &mut Run, path: &Path) -> anyhow::Result<PathPanel> {
    let panel = PathPanel::read_csv(path)?;
    run.manifest.add_input(path)?;
    Ok(panel)
}

fn estimate_options(cfg: &KvDoc, causal: bool) -> anyhow::Result<EstimateOptions> {
    let mut opts = EstimateOptions::from_kv(&cfg.section("estimate"))?;
    opts.causal |= causal;
    Ok(opts)
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = load_config(&cli.common)?;
    std::fs::create_dir_all(&cli.common.out).with_context(|| format!("creating {}", cli.common.out.display()))?;
    let name = match &cli.command {
        Command::Simulate => "simulate",
        Command::Estimate(_) => "estimate",
        Command::EstimateAsym(_) => "estimate-asym",
        Command::Mc => "mc",
        Command::Cov => "cov",
        Command::Spillover { .. } => "spillover",
        Command::Ingest { .. } => "ingest",
        Command::Summarize { .. } => "summarize",
    };
    let mut run = Run { out: cli.common.out.clone(), manifest: RunManifest::new(name, cfg.clone()) };

    match &cli.command {
        Command::Simulate => {
            let params = params_from(&cfg)?;
            let sim = SimConfig::from_kv(&cfg.section("sim"))?;
            run.manifest.seeds.push(sim.seed);
            let panel = simulate_mfou(&params, &sim)?;
            run.write_panel("panel.csv", &panel)?;
        }
        Command::Estimate(a) | Command::EstimateAsym(a) => {
            let panel = read_panel(&mut run, &a.panel)?;
            let opts = estimate_options(&cfg, a.causal)?;
            let asym = matches!(cli.command, Command::EstimateAsym(_));
            let result = match (asym, a.pairwise) {
                (true, true) => bail!(mfou::Error::Config("--pairwise applies to the exact estimator only".into())),
                (true, false) => mde_estimate_asymptotic(&panel, &opts)?,
                (false, true) => mde_estimate_pairwise(&panel, &opts)?,
                (false, false) => mde_estimate(&panel, &opts)?,
            };
            run.write_estimate(&result, &opts)?;
        }
        Command::Mc => {
            let mut doc = cfg.clone();
            if doc.section("params").is_empty() {
                for (k, v) in panel_a().to_kv().iter() {
                    doc.set(&format!("params.{k}"), v);
                }
            }
            let scenario = McScenario::from_kv(&doc)?;
            run.manifest.seeds.push(scenario.master_seed);
            let report = run_mc(&scenario)?;
            run.write("mc_table.csv", &report.to_csv()?)?;
            run.write("mc_standardized.csv", &report.standardized_csv()?)?;
            let grid: Vec<f64> = (0..=160).map(|k| -4.0 + 0.05 * k as f64).collect();
            run.write("mc_density.csv", &report.density_csv(&grid)?)?;
            let mut summary = KvDoc::new();
            summary.set("replications", report.converged.len());
            summary.set("used", report.used.len());
            summary.set("nonconverged", report.nonconverged());
            run.write("mc_summary.txt", &summary.to_string())?;
        }
        Command::Cov => {
            let params = params_from(&cfg)?;
            let sec = cfg.section("cov");
            let k_max = sec.get_u64("k_max")?.unwrap_or(50);
            let delta = sec.get_f64("delta")?.unwrap_or(1.0 / 252.0);
            let accuracy: Accuracy = sec.get("accuracy").unwrap_or("default").parse()?;
            let ks: Vec<f64> = (0..=k_max).map(|k| k as f64 * delta).collect();
            let n = params.n();
            let mut header = vec!["k".to_string(), "t".to_string()];
            let mut cols = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    header.push(format!("gamma.{}.{}", i + 1, j + 1));
                    cols.push(ccf_exact_lags(i, j, &ks, &params, accuracy)?);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    header.push(format!("asym.{}.{}", i + 1, j + 1));
                    let c0 = ccf_zero(i, j, &params)?;
                    cols.push(ks.iter().map(|&t| ccf_asymptotic(i, j, t, c0, &params)).collect::<mfou::Result<_>>()?);
                }
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header)?;
            for (k, t) in ks.iter().enumerate() {
                let mut rec = vec![k.to_string(), t.to_string()];
                rec.extend(cols.iter().map(|c| c[k].to_string()));
                w.write_record(&rec)?;
            }
            let text = String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?;
            run.write("cov.csv", &text)?;
        }
        Command::Spillover { panel } => {
            let (params, names) = match panel {
                Some(path) => {
                    let panel = read_panel(&mut run, path)?;
                    let opts = estimate_options(&cfg, true)?;
                    let result = mde_estimate(&panel, &opts)?;
                    run.write_estimate(&result, &opts)?;
                    (result.theta_hat, panel.names.clone())
                }
                None => {
                    let p = params_from(&cfg)?;
                    let names = (1..=p.n()).map(|i| format!("y{i}")).collect();
                    (p, names)
                }
            };
            let table = spillover_from_params(&params.hurst, &params.rho)?;
            let n = params.n();
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["series".to_string()];
            header.extend(names.iter().cloned());
            w.write_record(&header)?;
            for i in 0..n {
                let mut rec = vec![names[i].clone()];
                rec.extend((0..n).map(|j| table.psi_tilde[(i, j)].to_string()));
                w.write_record(&rec)?;
            }
            run.write("psi.csv", &String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)?;

            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["series", "received", "transmitted", "net"])?;
            for i in 0..n {
                w.write_record([
                    names[i].clone(),
                    table.received[i].to_string(),
                    table.transmitted[i].to_string(),
                    table.net[i].to_string(),
                ])?;
            }
            w.write_record(["total".to_string(), table.total.to_string(), table.total.to_string(), "0".to_string()])?;
            run.write("spillover_indices.csv", &String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)?;

            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["i", "j", "S_ij"])?;
            for (i, j, s) in table.edge_list() {
                w.write_record([names[i].clone(), names[j].clone(), s.to_string()])?;
            }
            run.write("net_pairwise_edges.csv", &String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)?;
        }
        Command::Ingest { input, symbols, from, to } => {
            let raw = RawRvTable::read_csv(input)?;
            run.manifest.add_input(input)?;
            let selection = if symbols.is_empty() { raw.symbols() } else { symbols.clone() };
            let date = |s: &Option<String>, default: chrono::NaiveDate| -> anyhow::Result<chrono::NaiveDate> {
                match s {
                    Some(s) => chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                        .map_err(|_| mfou::Error::Config(format!("bad date `{s}`")).into()),
                    None => Ok(default),
                }
            };
            let range = if from.is_some() || to.is_some() {
                Some((date(from, chrono::NaiveDate::MIN)?, date(to, chrono::NaiveDate::MAX)?))
            } else {
                None
            };
            let panel = ingest_rv(&raw, &selection, range)?;
            run.write_panel("panel.csv", &panel)?;
        }
        Command::Summarize { panel } => {
            let panel = read_panel(&mut run, panel)?;
            run.write("summary.csv", &summary_csv(&summarize_panel(&panel)?)?)?;
        }
    }

    run.manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    run.manifest.save(run.out.join("manifest.txt"))?;
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<mfou::Error>().map(mfou::Error::kind))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<std::io::Error>().map(|_| "io")))
        .unwrap_or("other")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let mut record = KvDoc::new();
            record.set("error.kind", error_kind(&err));
            record.set("error.message", format!("{err:#}").replace('\n', " "));
            eprint!("{record}");
            ExitCode::from(1)
        }
    }
}
