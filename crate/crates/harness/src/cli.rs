//! The `kcl` command line.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kcl_core::metrics::{fit_exponential_rate, w2_empirical, W2Method, WindowPolicy};
use kcl_core::particles::{observer_registry, simulate, DecayCurve, ParticleState};
use kcl_core::registry::Params;
use kcl_core::rng::{tags, NoiseStream};
use kcl_core::vlasov::{free_energy, stationary_fixed_point};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentId};
use crate::error::{HarnessError, Result, StageExt};
use crate::experiments::{
    free_energy_decay, gibbs_invariance, num, parallel_sweep, run_certify, run_experiment,
    seed_for, sync_sweep, Summary,
};
use crate::output::{Manifest, OutDir, Plot, Series, FAILED_MARKER, MANIFEST_FILE, SUMMARY_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "kcl",
    version,
    about = "Mean-field kinetic Langevin experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every run.
#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// TOML experiment config; the subcommand's preset when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run even when the certificate fails.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the assumptions and print the certificate as JSON.
    Certify(Common),
    /// Simulate one system and record moments.
    Simulate(Common),
    /// Sample the Gibbs measure and test its invariance under the dynamics.
    Gibbs(Common),
    /// Synchronous coupling for every N of the config.
    CoupleSync(Common),
    /// Parallel coupling against the grid solution for every N of the config.
    CoupleParallel(Common),
    /// Stationary fixed point on the grid.
    FixedPoint(Common),
    /// Grid solver with free-energy diagnostics.
    Pde(Common),
    /// W2 between two point clouds, or a rate fit of a curve.
    Metrics(MetricsArgs),
    /// Run a full experiment.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Experiment to run from its preset when no config is given.
        #[arg(long)]
        experiment: Option<String>,
    },
    /// Tabulate the summaries under an output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Point cloud CSV, one point per row.
    #[arg(long, requires = "b")]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, default_value = "exact")]
    pub method: String,
    /// Curve CSV with columns `t`, `value` and `stderr`.
    #[arg(long, conflicts_with = "a")]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub t_lo: Option<f64>,
    #[arg(long)]
    pub t_hi: Option<f64>,
}

fn load_config(common: &Common, default: ExperimentId) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(default),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(HarnessError::io("<stdout>", e))
        }
        _ => Ok(()),
    }
}

/// Output directory of a single-operation subcommand, with its manifest.
fn op_dir(cfg: &ExperimentConfig, name: &str, args: &[String]) -> Result<OutDir> {
    let dir = OutDir::new(cfg.out_dir.join(name))?;
    dir.write_json(MANIFEST_FILE, &Manifest::new(cfg, args)?)?;
    Ok(dir)
}

fn require_certificate(cfg: &ExperimentConfig, dir: &OutDir, force: bool) -> Result<()> {
    let report = run_certify(cfg)?;
    dir.write_json("certificate.json", &report)?;
    if !report.pass && !force {
        let failed: Vec<&str> = report
            .pass_flags
            .iter()
            .filter(|(_, v)| !**v)
            .map(|(k, _)| k.as_str())
            .collect();
        return Err(HarnessError::Certificate(failed.join(", ")));
    }
    Ok(())
}

/// Runs `body`, leaving a `FAILED` marker in `dir` when it errors.
fn marked<T>(dir: &OutDir, body: impl FnOnce() -> Result<T>) -> Result<T> {
    let r = body();
    if let Err(e) = &r {
        let _ = dir.write(FAILED_MARKER, format!("{e}\n"));
    }
    r
}

pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    match cli.command {
        Command::Certify(c) => {
            let cfg = load_config(&c, ExperimentId::Certify)?;
            let dir = op_dir(&cfg, "certify", args)?;
            let report = marked(&dir, || run_certify(&cfg))?;
            dir.write_json("certificate.json", &report)?;
            print_json(&report)
        }
        Command::Simulate(c) => {
            let cfg = load_config(&c, ExperimentId::E6_moment_uniformity)?;
            let dir = op_dir(&cfg, "simulate", args)?;
            marked(&dir, || simulate_cmd(&cfg, &dir))
        }
        Command::Gibbs(c) => {
            let mut cfg = load_config(&c, ExperimentId::E6_moment_uniformity)?;
            if c.config.is_none() {
                cfg.run.n_list = vec![4096];
                cfg.dynamics.t_end = 10.0;
            }
            let dir = op_dir(&cfg, "gibbs", args)?;
            let n = *cfg.run.n_list.last().unwrap();
            let r = marked(&dir, || gibbs_invariance(&cfg, n))?;
            dir.write_json("gibbs_invariance.json", &r)?;
            print_json(&r)
        }
        Command::CoupleSync(c) => {
            let cfg = load_config(&c, ExperimentId::E1_rate_independence)?;
            let dir = op_dir(&cfg, "couple-sync", args)?;
            let rows = marked(&dir, || {
                require_certificate(&cfg, &dir, c.force)?;
                sync_sweep(&cfg, &dir)
            })?;
            let out: Vec<_> = rows
                .iter()
                .map(
                    |(n, _, f)| json!({"n": n, "rate": num(f.rate), "r_squared": num(f.r_squared)}),
                )
                .collect();
            print_json(&out)
        }
        Command::CoupleParallel(c) => {
            let cfg = load_config(&c, ExperimentId::E2_chaos_scaling)?;
            let dir = op_dir(&cfg, "couple-parallel", args)?;
            let rows = marked(&dir, || {
                require_certificate(&cfg, &dir, c.force)?;
                parallel_sweep(&cfg, &dir)
            })?;
            let out: Vec<_> = rows
                .iter()
                .map(|(n, v, se)| json!({"n": n, "mean_sq_distance": num(*v), "stderr": num(*se)}))
                .collect();
            print_json(&out)
        }
        Command::FixedPoint(c) => {
            let cfg = load_config(&c, ExperimentId::E3_empirical_rate)?;
            let dir = op_dir(&cfg, "fixed-point", args)?;
            marked(&dir, || fixed_point_cmd(&cfg, &dir))
        }
        Command::Pde(c) => {
            let cfg = load_config(&c, ExperimentId::E4_pde_vs_particles)?;
            let dir = op_dir(&cfg, "pde", args)?;
            let report = marked(&dir, || free_energy_decay(&cfg, Some(&dir)))?;
            let brief = json!({
                "dt": report.dt,
                "minimizer_free_energy": report.minimizer_free_energy,
                "max_increase": num(report.max_increase),
                "monotone": report.monotone,
                "rate": report.rate,
                "pass": report.pass,
            });
            dir.write_json("pde.json", &brief)?;
            print_json(&brief)
        }
        Command::Metrics(m) => metrics_cmd(&m),
        Command::Sweep { common, experiment } => {
            let cfg = match (&common.config, &experiment) {
                (Some(_), _) => load_config(&common, ExperimentId::Certify)?,
                (None, Some(e)) => {
                    let id = ExperimentId::parse(e).ok_or_else(|| {
                        HarnessError::config("experiment", format!("unknown experiment `{e}`"))
                    })?;
                    load_config(&common, id)?
                }
                (None, None) => {
                    return Err(HarnessError::config(
                        "config",
                        "give --config or --experiment",
                    ))
                }
            };
            let s = run_experiment(&cfg, &cfg.out_dir, common.force, args)?;
            print_json(&s)
        }
        Command::Report { out } => {
            let text = report(&out)?;
            std::fs::write(out.join("report.md"), &text)
                .map_err(|e| HarnessError::io(out.join("report.md"), e))?;
            match write!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(HarnessError::io("<stdout>", e))
                }
                _ => Ok(()),
            }
        }
    }
}

fn simulate_cmd(cfg: &ExperimentConfig, dir: &OutDir) -> Result<()> {
    let spec = cfg.spec()?;
    let n = cfg.run.n_list[0];
    let seed = seed_for(cfg.seed, cfg.experiment, n);
    let init = ParticleState::sample_gaussian(
        n,
        spec.dim,
        &cfg.init,
        &NoiseStream::new(seed, &[tags::INITIAL, 0]),
    )
    .stage("initial state")?;
    let observers = vec![
        observer_registry().create("moments", &Params::new())?,
        observer_registry().create("lyapunov", &Params::new())?,
    ];
    let out = simulate(
        &init,
        &cfg.sim_params(seed),
        &spec,
        cfg.dynamics.t_end,
        &observers,
        cfg.run.stride,
    )
    .stage("simulate")?;
    dir.write_with("observations.csv", |w| {
        kcl_core::particles::write_records_csv(w, &out.records)
    })?;
    out.state
        .save(&dir.file("final_state.bin"))
        .stage("save state")?;
    let mut plot = Plot::new(format!("moments, N={n}"), "t", "value");
    for stat in ["x2", "y2", "z2"] {
        let c = DecayCurve::from_records(stat, &out.records).stage("moments")?;
        plot = plot.with(Series::new(stat, &c.times, &c.values));
    }
    plot.save(dir, "moments.svg")?;
    let last: Vec<_> = out
        .records
        .iter()
        .filter(|r| r.t == out.state.time)
        .map(|r| json!({"statistic": r.statistic, "value": num(r.value), "stderr": num(r.stderr)}))
        .collect();
    print_json(&json!({"n": n, "t": out.state.time, "final": last}))
}

fn fixed_point_cmd(cfg: &ExperimentConfig, dir: &OutDir) -> Result<()> {
    let spec = cfg.spec()?;
    let beta = cfg.sim_params(0).beta();
    let grid = cfg.grid.grid(&spec, beta)?;
    let fp = stationary_fixed_point(&spec, beta, &grid, &cfg.grid.fixed_point)
        .stage("stationary_fixed_point")?;
    fp.density
        .save(&dir.file("fixed_point.bin"))
        .stage("save density")?;
    let mut csv = String::from("x,density\n");
    for (i, r) in fp.x_density.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", grid.x(i), r));
    }
    dir.write("x_density.csv", csv)?;
    let hist: Vec<f64> = fp.residual_history.clone();
    let its: Vec<f64> = (1..=hist.len()).map(|k| k as f64).collect();
    Plot::new("fixed-point residual", "iteration", "sup residual")
        .log_y()
        .with(Series::new("residual", &its, &hist))
        .save(dir, "residual.svg")?;
    let m = fp.density.moments();
    let out = json!({
        "grid": grid,
        "iterations": fp.iterations(),
        "final_residual": num(*hist.last().unwrap_or(&f64::NAN)),
        "moments": m,
        "free_energy": num(free_energy(&fp.density, &spec, beta).stage("free_energy")?),
    });
    dir.write_json("fixed_point.json", &out)?;
    print_json(&out)
}

fn numeric_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (k, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if k == 0 => header = fields.iter().map(|s| s.to_string()).collect(),
            Err(_) => {
                // Rows with text columns keep only the numeric fields of
                // a known header.
                if header.is_empty() {
                    return Err(HarnessError::config(
                        path.display().to_string(),
                        format!("line {}: not numeric", k + 1),
                    ));
                }
                rows.push(
                    fields
                        .iter()
                        .map(|s| s.parse::<f64>().unwrap_or(f64::NAN))
                        .collect(),
                );
            }
        }
    }
    Ok((header, rows))
}

fn metrics_cmd(m: &MetricsArgs) -> Result<()> {
    if let (Some(a), Some(b)) = (&m.a, &m.b) {
        let (_, ra) = numeric_rows(a)?;
        let (_, rb) = numeric_rows(b)?;
        let k = ra.first().map_or(0, Vec::len);
        if k == 0 || ra.iter().chain(&rb).any(|r| r.len() != k) {
            return Err(HarnessError::config(
                "metrics",
                "point clouds need rows of one common width",
            ));
        }
        let method = match m.method.as_str() {
            "exact" => W2Method::Exact,
            "sinkhorn" => W2Method::Sinkhorn,
            "sliced" => W2Method::Sliced,
            other => {
                return Err(HarnessError::config(
                    "method",
                    format!("unknown method `{other}` (exact, sinkhorn, sliced)"),
                ))
            }
        };
        let fa: Vec<f64> = ra.concat();
        let fb: Vec<f64> = rb.concat();
        let w = w2_empirical(&fa, &fb, k, method).stage("w2")?;
        return print_json(&json!({"w2": num(w), "method": m.method, "dim": k}));
    }
    let Some(path) = &m.curve else {
        return Err(HarnessError::config(
            "metrics",
            "give --a and --b, or --curve",
        ));
    };
    let (header, rows) = numeric_rows(path)?;
    let col = |name: &str, default: usize| header.iter().position(|h| h == name).unwrap_or(default);
    let (ct, cv) = (col("t", 0), col("value", 1));
    let cs = header.iter().position(|h| h == "stderr");
    let curve = DecayCurve {
        statistic: path.display().to_string(),
        times: rows.iter().map(|r| r[ct]).collect(),
        values: rows.iter().map(|r| r[cv]).collect(),
        std_errors: rows.iter().map(|r| cs.map_or(f64::NAN, |c| r[c])).collect(),
        n_replicas: 1,
    };
    let policy = WindowPolicy {
        t_lo: m.t_lo,
        t_hi: m.t_hi,
        ..WindowPolicy::default()
    };
    let fit = fit_exponential_rate(&curve, &policy).stage("fit_exponential_rate")?;
    print_json(&fit)
}

/// Markdown table of every `summary.json` under `out`.
pub fn report(out: &Path) -> Result<String> {
    let entries = std::fs::read_dir(out).map_err(|e| HarnessError::io(out, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut text = String::from("| run | status | criterion | values |\n|---|---|---|---|\n");
    for d in dirs {
        let name = d
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        if d.join(FAILED_MARKER).exists() {
            let why = std::fs::read_to_string(d.join(FAILED_MARKER)).unwrap_or_default();
            text.push_str(&format!("| {name} | FAILED | {} | |\n", why.trim()));
            continue;
        }
        let p = d.join(SUMMARY_FILE);
        if !p.exists() {
            continue;
        }
        let s = Summary::load(&p)?;
        let values: Vec<String> = s
            .metrics
            .iter()
            .filter(|(_, v)| v.is_number() || v.is_string())
            .map(|(k, v)| format!("{k} = {v}"))
            .collect();
        let status = if s.pass { "pass" } else { "fail" };
        text.push_str(&format!(
            "| {} | {status} | {} | {} |\n",
            s.experiment,
            s.criterion,
            values.join(", ")
        ));
    }
    Ok(text)
}
