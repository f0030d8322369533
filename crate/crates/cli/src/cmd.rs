//! Subcommand implementations and the on-disk artifact layout.
//!
//! Everything lives under one output root:
//!
//! ```text
//! out/
//!   in_sample/manifest.json          simulate
//!   in_sample/traces/*.{csv,json}
//!   fits/{family}_{code}_{side}.json fit
//!   evaluate_{suite}.json            evaluate
//!   report_{suite}/{scenario}.csv    report
//! ```
//!
//! The manifest sits next to the trace directory rather than inside it;
//! `read_traces` treats any JSON without a matching CSV as a corrupt store.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gridtrip_core::calibrate::FittedParams;
use gridtrip_core::trip_models::{DerAParams, PiParams};
use gridtrip_core::{
    assemble_test_system, evaluate_models, fit_block, generate_suite, make_default_models,
    read_traces, run_suite, write_traces, CompositeModel, CoreError, FitResult, GridCode,
    ModelFamily, Side, SimulationTrace, SuiteKind, SuiteReport, FIT_DECIMATION,
};
use serde::{Deserialize, Serialize};

use crate::config::{Cli, Command, RunConfig, Settings};

pub fn run(cli: Cli) -> Result<(), CoreError> {
    init_thread_pool()?;
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { common, n_dg, seed } => {
            let s = Settings::resolve(&common, n_dg, seed, None, None, None, &cfg)?;
            simulate(&s)
        }
        Command::Fit { common, family, code, side } => {
            let s = Settings::resolve(&common, None, None, family, code, side, &cfg)?;
            fit(&s)
        }
        Command::Evaluate { common } => {
            let s = Settings::resolve(&common, None, None, None, None, None, &cfg)?;
            evaluate(&s)
        }
        Command::Report { common } => {
            let s = Settings::resolve(&common, None, None, None, None, None, &cfg)?;
            report(&s)
        }
    }
}

/// `GRIDTRIP_THREADS` caps the rayon pool; unset means one worker per core.
fn init_thread_pool() -> Result<(), CoreError> {
    let Ok(raw) = std::env::var("GRIDTRIP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CoreError::Config(format!("GRIDTRIP_THREADS must be a positive integer, got {raw:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CoreError::Config(format!("thread pool: {e}")))
}

fn suite_dir(out: &Path, suite: SuiteKind) -> PathBuf {
    out.join(suite.label())
}

fn traces_dir(out: &Path, suite: SuiteKind) -> PathBuf {
    suite_dir(out, suite).join("traces")
}

fn fits_dir(out: &Path) -> PathBuf {
    out.join("fits")
}

fn fit_file(out: &Path, family: ModelFamily, code: GridCode, side: Option<Side>) -> PathBuf {
    let side = side.map_or("both", Side::label);
    fits_dir(out).join(format!("{}_{}_{}.json", family.label(), code.label(), side))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| annotate_io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| annotate_io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CoreError> {
    let text = fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Plain `io::Error` drops the path, which makes "file not found" useless in
/// a multi-artifact pipeline.
fn annotate_io(path: &Path, e: std::io::Error) -> CoreError {
    CoreError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Provenance record written next to each simulated suite.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    suite: SuiteKind,
    n_dg: usize,
    system_seed: u64,
    n_buses: usize,
    n_inverters: usize,
    unit_counts: [usize; 3],
    shares: [f64; 3],
    total_pv_mw: f64,
    total_feeder_load_mw: f64,
    horizon: f64,
    dt: f64,
    scenarios: Vec<String>,
}

fn simulate(s: &Settings) -> Result<(), CoreError> {
    let started = Instant::now();
    let sys = assemble_test_system(s.n_dg, s.seed, &s.fixtures)?;
    let scenarios = generate_suite(s.suite, &sys);
    let traces = run_suite(&sys, &scenarios)?;
    write_traces(&traces_dir(&s.out, s.suite), &traces)?;

    let manifest = Manifest {
        suite: s.suite,
        n_dg: sys.n_dg,
        system_seed: sys.seed,
        n_buses: sys.network.n(),
        n_inverters: sys.units.len(),
        unit_counts: sys.unit_count_by_code(),
        shares: sys.shares,
        total_pv_mw: sys.total_pv_mw(),
        total_feeder_load_mw: sys.total_feeder_load_mw(),
        horizon: scenarios[0].horizon,
        dt: scenarios[0].dt,
        scenarios: scenarios.iter().map(|sc| sc.name.clone()).collect(),
    };
    write_json(&suite_dir(&s.out, s.suite).join("manifest.json"), &manifest)?;

    println!(
        "simulated {} {} scenarios ({} buses, {} inverters) in {:.1}s -> {}",
        traces.len(),
        s.suite.label(),
        manifest.n_buses,
        manifest.n_inverters,
        started.elapsed().as_secs_f64(),
        suite_dir(&s.out, s.suite).display(),
    );
    Ok(())
}

/// One calibration artifact; `side` is absent for the dwell-timer family,
/// which trains both voltage sides jointly.
#[derive(Debug, Serialize, Deserialize)]
struct FitRecord {
    family: ModelFamily,
    code: GridCode,
    side: Option<Side>,
    result: FitResult,
}

fn fit(s: &Settings) -> Result<(), CoreError> {
    let traces = read_traces(&traces_dir(&s.out, s.suite))?;
    let families = match s.family {
        Some(f) => vec![f],
        None => vec![ModelFamily::Pi, ModelFamily::DerA],
    };
    let codes = match s.code {
        Some(c) => vec![c],
        None => GridCode::ALL.to_vec(),
    };
    let sides = match s.side {
        Some(sd) => vec![sd],
        None => vec![Side::Under, Side::Over],
    };

    for &family in &families {
        for &code in &codes {
            let jobs: Vec<Option<Side>> = match family {
                ModelFamily::Pi => sides.iter().copied().map(Some).collect(),
                ModelFamily::DerA => vec![None],
            };
            for side in jobs {
                let result =
                    fit_block(&traces, family, code, side.unwrap_or(Side::Under), &s.swarm, FIT_DECIMATION)?;
                let path = fit_file(&s.out, family, code, side);
                println!(
                    "fit {} {} {}: objective {:.4e} after {} iterations ({:.1}s) -> {}",
                    family.label(),
                    code.label(),
                    side.map_or("both", Side::label),
                    result.objective,
                    result.iterations,
                    result.wall_secs,
                    path.display(),
                );
                write_json(&path, &FitRecord { family, code, side, result })?;
            }
        }
    }
    Ok(())
}

fn read_pi(out: &Path, code: GridCode, side: Side) -> Result<PiParams, CoreError> {
    let path = fit_file(out, ModelFamily::Pi, code, Some(side));
    let rec: FitRecord = read_json(&path)?;
    match rec.result.params {
        FittedParams::Pi(p) => Ok(p),
        FittedParams::DerA(_) => Err(CoreError::Config(format!(
            "{} holds a dwell-timer fit, expected a proportional-integral one",
            path.display()
        ))),
    }
}

fn read_dera(out: &Path, code: GridCode) -> Result<DerAParams, CoreError> {
    let path = fit_file(out, ModelFamily::DerA, code, None);
    let rec: FitRecord = read_json(&path)?;
    match rec.result.params {
        FittedParams::DerA(p) => Ok(p),
        FittedParams::Pi(_) => Err(CoreError::Config(format!(
            "{} holds a proportional-integral fit, expected a dwell-timer one",
            path.display()
        ))),
    }
}

/// Loads the nine fit artifacts and builds the two fitted composites.
fn load_fitted(out: &Path, shares: [f64; 3]) -> Result<[CompositeModel; 2], CoreError> {
    let under: [PiParams; 3] = [
        read_pi(out, GridCode::Inv2005, Side::Under)?,
        read_pi(out, GridCode::Inv2015, Side::Under)?,
        read_pi(out, GridCode::Inv2020, Side::Under)?,
    ];
    let over: [PiParams; 3] = [
        read_pi(out, GridCode::Inv2005, Side::Over)?,
        read_pi(out, GridCode::Inv2015, Side::Over)?,
        read_pi(out, GridCode::Inv2020, Side::Over)?,
    ];
    let dera: [DerAParams; 3] = [
        read_dera(out, GridCode::Inv2005)?,
        read_dera(out, GridCode::Inv2015)?,
        read_dera(out, GridCode::Inv2020)?,
    ];
    Ok([
        CompositeModel::from_dera("deraemo1_fitted", shares, dera),
        CompositeModel::from_pi("pi_fitted", shares, under, over),
    ])
}

/// Scoreboard order: library defaults first, then the two calibrated models.
fn scoreboard(traces: &[SimulationTrace], out: &Path) -> Result<Vec<CompositeModel>, CoreError> {
    let shares = traces
        .first()
        .ok_or_else(|| CoreError::config("no traces to evaluate"))?
        .meta
        .shares;
    let (dera_default, deraemo1_default) = make_default_models(shares);
    let [deraemo1_fitted, pi_fitted] = load_fitted(out, shares)?;
    Ok(vec![dera_default, deraemo1_default, deraemo1_fitted, pi_fitted])
}

fn evaluate(s: &Settings) -> Result<(), CoreError> {
    let traces = read_traces(&traces_dir(&s.out, s.suite))?;
    let models = scoreboard(&traces, &s.out)?;
    let report = evaluate_models(&traces, &models)?;

    let path = s.out.join(format!("evaluate_{}.json", s.suite.label()));
    write_json(&path, &report)?;
    print_scores(s.suite, &report);
    println!("-> {}", path.display());
    Ok(())
}

fn print_scores(suite: SuiteKind, report: &SuiteReport) {
    println!("{} suite, {} traces", suite.label(), report.n_traces);
    println!("{:<20} {:>12} {:>12}", "model", "under MAE %", "over MAE %");
    for s in &report.scores {
        let cell = |v: Option<f64>| match v {
            Some(v) => format!("{v:.3}"),
            None => "-".into(),
        };
        println!("{:<20} {:>12} {:>12}", s.model, cell(s.mae_under), cell(s.mae_over));
    }
}

fn report(s: &Settings) -> Result<(), CoreError> {
    let traces = read_traces(&traces_dir(&s.out, s.suite))?;
    let models = scoreboard(&traces, &s.out)?;
    let dir = s.out.join(format!("report_{}", s.suite.label()));
    fs::create_dir_all(&dir).map_err(|e| annotate_io(&dir, e))?;

    for tr in &traces {
        let dt = tr.meta.scenario.dt;
        let preds: Vec<Vec<f64>> =
            models.iter().map(|m| m.predict(&tr.v_ss_filt, dt).weighted).collect();

        let path = dir.join(format!("{}.csv", tr.meta.scenario.name));
        let mut w = csv::Writer::from_path(&path).map_err(CoreError::from)?;
        let mut header: Vec<String> =
            ["t", "v_ss_filt", "frac_2005", "frac_2015", "frac_2020", "frac_weighted"]
                .iter()
                .map(|c| c.to_string())
                .collect();
        header.extend(models.iter().map(|m| format!("pred_{}", m.name)));
        w.write_record(&header)?;
        for i in 0..tr.len() {
            let mut row = vec![
                tr.t[i],
                tr.v_ss_filt[i],
                tr.frac[0][i],
                tr.frac[1][i],
                tr.frac[2][i],
                tr.frac_weighted[i],
            ];
            row.extend(preds.iter().map(|p| p[i]));
            w.serialize(row)?;
        }
        w.flush().map_err(|e| annotate_io(&path, e))?;
    }
    println!("wrote {} report series -> {}", traces.len(), dir.display());
    Ok(())
}
