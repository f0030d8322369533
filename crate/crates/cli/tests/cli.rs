//! End-to-end runs of the `gridtrip` binary: the full artifact pipeline on a
//! one-feeder system, determinism of repeated simulation, and the exit-code
//! contract for bad inputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gridtrip(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gridtrip"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn list_files(dir: &Path, ext: &str) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap_or_else(|e| panic!("read {}: {e}", dir.display()))
        .map(|entry| entry.unwrap().file_name().into_string().unwrap())
        .filter(|name| name.ends_with(ext))
        .collect();
    names.sort();
    names
}

/// One pass over every subcommand against a single-feeder system, then a
/// repeat simulation to confirm the artifacts are byte-identical.
#[test]
fn pipeline_end_to_end_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    // Small swarm budget: the CLI contract under test is artifact plumbing,
    // not fit quality.
    let cfg_path = tmp.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"swarm": {"swarm_size": 16, "max_iters": 12}}"#).unwrap();
    let cfg_s = cfg_path.to_str().unwrap();

    let sim = gridtrip(
        &["simulate", "--out", out_s, "--n-dg", "1", "--seed", "3"],
        &[("GRIDTRIP_THREADS", "1")],
    );
    assert_ok(&sim, "simulate");

    let manifest_path = out.join("in_sample/manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["suite"], "in_sample");
    assert_eq!(manifest["n_dg"], 1);
    assert_eq!(manifest["system_seed"], 3);
    let n_scenarios = manifest["scenarios"].as_array().unwrap().len();
    assert!(n_scenarios >= 20, "full suite expected, got {n_scenarios}");
    assert_eq!(
        manifest["unit_counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .sum::<u64>(),
        manifest["n_inverters"].as_u64().unwrap(),
    );

    let traces = out.join("in_sample/traces");
    let csvs = list_files(&traces, ".csv");
    assert_eq!(csvs.len(), n_scenarios);
    assert_eq!(list_files(&traces, ".json").len(), n_scenarios);

    // Same flags, fresh tree: everything must come out byte-identical.
    let out2 = tmp.path().join("rerun");
    let sim2 = gridtrip(
        &["simulate", "--out", out2.to_str().unwrap(), "--n-dg", "1", "--seed", "3"],
        &[],
    );
    assert_ok(&sim2, "repeat simulate");
    assert_eq!(
        fs::read(&manifest_path).unwrap(),
        fs::read(out2.join("in_sample/manifest.json")).unwrap(),
        "manifest differs between identical runs",
    );
    for name in &csvs {
        assert_eq!(
            fs::read(traces.join(name)).unwrap(),
            fs::read(out2.join("in_sample/traces").join(name)).unwrap(),
            "trace {name} differs between identical runs",
        );
    }

    let fit = gridtrip(&["fit", "--out", out_s, "--config", cfg_s], &[]);
    assert_ok(&fit, "fit");
    let fit_names = list_files(&out.join("fits"), ".json");
    assert_eq!(
        fit_names,
        vec![
            "dera_inv2005_both.json",
            "dera_inv2015_both.json",
            "dera_inv2020_both.json",
            "pi_inv2005_over.json",
            "pi_inv2005_under.json",
            "pi_inv2015_over.json",
            "pi_inv2015_under.json",
            "pi_inv2020_over.json",
            "pi_inv2020_under.json",
        ],
    );
    let one: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(out.join("fits/pi_inv2020_under.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(one["family"], "pi");
    assert_eq!(one["side"], "under");
    assert!(one["result"]["objective"].as_f64().unwrap().is_finite());
    assert!(one["result"]["wall_secs"].as_f64().unwrap() > 0.0);

    let eval = gridtrip(&["evaluate", "--out", out_s], &[]);
    assert_ok(&eval, "evaluate");
    let table = String::from_utf8_lossy(&eval.stdout);
    for model in ["dera_default", "deraemo1_default", "deraemo1_fitted", "pi_fitted"] {
        assert!(table.contains(model), "missing {model} in table:\n{table}");
    }
    let report_json: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(out.join("evaluate_in_sample.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report_json["n_traces"], n_scenarios);
    assert_eq!(report_json["scores"].as_array().unwrap().len(), 4);

    let rep = gridtrip(&["report", "--out", out_s], &[]);
    assert_ok(&rep, "report");
    let series = list_files(&out.join("report_in_sample"), ".csv");
    assert_eq!(series.len(), n_scenarios);
    let body = fs::read_to_string(out.join("report_in_sample").join(&series[0])).unwrap();
    let header = body.lines().next().unwrap();
    assert_eq!(
        header,
        "t,v_ss_filt,frac_2005,frac_2015,frac_2020,frac_weighted,\
         pred_dera_default,pred_deraemo1_default,pred_deraemo1_fitted,pred_pi_fitted",
    );
    // Report rows align with the simulated trace length.
    let rows = body.lines().count() - 1;
    let a_trace = fs::read_to_string(traces.join(&series[0])).unwrap();
    assert_eq!(rows, a_trace.lines().count() - 1);
}

#[test]
fn missing_traces_exit_with_the_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridtrip(&["evaluate", "--out", tmp.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_config_exits_with_the_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("broken.json");
    fs::write(&cfg, "{ not json").unwrap();
    let out = gridtrip(
        &["simulate", "--out", tmp.path().to_str().unwrap(), "--config", cfg.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("typo.json");
    fs::write(&cfg, r#"{"swarm_sise": 10}"#).unwrap();
    let out = gridtrip(
        &["simulate", "--out", tmp.path().to_str().unwrap(), "--config", cfg.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_cap_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridtrip(
        &["simulate", "--out", tmp.path().to_str().unwrap()],
        &[("GRIDTRIP_THREADS", "lots")],
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_enum_values_are_usage_errors() {
    let out = gridtrip(&["fit", "--out", "x", "--code", "inv1999"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = gridtrip(&["simulate", "--out", "x", "--suite", "sideways"], &[]);
    assert_eq!(out.status.code(), Some(2));
}
