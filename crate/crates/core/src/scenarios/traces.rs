//! Trace persistence. Each simulation writes a CSV of time series plus a
//! JSON sidecar carrying the scenario and system provenance, so a directory
//! of traces is self-describing and survives a round trip losslessly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::error::CoreError;
use crate::trip_models::GridCode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: Scenario,
    pub n_dg: usize,
    pub system_seed: u64,
    pub shares: [f64; 3],
    /// Inverter population per grid code, oldest first.
    pub unit_counts: [usize; 3],
}

/// One recorded co-simulation: substation voltage and the rated-weighted
/// active fraction of each grid-code population, sampled every `dt`
/// including the initial operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub meta: TraceMeta,
    pub t: Vec<f64>,
    pub v_ss_filt: Vec<f64>,
    pub frac: [Vec<f64>; 3],
    pub frac_weighted: Vec<f64>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

const COLUMNS: [&str; 6] =
    ["t", "v_ss_filt", "frac_2005", "frac_2015", "frac_2020", "frac_weighted"];

#[derive(Serialize, Deserialize)]
struct TraceRow {
    t: f64,
    v_ss_filt: f64,
    frac_2005: f64,
    frac_2015: f64,
    frac_2020: f64,
    frac_weighted: f64,
}

/// Write one CSV + JSON sidecar per trace into `dir`, keyed by scenario
/// name. Creates the directory if needed.
pub fn write_traces(dir: &Path, traces: &[SimulationTrace]) -> Result<(), CoreError> {
    fs::create_dir_all(dir)?;
    for tr in traces {
        let stem = &tr.meta.scenario.name;
        let json = serde_json::to_string_pretty(&tr.meta)?;
        fs::write(dir.join(format!("{stem}.json")), json)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        for i in 0..tr.len() {
            w.serialize(TraceRow {
                t: tr.t[i],
                v_ss_filt: tr.v_ss_filt[i],
                frac_2005: tr.frac[GridCode::Inv2005.index()][i],
                frac_2015: tr.frac[GridCode::Inv2015.index()][i],
                frac_2020: tr.frac[GridCode::Inv2020.index()][i],
                frac_weighted: tr.frac_weighted[i],
            })?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Load every trace in `dir`, sorted by scenario name. An empty or absent
/// batch of sidecars yields an empty vector rather than an error.
pub fn read_traces(dir: &Path) -> Result<Vec<SimulationTrace>, CoreError> {
    let mut stems: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    stems.iter().map(|stem| read_one(dir, stem)).collect()
}

fn read_one(dir: &Path, stem: &str) -> Result<SimulationTrace, CoreError> {
    let meta: TraceMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut r = csv::Reader::from_path(&csv_path)?;
    {
        let headers = r.headers()?;
        for col in COLUMNS {
            if !headers.iter().any(|h| h == col) {
                return Err(CoreError::config(format!(
                    "{}: missing column {col}",
                    csv_path.display()
                )));
            }
        }
    }
    let mut tr = SimulationTrace {
        meta,
        t: Vec::new(),
        v_ss_filt: Vec::new(),
        frac: [Vec::new(), Vec::new(), Vec::new()],
        frac_weighted: Vec::new(),
    };
    for row in r.deserialize() {
        let row: TraceRow = row?;
        tr.t.push(row.t);
        tr.v_ss_filt.push(row.v_ss_filt);
        tr.frac[GridCode::Inv2005.index()].push(row.frac_2005);
        tr.frac[GridCode::Inv2015.index()].push(row.frac_2015);
        tr.frac[GridCode::Inv2020.index()].push(row.frac_2020);
        tr.frac_weighted.push(row.frac_weighted);
    }
    if tr.is_empty() {
        return Err(CoreError::config(format!("{}: no samples", csv_path.display())));
    }
    Ok(tr)
}
