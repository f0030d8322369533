//! Versioned JSON fixtures: the 9-bus transmission case (with machine and
//! exciter data) and the LV benchmark feeder replicated behind each
//! substation transformer. Embedded copies ship with the crate; callers can
//! also load modified fixtures from disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::machines::MachineParams;

const IEEE9_JSON: &str = include_str!("../fixtures/ieee9.json");
const CIGRE_FEEDER_JSON: &str = include_str!("../fixtures/cigre_lv_feeder.json");

pub const IEEE9_FIXTURE_NAME: &str = "ieee9.json";
pub const FEEDER_FIXTURE_NAME: &str = "cigre_lv_feeder.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransmissionFixture {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub note: String,
    pub base_mva: f64,
    pub f_hz: f64,
    pub buses: Vec<FixtureBus>,
    pub branches: Vec<FixtureBranch>,
    pub machines: Vec<MachineParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureBus {
    pub id: usize,
    pub kind: String,
    pub base_kv: f64,
    pub v_set: f64,
    pub p_gen: f64,
    pub p_load: f64,
    pub q_load: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureBranch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance (split evenly between the two ends).
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederFixture {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub note: String,
    pub v_base_kv: f64,
    pub s_base_mva: f64,
    /// Number of physical feeders lumped into one simulated feeder:
    /// powers scale up by this factor, impedances down.
    pub aggregation: f64,
    pub transformer: FeederTransformer,
    pub head_node: usize,
    pub nodes: Vec<FeederNode>,
    pub lines: Vec<FeederLine>,
    pub pv_nodes: Vec<usize>,
    pub pv_kw_per_node: f64,
    pub load_kw_per_node: f64,
    pub load_power_factor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederTransformer {
    pub r_pu: f64,
    /// Series reactance in per-unit on the aggregate feeder base
    /// (`s_base_mva * aggregation`).
    pub x_pu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederNode {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederLine {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

/// Both fixture files resolved, either embedded or from a directory.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub transmission: TransmissionFixture,
    pub feeder: FeederFixture,
}

impl FixtureSet {
    /// The fixtures compiled into the crate.
    pub fn embedded() -> Result<Self, CoreError> {
        let transmission = parse_transmission(IEEE9_JSON, "<embedded>/ieee9.json")?;
        let feeder = parse_feeder(CIGRE_FEEDER_JSON, "<embedded>/cigre_lv_feeder.json")?;
        Ok(FixtureSet { transmission, feeder })
    }

    /// Load `ieee9.json` and `cigre_lv_feeder.json` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self, CoreError> {
        let read = |name: &str| -> Result<String, CoreError> {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| CoreError::Fixture {
                name: path.display().to_string(),
                reason: e.to_string(),
            })
        };
        let transmission = parse_transmission(&read(IEEE9_FIXTURE_NAME)?, IEEE9_FIXTURE_NAME)?;
        let feeder = parse_feeder(&read(FEEDER_FIXTURE_NAME)?, FEEDER_FIXTURE_NAME)?;
        Ok(FixtureSet { transmission, feeder })
    }
}

fn parse_transmission(json: &str, name: &str) -> Result<TransmissionFixture, CoreError> {
    let fix: TransmissionFixture = serde_json::from_str(json).map_err(|e| CoreError::Fixture {
        name: name.into(),
        reason: e.to_string(),
    })?;
    validate_transmission(&fix).map_err(|reason| CoreError::Fixture { name: name.into(), reason })?;
    Ok(fix)
}

fn parse_feeder(json: &str, name: &str) -> Result<FeederFixture, CoreError> {
    let fix: FeederFixture = serde_json::from_str(json).map_err(|e| CoreError::Fixture {
        name: name.into(),
        reason: e.to_string(),
    })?;
    validate_feeder(&fix).map_err(|reason| CoreError::Fixture { name: name.into(), reason })?;
    Ok(fix)
}

fn validate_transmission(fix: &TransmissionFixture) -> Result<(), String> {
    if fix.base_mva <= 0.0 {
        return Err("base_mva must be positive".into());
    }
    let slack_count = fix.buses.iter().filter(|b| b.kind == "slack").count();
    if slack_count != 1 {
        return Err(format!("expected exactly one slack bus, found {slack_count}"));
    }
    for bus in &fix.buses {
        if !matches!(bus.kind.as_str(), "slack" | "pv" | "pq") {
            return Err(format!("bus {}: unknown kind `{}`", bus.id, bus.kind));
        }
    }
    let ids: Vec<usize> = fix.buses.iter().map(|b| b.id).collect();
    for br in &fix.branches {
        if !ids.contains(&br.from) || !ids.contains(&br.to) {
            return Err(format!("branch {}-{} references unknown bus", br.from, br.to));
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(format!("branch {}-{} has zero impedance", br.from, br.to));
        }
    }
    for m in &fix.machines {
        if !ids.contains(&m.bus) {
            return Err(format!("machine at unknown bus {}", m.bus));
        }
        if m.h <= 0.0 || m.xd_t <= 0.0 || m.xq_t <= 0.0 || m.td0_t <= 0.0 || m.tq0_t <= 0.0 {
            return Err(format!("machine at bus {}: non-positive dynamic constant", m.bus));
        }
    }
    Ok(())
}

fn validate_feeder(fix: &FeederFixture) -> Result<(), String> {
    if fix.aggregation < 1.0 {
        return Err("aggregation must be >= 1".into());
    }
    if fix.s_base_mva <= 0.0 || fix.v_base_kv <= 0.0 {
        return Err("feeder bases must be positive".into());
    }
    let ids: Vec<usize> = fix.nodes.iter().map(|n| n.id).collect();
    if !ids.contains(&fix.head_node) {
        return Err("head_node not in node list".into());
    }
    for line in &fix.lines {
        if !ids.contains(&line.from) || !ids.contains(&line.to) {
            return Err(format!("line {}-{} references unknown node", line.from, line.to));
        }
        if line.r_pu == 0.0 && line.x_pu == 0.0 {
            return Err(format!("line {}-{} has zero impedance", line.from, line.to));
        }
    }
    for pv in &fix.pv_nodes {
        if !ids.contains(pv) {
            return Err(format!("pv node {pv} not in node list"));
        }
        if *pv == fix.head_node {
            return Err("head node cannot host PV".into());
        }
    }
    // A radial feeder reaching every node: n nodes need n-1 lines.
    if fix.lines.len() + 1 != fix.nodes.len() {
        return Err(format!(
            "expected a radial feeder ({} nodes want {} lines, found {})",
            fix.nodes.len(),
            fix.nodes.len() - 1,
            fix.lines.len()
        ));
    }
    if !(0.0 < fix.load_power_factor && fix.load_power_factor <= 1.0) {
        return Err("load_power_factor must be in (0, 1]".into());
    }
    Ok(())
}
