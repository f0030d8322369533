//! Disturbance suites and everything that consumes them: the co-simulation
//! driver, trace persistence, model evaluation, and the glue that turns
//! recorded traces into calibration inputs.

mod simulator;
mod traces;

pub use simulator::{no_disturbance_drift, run_cosimulation, run_suite, V_SS_FILTER};
pub use traces::{read_traces, write_traces, SimulationTrace, TraceMeta};

use serde::{Deserialize, Serialize};

use crate::calibrate::{self, FitLayout, FitProblem, FitResult, FitTrace, SwarmConfig};
use crate::error::CoreError;
use crate::network::{DisturbanceEvent, TestSystem};
use crate::trip_models::{CompositeModel, GridCode, ModelFamily, Side};

pub const DEFAULT_HORIZON: f64 = 5.0;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DISTURBANCE_START: f64 = 0.5;

/// Default decimation of recorded traces when used as calibration inputs.
/// The blocks are step-size robust, so fitting on every fifth sample buys a
/// large speedup at negligible cost in the recovered parameters.
pub const FIT_DECIMATION: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    InSample,
    OutOfSample,
}

impl SuiteKind {
    pub fn label(self) -> &'static str {
        match self {
            SuiteKind::InSample => "in_sample",
            SuiteKind::OutOfSample => "out_of_sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: SuiteKind,
    /// Which voltage side the disturbance is designed to exercise; used to
    /// group traces for per-side fitting and scoring.
    pub side: Side,
    pub disturbance: DisturbanceEvent,
    pub horizon: f64,
    pub dt: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), CoreError> {
        self.disturbance.validate()?;
        if self.dt <= 0.0 {
            return Err(CoreError::config(format!("scenario {}: dt must be positive", self.name)));
        }
        let end = self.disturbance.t_clear.unwrap_or(self.disturbance.t_start);
        if self.horizon <= end {
            return Err(CoreError::config(format!(
                "scenario {}: horizon {} does not cover the disturbance",
                self.name, self.horizon
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Reactive-to-active ratio of injection steps per suite.
pub fn step_ratio(kind: SuiteKind) -> f64 {
    match kind {
        SuiteKind::InSample => 2.0,
        SuiteKind::OutOfSample => 0.8,
    }
}

/// Fault duration per suite, s.
pub fn fault_duration(kind: SuiteKind) -> f64 {
    match kind {
        SuiteKind::InSample => 0.060,
        SuiteKind::OutOfSample => 0.120,
    }
}

/// Sustained active-power step magnitudes, pu on the system base. Reactive
/// power follows from the suite ratio. Negative steps are load-like and sag
/// the voltage; positive steps push it up.
fn under_step_magnitudes(kind: SuiteKind) -> [f64; 6] {
    match kind {
        SuiteKind::InSample => [-0.15, -0.23, -0.31, -0.39, -0.47, -0.55],
        SuiteKind::OutOfSample => [-0.30, -0.48, -0.66, -0.84, -1.02, -1.20],
    }
}

fn over_step_magnitudes(kind: SuiteKind) -> [f64; 6] {
    match kind {
        SuiteKind::InSample => [0.10, 0.20, 0.30, 0.40, 0.50, 0.60],
        SuiteKind::OutOfSample => [0.40, 0.62, 0.84, 1.06, 1.28, 1.50],
    }
}

/// Strong capacitive surges standing in for the over-voltage counterpart of
/// the fault sweep; a shunt fault can only depress the voltage.
fn over_surge_magnitudes(kind: SuiteKind) -> [f64; 5] {
    match kind {
        SuiteKind::InSample => [0.65, 0.78, 0.90, 1.02, 1.15],
        SuiteKind::OutOfSample => [1.40, 1.60, 1.80, 2.00, 2.20],
    }
}

/// Fault conductance sweep, pu on the system base. The deepest entries push
/// the feeder voltage under the momentary-cessation band of the newest code.
fn fault_conductances() -> [f64; 5] {
    [2.0, 4.0, 8.0, 20.0, 80.0]
}

/// Build the full disturbance suite at the system's coupling bus: six
/// sustained injection steps plus five short faults on the under-voltage
/// side, and six steps plus five stronger surges on the over-voltage side.
pub fn generate_suite(kind: SuiteKind, sys: &TestSystem) -> Vec<Scenario> {
    let bus = sys.coupling_bus;
    let ratio = step_ratio(kind);
    let mut out = Vec::with_capacity(22);

    let step_scenario = |name: String, side: Side, dp: f64| -> Scenario {
        let dq = ratio * dp;
        Scenario {
            name,
            kind,
            side,
            disturbance: DisturbanceEvent::injection_step(bus, dp, dq, DISTURBANCE_START)
                .expect("step event is valid by construction"),
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
        }
    };

    for (i, &dp) in under_step_magnitudes(kind).iter().enumerate() {
        out.push(step_scenario(
            format!("{}_under_step{}", kind.label(), i + 1),
            Side::Under,
            dp,
        ));
    }
    let t_clear = DISTURBANCE_START + fault_duration(kind);
    for (i, &g) in fault_conductances().iter().enumerate() {
        out.push(Scenario {
            name: format!("{}_under_fault{}", kind.label(), i + 1),
            kind,
            side: Side::Under,
            disturbance: DisturbanceEvent::fault(bus, g, DISTURBANCE_START, t_clear)
                .expect("fault event is valid by construction"),
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
        });
    }
    for (i, &dp) in over_step_magnitudes(kind).iter().enumerate() {
        out.push(step_scenario(
            format!("{}_over_step{}", kind.label(), i + 1),
            Side::Over,
            dp,
        ));
    }
    for (i, &dp) in over_surge_magnitudes(kind).iter().enumerate() {
        out.push(step_scenario(
            format!("{}_over_surge{}", kind.label(), i + 1),
            Side::Over,
            dp,
        ));
    }
    out
}

/// Calibration inputs for one grid code: recorded substation voltage as
/// model input, that code's active fraction as target. `side` restricts the
/// scenarios (PI blocks fit one side at a time); `None` takes everything
/// (the dwell-timer block covers both sides jointly). `decimate` keeps every
/// k-th sample.
pub fn fit_traces(
    traces: &[SimulationTrace],
    code: GridCode,
    side: Option<Side>,
    decimate: usize,
) -> Vec<FitTrace> {
    let k = decimate.max(1);
    traces
        .iter()
        .filter(|tr| side.map_or(true, |s| tr.meta.scenario.side == s))
        .map(|tr| FitTrace {
            v: tr.v_ss_filt.iter().copied().step_by(k).collect(),
            target: tr.frac[code.index()].iter().copied().step_by(k).collect(),
        })
        .collect()
}

/// Fit one block against a recorded suite. PI blocks need a side; the
/// dwell-timer family ignores it and trains on both sides at once.
pub fn fit_block(
    traces: &[SimulationTrace],
    family: ModelFamily,
    code: GridCode,
    side: Side,
    cfg: &SwarmConfig,
    decimate: usize,
) -> Result<FitResult, CoreError> {
    let dt = common_dt(traces)?;
    let layout = FitLayout::for_family(family, code, side);
    let selected = match family {
        ModelFamily::Pi => fit_traces(traces, code, Some(side), decimate),
        ModelFamily::DerA => fit_traces(traces, code, None, decimate),
    };
    if selected.is_empty() {
        return Err(CoreError::config(format!(
            "no {} traces available to fit {} {}",
            side.label(),
            family.label(),
            code.label()
        )));
    }
    let prob = FitProblem::new(layout, selected, dt * decimate.max(1) as f64)?;
    calibrate::fit(&prob, cfg)
}

fn common_dt(traces: &[SimulationTrace]) -> Result<f64, CoreError> {
    let first = traces
        .first()
        .ok_or_else(|| CoreError::config("no traces supplied"))?
        .meta
        .scenario
        .dt;
    for tr in traces {
        if (tr.meta.scenario.dt - first).abs() > 1e-15 {
            return Err(CoreError::config(format!(
                "trace {} has dt {} but the suite uses {}",
                tr.meta.scenario.name, tr.meta.scenario.dt, first
            )));
        }
    }
    Ok(first)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub mae_under: Option<f64>,
    pub mae_over: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario: String,
    pub model: String,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub n_traces: usize,
    pub scores: Vec<ModelScore>,
    pub per_scenario: Vec<ScenarioScore>,
}

/// Replay every model over every trace and score the weighted totals:
/// mean absolute error in percent, pooled over all scenarios and time steps
/// of each side.
pub fn evaluate_models(
    traces: &[SimulationTrace],
    models: &[CompositeModel],
) -> Result<SuiteReport, CoreError> {
    let dt = common_dt(traces)?;
    let mut scores = Vec::with_capacity(models.len());
    let mut per_scenario = Vec::with_capacity(models.len() * traces.len());
    for model in models {
        let mut abs_err: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for tr in traces {
            let pred = model.predict(&tr.v_ss_filt, dt);
            let errs: Vec<f64> = pred
                .weighted
                .iter()
                .zip(&tr.frac_weighted)
                .map(|(p, a)| (p - a).abs())
                .collect();
            per_scenario.push(ScenarioScore {
                scenario: tr.meta.scenario.name.clone(),
                model: model.name.clone(),
                mae: 100.0 * errs.iter().sum::<f64>() / errs.len() as f64,
            });
            let slot = match tr.meta.scenario.side {
                Side::Under => 0,
                Side::Over => 1,
            };
            abs_err[slot].extend(errs);
        }
        let mae_of = |v: &Vec<f64>| -> Option<f64> {
            (!v.is_empty()).then(|| 100.0 * v.iter().sum::<f64>() / v.len() as f64)
        };
        scores.push(ModelScore {
            model: model.name.clone(),
            mae_under: mae_of(&abs_err[0]),
            mae_over: mae_of(&abs_err[1]),
        });
    }
    Ok(SuiteReport { n_traces: traces.len(), scores, per_scenario })
}
