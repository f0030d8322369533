//! Aggregate fractional-tripping models. Each block consumes the substation
//! voltage and emits the fraction of DER capacity still active.
//!
//! Two families:
//! * the proportional-integral block (`PiParams`/`pi_step`): a proportional
//!   term on the running voltage extreme plus rate- and level-limited
//!   deactivation and reactivation integrators;
//! * the dwell-timer block (`DerAParams`/`dera_step`): a latched linear
//!   deactivation curve with partial voltage-recovery, under and over sides
//!   combined by product.
//!
//! A `CompositeModel` holds one block per grid code and mixes the per-code
//! fractions with fixed capacity shares.

use serde::{Deserialize, Serialize};

use crate::util::{clamp01, exp_track};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridCode {
    Inv2005,
    Inv2015,
    Inv2020,
}

impl GridCode {
    pub const ALL: [GridCode; 3] = [GridCode::Inv2005, GridCode::Inv2015, GridCode::Inv2020];

    pub fn index(self) -> usize {
        match self {
            GridCode::Inv2005 => 0,
            GridCode::Inv2015 => 1,
            GridCode::Inv2020 => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GridCode::Inv2005 => "inv2005",
            GridCode::Inv2015 => "inv2015",
            GridCode::Inv2020 => "inv2020",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Under,
    Over,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Under => "under",
            Side::Over => "over",
        }
    }
}

/// Linear ramp: 0 at `a`, 1 at `b`, clamped outside. Works for either
/// orientation; `a > b` ramps downward.
fn ramp(x: f64, a: f64, b: f64) -> f64 {
    clamp01((x - a) / (b - a))
}

/// Reactivation integrator settings; absent for codes whose units never
/// reconnect within the studied window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiRecovery {
    /// Voltage where reactivation starts to accrue. The full-rate voltage
    /// sits one deactivation span beyond it.
    pub v0_rec: f64,
    pub t_rec: f64,
}

/// One side of the proportional-integral block.
///
/// The proportional branch maps the running voltage extreme linearly from
/// fully tripped at `v0_p` to untouched at `v1_p`. The integral branch
/// accrues delayed deactivation at a rate ramping over `[v0_i, v1_i]`,
/// capped by the same ramp evaluated at the extreme. On the over side the
/// voltage orderings reverse (`v1_p < v0_p`); the shared ramp handles both
/// orientations, so the recurrence below is side-agnostic except for the
/// direction of the running extreme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiParams {
    pub side: Side,
    pub v0_p: f64,
    pub v1_p: f64,
    pub v0_i: f64,
    pub v1_i: f64,
    /// Deactivation integrator time constant, s.
    pub t_deact: f64,
    pub recovery: Option<PiRecovery>,
    /// Input voltage filter, s; 0 disables filtering.
    pub trv: f64,
}

impl PiParams {
    pub fn validate(&self) -> bool {
        let spans_ok = match self.side {
            Side::Under => self.v0_p < self.v1_p && self.v0_i < self.v1_i,
            Side::Over => self.v0_p > self.v1_p && self.v0_i > self.v1_i,
        };
        spans_ok
            && self.t_deact > 0.0
            && self.trv >= 0.0
            && self.recovery.map_or(true, |r| r.t_rec > 0.0)
    }

    /// Full-rate reactivation voltage: `v0_rec` shifted by the deactivation
    /// span, keeping both ramps equally wide.
    pub fn v1_rec(&self) -> Option<f64> {
        self.recovery.map(|r| r.v0_rec + (self.v1_i - self.v0_i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiState {
    pub v_filt: f64,
    /// Running min (under side) or max (over side) of the filtered voltage.
    pub v_extreme: f64,
    pub p_del: f64,
    pub p_rec: f64,
}

impl Default for PiState {
    fn default() -> Self {
        PiState { v_filt: 1.0, v_extreme: 1.0, p_del: 0.0, p_rec: 0.0 }
    }
}

/// Advance the block one step and return the active fraction.
pub fn pi_step(p: &PiParams, st: &mut PiState, v_ss: f64, dt: f64) -> f64 {
    st.v_filt = exp_track(st.v_filt, v_ss, dt, p.trv);
    st.v_extreme = match p.side {
        Side::Under => st.v_extreme.min(st.v_filt),
        Side::Over => st.v_extreme.max(st.v_filt),
    };

    let p_im = ramp(st.v_extreme, p.v0_p, p.v1_p);

    let del_rate = ramp(st.v_filt, p.v1_i, p.v0_i);
    st.p_del += del_rate * dt / p.t_deact;
    let del_lim = ramp(st.v_extreme, p.v1_i, p.v0_i);
    st.p_del = st.p_del.min(del_lim);

    if let Some(rec) = p.recovery {
        let v1_rec = rec.v0_rec + (p.v1_i - p.v0_i);
        // Rate and limiter share one ramp, so p_rec can never outrun it.
        let rec_rate = ramp(st.v_filt, rec.v0_rec, v1_rec);
        st.p_rec += rec_rate * dt / rec.t_rec;
        st.p_rec = st.p_rec.min(rec_rate);
    }

    clamp01(p_im - st.p_del + st.p_rec)
}

/// Fold `pi_step` over a voltage trace from a fresh state.
pub fn pi_simulate(p: &PiParams, trace: &[f64], dt: f64) -> Vec<f64> {
    let mut st = PiState::default();
    trace.iter().map(|&v| pi_step(p, &mut st, v, dt)).collect()
}

/// Dwell-timer tripping block covering both voltage sides.
///
/// The deactivation curve ramps linearly from none at `v_l1` to all at
/// `v_l0` (mirrored over `[v_h1, v_h0]`). It only registers after the
/// filtered voltage has dwelt continuously beyond the respective threshold
/// longer than its timer; `v_r_frac` of the registered amount recovers with
/// the voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerAParams {
    pub v_l0: f64,
    pub v_l1: f64,
    pub v_h1: f64,
    pub v_h0: f64,
    pub t_vl0: f64,
    pub t_vl1: f64,
    pub t_vh0: f64,
    pub t_vh1: f64,
    pub v_r_frac: f64,
    pub trv: f64,
}

impl DerAParams {
    pub fn validate(&self) -> bool {
        self.v_l0 < self.v_l1
            && self.v_l1 < self.v_h1
            && self.v_h1 < self.v_h0
            && self.t_vl0 >= 0.0
            && self.t_vl1 >= 0.0
            && self.t_vh0 >= 0.0
            && self.t_vh1 >= 0.0
            && (0.0..=1.0).contains(&self.v_r_frac)
            && self.trv >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerAState {
    pub v_filt: f64,
    pub v_min: f64,
    pub v_max: f64,
    dwell_l1: f64,
    dwell_l0: f64,
    dwell_h1: f64,
    dwell_h0: f64,
}

impl Default for DerAState {
    fn default() -> Self {
        DerAState {
            v_filt: 1.0,
            v_min: 1.0,
            v_max: 1.0,
            dwell_l1: 0.0,
            dwell_l0: 0.0,
            dwell_h1: 0.0,
            dwell_h0: 0.0,
        }
    }
}

/// Latched curve value plus partial recovery along the voltage. The
/// recovery term is floored at zero so nothing registers before a dwell
/// timer has expired.
fn dera_side(f_ext: f64, f_now: f64, v_r_frac: f64) -> f64 {
    clamp01(f_ext + v_r_frac * (f_now - f_ext).max(0.0))
}

/// Advance the block one step and return the active fraction (product of
/// both sides).
pub fn dera_step(p: &DerAParams, st: &mut DerAState, v_ss: f64, dt: f64) -> f64 {
    st.v_filt = exp_track(st.v_filt, v_ss, dt, p.trv);
    let v = st.v_filt;

    // Continuous-dwell timers: reset whenever the voltage leaves the band.
    st.dwell_l1 = if v < p.v_l1 { st.dwell_l1 + dt } else { 0.0 };
    st.dwell_l0 = if v < p.v_l0 { st.dwell_l0 + dt } else { 0.0 };
    st.dwell_h1 = if v > p.v_h1 { st.dwell_h1 + dt } else { 0.0 };
    st.dwell_h0 = if v > p.v_h0 { st.dwell_h0 + dt } else { 0.0 };

    if st.dwell_l1 > p.t_vl1 || st.dwell_l0 > p.t_vl0 {
        st.v_min = st.v_min.min(v);
    }
    if st.dwell_h1 > p.t_vh1 || st.dwell_h0 > p.t_vh0 {
        st.v_max = st.v_max.max(v);
    }

    let under = dera_side(ramp(st.v_min, p.v_l0, p.v_l1), ramp(v, p.v_l0, p.v_l1), p.v_r_frac);
    let over = dera_side(ramp(st.v_max, p.v_h0, p.v_h1), ramp(v, p.v_h0, p.v_h1), p.v_r_frac);
    clamp01(under * over)
}

/// Fold `dera_step` over a voltage trace from a fresh state.
pub fn dera_simulate(p: &DerAParams, trace: &[f64], dt: f64) -> Vec<f64> {
    let mut st = DerAState::default();
    trace.iter().map(|&v| dera_step(p, &mut st, v, dt)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Pi,
    DerA,
}

impl ModelFamily {
    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::Pi => "pi",
            ModelFamily::DerA => "dera",
        }
    }
}

/// Per-code block of one family. A PI code pairs one block per side and
/// multiplies their outputs; a dwell-timer block covers both sides itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CodeBlock {
    Pi { under: PiParams, over: PiParams },
    DerA { params: DerAParams },
}

impl CodeBlock {
    pub fn family(&self) -> ModelFamily {
        match self {
            CodeBlock::Pi { .. } => ModelFamily::Pi,
            CodeBlock::DerA { .. } => ModelFamily::DerA,
        }
    }

    /// Replay the block over a voltage trace from fresh state.
    pub fn simulate(&self, trace: &[f64], dt: f64) -> Vec<f64> {
        match self {
            CodeBlock::Pi { under, over } => {
                let mut su = PiState::default();
                let mut so = PiState::default();
                trace
                    .iter()
                    .map(|&v| {
                        let fu = pi_step(under, &mut su, v, dt);
                        let fo = pi_step(over, &mut so, v, dt);
                        clamp01(fu * fo)
                    })
                    .collect()
            }
            CodeBlock::DerA { params } => dera_simulate(params, trace, dt),
        }
    }
}

/// One aggregate predictor: a block per grid code plus the capacity shares
/// used to mix the per-code fractions into one weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeModel {
    pub name: String,
    pub shares: [f64; 3],
    pub blocks: [CodeBlock; 3],
}

/// Per-code and weighted fraction traces produced by one model replay.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub per_code: [Vec<f64>; 3],
    pub weighted: Vec<f64>,
}

impl CompositeModel {
    /// Pair per-code side blocks into one composite; arrays are indexed by
    /// `GridCode::index()`.
    pub fn from_pi(
        name: impl Into<String>,
        shares: [f64; 3],
        under: [PiParams; 3],
        over: [PiParams; 3],
    ) -> CompositeModel {
        let mut u = under.into_iter();
        let mut o = over.into_iter();
        CompositeModel {
            name: name.into(),
            shares,
            blocks: std::array::from_fn(|_| CodeBlock::Pi {
                under: u.next().expect("three under blocks"),
                over: o.next().expect("three over blocks"),
            }),
        }
    }

    pub fn from_dera(
        name: impl Into<String>,
        shares: [f64; 3],
        params: [DerAParams; 3],
    ) -> CompositeModel {
        let mut p = params.into_iter();
        CompositeModel {
            name: name.into(),
            shares,
            blocks: std::array::from_fn(|_| CodeBlock::DerA {
                params: p.next().expect("three blocks"),
            }),
        }
    }

    pub fn validate(&self) -> bool {
        (self.shares.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }

    pub fn predict(&self, trace: &[f64], dt: f64) -> Prediction {
        let per_code: [Vec<f64>; 3] =
            std::array::from_fn(|i| self.blocks[i].simulate(trace, dt));
        let weighted = (0..trace.len())
            .map(|t| {
                self.shares
                    .iter()
                    .zip(&per_code)
                    .map(|(s, f)| s * f[t])
                    .sum()
            })
            .collect();
        Prediction { per_code, weighted }
    }
}

/// Weighted mix of per-code fractions.
pub fn weighted_fraction(per_code: [f64; 3], shares: [f64; 3]) -> f64 {
    per_code.iter().zip(&shares).map(|(f, s)| f * s).sum()
}

fn dera_defaults_single() -> DerAParams {
    DerAParams {
        v_l0: 0.44,
        v_l1: 0.49,
        v_h1: 1.15,
        v_h0: 1.2,
        t_vl0: 0.16,
        t_vl1: 0.16,
        t_vh0: 0.16,
        t_vh1: 0.16,
        v_r_frac: 0.35,
        trv: 0.02,
    }
}

fn deraemo1_defaults(code: GridCode) -> DerAParams {
    let base = DerAParams { trv: 0.02, ..dera_defaults_single() };
    match code {
        GridCode::Inv2005 => DerAParams {
            v_l0: 0.75,
            v_l1: 0.9,
            v_h1: 1.13,
            v_h0: 1.18,
            t_vl0: 1.58,
            t_vl1: 0.027,
            t_vh0: 0.88,
            t_vh1: 1.94,
            v_r_frac: 0.625,
            ..base
        },
        GridCode::Inv2015 => DerAParams {
            v_l0: 0.5,
            v_l1: 0.9,
            v_h1: 1.13,
            v_h0: 1.18,
            t_vl0: 1.77,
            t_vl1: 0.037,
            t_vh0: 0.16,
            t_vh1: 1.87,
            v_r_frac: 0.713,
            ..base
        },
        GridCode::Inv2020 => DerAParams {
            v_l0: 0.5,
            v_l1: 0.9,
            v_h1: 1.19,
            v_h0: 1.21,
            t_vl0: 1.77,
            t_vl1: 0.037,
            t_vh0: 0.16,
            t_vh1: 1.87,
            v_r_frac: 1.0,
            ..base
        },
    }
}

/// Published recommended parameterizations: the single-block model (same
/// parameters reused for every code) and the per-code composition.
pub fn make_default_models(shares: [f64; 3]) -> (CompositeModel, CompositeModel) {
    let single = CompositeModel {
        name: "dera_default".into(),
        shares,
        blocks: std::array::from_fn(|_| CodeBlock::DerA { params: dera_defaults_single() }),
    };
    let per_code = CompositeModel {
        name: "deraemo1_default".into(),
        shares,
        blocks: std::array::from_fn(|i| CodeBlock::DerA {
            params: deraemo1_defaults(GridCode::ALL[i]),
        }),
    };
    (single, per_code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn under_params() -> PiParams {
        PiParams {
            side: Side::Under,
            v0_p: 0.0,
            v1_p: 0.5,
            v0_i: 0.8,
            v1_i: 0.9,
            t_deact: 1.0,
            recovery: None,
            trv: 0.0,
        }
    }

    #[test]
    fn nominal_voltage_keeps_full_output() {
        let p = under_params();
        let out = pi_simulate(&p, &vec![1.0; 200], 1e-3);
        assert!(out.iter().all(|&f| f == 1.0));
    }

    #[test]
    fn held_sag_accrues_delayed_deactivation() {
        let p = under_params();
        let mut st = PiState::default();
        let mut out = 0.0;
        for _ in 0..500 {
            out = pi_step(&p, &mut st, 0.85, 1e-3);
        }
        assert_relative_eq!(out, 0.75, epsilon = 1e-6);
        assert_relative_eq!(st.p_del, 0.25, epsilon = 1e-6);
        assert_relative_eq!(st.v_extreme, 0.85, epsilon = 1e-12);
    }

    #[test]
    fn recovery_integrator_restores_output() {
        let p = PiParams {
            recovery: Some(PiRecovery { v0_rec: 0.85, t_rec: 1.0 }),
            ..under_params()
        };
        let mut st = PiState::default();
        let mut out = 0.0;
        for _ in 0..500 {
            out = pi_step(&p, &mut st, 0.85, 1e-3);
        }
        assert_relative_eq!(out, 0.75, epsilon = 1e-6);
        for _ in 0..100 {
            out = pi_step(&p, &mut st, 1.0, 1e-3);
        }
        assert_relative_eq!(out, 0.85, epsilon = 1e-6);
        assert_relative_eq!(st.p_rec, 0.1, epsilon = 1e-6);
    }

    #[test]
    fn deep_sustained_sag_saturates_to_proportional_floor() {
        let p = under_params();
        let mut st = PiState::default();
        let mut out = 1.0;
        // v = 0.3: p_im = 0.6, integrator saturates at 1 after t_deact.
        for _ in 0..1500 {
            out = pi_step(&p, &mut st, 0.3, 1e-3);
        }
        assert_relative_eq!(out, 0.0, epsilon = 1e-9);
        assert_relative_eq!(st.p_del, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn over_side_mirrors_the_under_recurrence() {
        let p = PiParams {
            side: Side::Over,
            v0_p: 2.0,
            v1_p: 1.5,
            v0_i: 1.2,
            v1_i: 1.1,
            t_deact: 1.0,
            recovery: None,
            trv: 0.0,
        };
        let mut st = PiState::default();
        let mut out = 0.0;
        for _ in 0..500 {
            out = pi_step(&p, &mut st, 1.15, 1e-3);
        }
        assert_relative_eq!(out, 0.75, epsilon = 1e-6);
        assert_relative_eq!(st.v_extreme, 1.15, epsilon = 1e-12);
    }

    #[test]
    fn over_side_recovery_engages_below_its_threshold() {
        let p = PiParams {
            side: Side::Over,
            v0_p: 2.0,
            v1_p: 1.5,
            v0_i: 1.2,
            v1_i: 1.1,
            t_deact: 1.0,
            recovery: Some(PiRecovery { v0_rec: 1.15, t_rec: 1.0 }),
            trv: 0.0,
        };
        // v1_rec = 1.15 + (1.1 - 1.2) = 1.05: full rate at nominal voltage.
        let mut st = PiState::default();
        for _ in 0..500 {
            pi_step(&p, &mut st, 1.15, 1e-3);
        }
        let mut out = 0.0;
        for _ in 0..100 {
            out = pi_step(&p, &mut st, 1.0, 1e-3);
        }
        assert_relative_eq!(out, 0.85, epsilon = 1e-6);
    }

    #[test]
    fn integrator_rate_is_step_size_invariant_for_held_input() {
        let p = under_params();
        let coarse = pi_simulate(&p, &vec![0.85; 100], 5e-3);
        let fine = pi_simulate(&p, &vec![0.85; 500], 1e-3);
        assert_relative_eq!(coarse[99], fine[499], epsilon = 1e-12);
    }

    #[test]
    fn filtered_input_delays_but_reaches_the_same_floor() {
        let p = PiParams { trv: 0.02, ..under_params() };
        let out = pi_simulate(&p, &vec![0.85; 3000], 1e-3);
        assert!(out[10] > 0.9, "filter should delay the dip, got {}", out[10]);
        assert_relative_eq!(out[2999], 0.5, epsilon = 1e-3);
    }

    fn dip_trace(depth: f64, n_dip: usize, n_total: usize) -> Vec<f64> {
        let mut tr = vec![1.0; n_total];
        for v in tr.iter_mut().take(n_dip).skip(10) {
            *v = depth;
        }
        tr
    }

    #[test]
    fn dera_latches_midpoint_after_dwell() {
        let p = DerAParams { trv: 0.0, ..dera_defaults_single() };
        let mut st = DerAState::default();
        let mut out = 1.0;
        for _ in 0..500 {
            out = dera_step(&p, &mut st, 0.465, 1e-3);
        }
        assert_relative_eq!(out, 0.5, epsilon = 1e-9);
        for _ in 0..500 {
            out = dera_step(&p, &mut st, 1.0, 1e-3);
        }
        assert_relative_eq!(out, 0.675, epsilon = 1e-9);
        assert_relative_eq!(st.v_min, 0.465, epsilon = 1e-12);
    }

    #[test]
    fn dera_ignores_dips_shorter_than_the_dwell_timer() {
        let p = DerAParams { trv: 0.0, ..dera_defaults_single() };
        let mut st = DerAState::default();
        // 0.1 s below v_l1 is under the 0.16 s timer.
        for &v in &dip_trace(0.465, 110, 400) {
            assert_eq!(dera_step(&p, &mut st, v, 1e-3), 1.0);
        }
        assert_eq!(st.v_min, 1.0);
    }

    #[test]
    fn dera_over_side_latches_and_multiplies() {
        let p = DerAParams { trv: 0.0, v_r_frac: 0.0, ..dera_defaults_single() };
        let mut st = DerAState::default();
        let mut out = 1.0;
        // Midpoint of [1.15, 1.2] held past the 0.16 s dwell.
        for _ in 0..400 {
            out = dera_step(&p, &mut st, 1.175, 1e-3);
        }
        assert_relative_eq!(out, 0.5, epsilon = 1e-9);
        for _ in 0..400 {
            out = dera_step(&p, &mut st, 1.0, 1e-3);
        }
        assert_relative_eq!(out, 0.5, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn default_parameter_tables() {
        let (single, per_code) = make_default_models([0.15, 0.5, 0.35]);
        assert!(single.validate() && per_code.validate());
        let CodeBlock::DerA { params: d } = &single.blocks[0] else { panic!() };
        assert_eq!((d.v_l0, d.v_l1, d.v_r_frac), (0.44, 0.49, 0.35));
        let CodeBlock::DerA { params: p05 } = &per_code.blocks[0] else { panic!() };
        assert_eq!((p05.t_vl0, p05.v_r_frac), (1.58, 0.625));
        let CodeBlock::DerA { params: p20 } = &per_code.blocks[2] else { panic!() };
        assert_eq!((p20.v_h0, p20.v_r_frac), (1.21, 1.0));
    }

    #[test]
    fn composite_weights_per_code_fractions() {
        assert_relative_eq!(
            weighted_fraction([1.0, 0.8, 0.6], [0.15, 0.5, 0.35]),
            0.76,
            epsilon = 1e-12
        );
        let (single, _) = make_default_models([0.15, 0.5, 0.35]);
        let pred = single.predict(&vec![1.0; 50], 1e-3);
        assert!(pred.weighted.iter().all(|&f| f == 1.0));
    }

    #[test]
    fn composite_serde_round_trip_is_lossless() {
        let (_, model) = make_default_models(crate::CODE_SHARES);
        let json = serde_json::to_string(&model).unwrap();
        let back: CompositeModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
        let pi = PiParams {
            recovery: Some(PiRecovery { v0_rec: 0.8123456789012345, t_rec: 2.5 }),
            ..under_params()
        };
        let back: PiParams = serde_json::from_str(&serde_json::to_string(&pi).unwrap()).unwrap();
        assert_eq!(pi, back);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_under_params() -> impl Strategy<Value = PiParams> {
            (0.0f64..0.6, 0.01f64..0.4, 0.5f64..0.9, 0.01f64..0.3, 0.05f64..5.0).prop_map(
                |(v0_p, dp, v0_i, di, t)| PiParams {
                    side: Side::Under,
                    v0_p,
                    v1_p: v0_p + dp,
                    v0_i,
                    v1_i: v0_i + di,
                    t_deact: t,
                    recovery: Some(PiRecovery { v0_rec: v0_i + di / 2.0, t_rec: t }),
                    trv: 0.02,
                },
            )
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn output_stays_in_unit_interval(
                p in arb_under_params(),
                trace in proptest::collection::vec(0.0f64..1.3, 1..300),
            ) {
                let mut st = PiState::default();
                for v in trace {
                    let out = pi_step(&p, &mut st, v, 1e-3);
                    prop_assert!((0.0..=1.0).contains(&out));
                    prop_assert!((0.0..=1.0).contains(&st.p_del));
                    prop_assert!((0.0..=1.0).contains(&st.p_rec));
                }
            }

            #[test]
            fn running_extreme_is_monotone(
                p in arb_under_params(),
                trace in proptest::collection::vec(0.0f64..1.3, 1..300),
            ) {
                let mut st = PiState::default();
                let mut prev = st.v_extreme;
                for v in trace {
                    pi_step(&p, &mut st, v, 1e-3);
                    prop_assert!(st.v_extreme <= prev + 1e-15);
                    prev = st.v_extreme;
                }
            }

            #[test]
            fn output_non_increasing_while_voltage_stays_depressed(
                p in arb_under_params(),
                v in 0.0f64..0.85,
            ) {
                // With reactivation off and v below both ramps, nothing can
                // push the output back up.
                let p = PiParams { recovery: None, ..p };
                let v = v.min(p.v0_i - 1e-6);
                let mut st = PiState::default();
                let mut prev = 1.0;
                for _ in 0..200 {
                    let out = pi_step(&p, &mut st, v, 1e-3);
                    prop_assert!(out <= prev + 1e-12);
                    prev = out;
                }
            }

            #[test]
            fn voltage_shift_invariance(
                p in arb_under_params(),
                trace in proptest::collection::vec(0.2f64..1.2, 1..200),
                shift in -0.1f64..0.1,
            ) {
                // The recurrence sees only differences and span ratios.
                let shifted = PiParams {
                    v0_p: p.v0_p + shift,
                    v1_p: p.v1_p + shift,
                    v0_i: p.v0_i + shift,
                    v1_i: p.v1_i + shift,
                    recovery: p.recovery.map(|r| PiRecovery {
                        v0_rec: r.v0_rec + shift,
                        t_rec: r.t_rec,
                    }),
                    ..p
                };
                let base = pi_simulate(&p, &trace, 1e-3);
                let moved: Vec<f64> = trace.iter().map(|v| v + shift).collect();
                // Shifted filter state starts at 1.0 either way; feed the
                // shifted trace through a shifted initial state instead.
                let mut st = PiState {
                    v_filt: 1.0 + shift,
                    v_extreme: 1.0 + shift,
                    ..PiState::default()
                };
                for (i, v) in moved.iter().enumerate() {
                    let out = pi_step(&shifted, &mut st, *v, 1e-3);
                    prop_assert!((out - base[i]).abs() < 1e-9);
                }
            }

            #[test]
            fn dera_output_stays_in_unit_interval(
                trace in proptest::collection::vec(0.0f64..1.3, 1..300),
            ) {
                let p = dera_defaults_single();
                let mut st = DerAState::default();
                for v in trace {
                    let out = dera_step(&p, &mut st, v, 1e-3);
                    prop_assert!((0.0..=1.0).contains(&out));
                }
            }

            #[test]
            fn substep_refinement_changes_output_only_slightly(
                p in arb_under_params(),
                depth in 0.3f64..0.9,
            ) {
                let trace: Vec<f64> =
                    (0..300).map(|i| if (50..150).contains(&i) { depth } else { 1.0 }).collect();
                let coarse = pi_simulate(&p, &trace, 1e-3);
                let fine_trace: Vec<f64> =
                    trace.iter().flat_map(|&v| std::iter::repeat(v).take(10)).collect();
                let fine = pi_simulate(&p, &fine_trace, 1e-4);
                for (i, c) in coarse.iter().enumerate() {
                    let f = fine[i * 10 + 9];
                    prop_assert!((c - f).abs() < 0.02, "step {i}: {c} vs {f}");
                }
            }
        }
    }
}
