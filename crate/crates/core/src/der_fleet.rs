//! Individually modeled PV inverters: sampled ratings and ride-through
//! settings, Volt-VAr / Volt-Watt control with adoption delays, current
//! reference lags, and the per-unit voltage ride-through state machine.
//!
//! Grid-code conventions captured here:
//! * INV2005/INV2015 units ride through between `v_l1` and `v_h1`, run
//!   region clearing timers outside that band, and never cease momentarily.
//! * INV2020 units are continuous between `v_l1` and `v_h_mc`, must stay
//!   connected in the mandatory band `[v_l0, v_l1)` for up to `t_l1`, and
//!   enter momentary cessation below `v_l0` or above `v_h_mc` after a short
//!   randomized delay. Cessation reverses after `mc_react_delay` once the
//!   voltage is back in the continuous band; tripping is permanent.
//!
//! All region timers accumulate while the filtered voltage is beyond their
//! threshold and reset only when it reenters the continuous band.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::trip_models::GridCode;
use crate::util::{clamp01, exp_track};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VrtSettings {
    pub v_l0: f64,
    pub v_l1: f64,
    pub v_h1: f64,
    /// Momentary-cessation threshold; INV2020 only.
    pub v_h_mc: Option<f64>,
    pub v_h0: f64,
    pub t_l0: f64,
    pub t_l1: f64,
    pub t_h1: f64,
    pub t_h0: f64,
    pub mc_deact_delay: f64,
    pub mc_react_delay: f64,
}

impl VrtSettings {
    pub fn validate(&self) -> bool {
        let ordered = self.v_l0 < self.v_l1 && self.v_l1 < self.v_h1 && self.v_h1 <= self.v_h0;
        let mc_ok = match self.v_h_mc {
            Some(mc) => self.v_l1 < mc && mc <= self.v_h1,
            None => true,
        };
        let timers_ok = self.t_l0 >= 0.0
            && self.t_l1 >= 0.0
            && self.t_h1 >= 0.0
            && self.t_h0 >= 0.0
            && self.mc_deact_delay >= 0.0
            && self.mc_react_delay >= 0.0;
        ordered && mc_ok && timers_ok
    }

    /// Upper edge of the continuous operating band.
    fn continuous_high(&self) -> f64 {
        self.v_h_mc.unwrap_or(self.v_h1)
    }
}

/// Inclusive sampling ranges for one grid code; fixed values are collapsed
/// ranges.
#[derive(Debug, Clone, Copy)]
pub struct VrtBounds {
    pub v_l0: (f64, f64),
    pub v_l1: (f64, f64),
    pub v_h1: (f64, f64),
    pub v_h_mc: Option<(f64, f64)>,
    pub v_h0: (f64, f64),
    pub t_l0: (f64, f64),
    pub t_l1: (f64, f64),
    pub t_h1: (f64, f64),
    pub t_h0: (f64, f64),
    pub mc_deact_delay: (f64, f64),
    pub mc_react_delay: (f64, f64),
}

pub fn vrt_bounds(code: GridCode) -> VrtBounds {
    match code {
        GridCode::Inv2005 => VrtBounds {
            v_l0: (0.2, 0.8),
            v_l1: (0.84, 0.92),
            v_h1: (1.08, 1.12),
            v_h_mc: None,
            v_h0: (1.14, 1.2),
            t_l0: (0.0, 0.0),
            t_l1: (0.0, 0.2),
            t_h1: (0.0, 1.6),
            t_h0: (0.0, 0.0),
            mc_deact_delay: (0.0, 0.0),
            mc_react_delay: (0.0, 0.0),
        },
        GridCode::Inv2015 => VrtBounds {
            v_l0: (0.1, 0.5),
            v_l1: (0.84, 0.92),
            v_h1: (1.12, 1.14),
            v_h_mc: None,
            v_h0: (1.14, 1.16),
            t_l0: (0.0, 0.0),
            t_l1: (0.0, 1.0),
            t_h1: (0.0, 1.0),
            t_h0: (0.0, 0.0),
            mc_deact_delay: (0.0, 0.0),
            mc_react_delay: (0.0, 0.0),
        },
        GridCode::Inv2020 => VrtBounds {
            v_l0: (0.29, 0.31),
            v_l1: (0.77, 0.79),
            v_h1: (1.14, 1.16),
            v_h_mc: Some((1.12, 1.14)),
            v_h0: (1.19, 1.21),
            t_l0: (1.0, 2.0),
            t_l1: (10.0, 10.0),
            t_h1: (1.0, 2.0),
            t_h0: (0.0, 0.0),
            mc_deact_delay: (0.0, 0.1),
            mc_react_delay: (0.0, 0.4),
        },
    }
}

impl VrtBounds {
    pub fn contains(&self, s: &VrtSettings) -> bool {
        let within = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
        let mc_ok = match (self.v_h_mc, s.v_h_mc) {
            (Some(b), Some(x)) => within(x, b),
            (None, None) => true,
            _ => false,
        };
        within(s.v_l0, self.v_l0)
            && within(s.v_l1, self.v_l1)
            && within(s.v_h1, self.v_h1)
            && within(s.v_h0, self.v_h0)
            && within(s.t_l0, self.t_l0)
            && within(s.t_l1, self.t_l1)
            && within(s.t_h1, self.t_h1)
            && within(s.t_h0, self.t_h0)
            && within(s.mc_deact_delay, self.mc_deact_delay)
            && within(s.mc_react_delay, self.mc_react_delay)
            && mc_ok
    }
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn sample_vrt<R: Rng>(code: GridCode, rng: &mut R) -> VrtSettings {
    let b = vrt_bounds(code);
    VrtSettings {
        v_l0: sample_range(rng, b.v_l0),
        v_l1: sample_range(rng, b.v_l1),
        v_h1: sample_range(rng, b.v_h1),
        v_h_mc: b.v_h_mc.map(|r| sample_range(rng, r)),
        v_h0: sample_range(rng, b.v_h0),
        t_l0: sample_range(rng, b.t_l0),
        t_l1: sample_range(rng, b.t_l1),
        t_h1: sample_range(rng, b.t_h1),
        t_h0: sample_range(rng, b.t_h0),
        mc_deact_delay: sample_range(rng, b.mc_deact_delay),
        mc_react_delay: sample_range(rng, b.mc_react_delay),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltVarParams {
    pub kqv1: f64,
    pub kqv2: f64,
    pub db_low: f64,
    pub db_high: f64,
    pub q_max: f64,
    /// Adoption delay of the reactive reference.
    pub tqv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltWattParams {
    pub dbp1: f64,
    pub dbp2: f64,
    pub p_floor: f64,
    pub tpv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerControlParams {
    pub trv: f64,
    pub tg: f64,
    pub tiq: f64,
    pub tpord: f64,
    /// Converter current ceiling, pu of rating.
    pub i_max: f64,
    /// Reactive current takes priority when the filtered voltage is below
    /// this level.
    pub q_priority_below: f64,
    pub volt_var: Option<VoltVarParams>,
    pub volt_watt: Option<VoltWattParams>,
}

/// Control constants per grid code. Volt-VAr and Volt-Watt loops exist only
/// on INV2020 units.
pub fn default_control_params(code: GridCode) -> DerControlParams {
    let base = DerControlParams {
        trv: 0.02,
        tg: 0.02,
        tiq: 0.02,
        tpord: 0.02,
        i_max: 1.2,
        q_priority_below: 0.956,
        volt_var: None,
        volt_watt: None,
    };
    match code {
        GridCode::Inv2005 | GridCode::Inv2015 => base,
        GridCode::Inv2020 => DerControlParams {
            volt_var: Some(VoltVarParams {
                kqv1: 7.78,
                kqv2: 7.65,
                db_low: 0.956,
                db_high: 1.043,
                q_max: 0.44,
                tqv: 6.0,
            }),
            volt_watt: Some(VoltWattParams {
                dbp1: 1.07,
                dbp2: 1.1075,
                p_floor: 0.2,
                tpv: 8.0,
            }),
            ..base
        },
    }
}

/// Reactive current reference: positive (injecting) below the deadband,
/// negative above, clamped to `q_max`.
pub fn volt_var_ref(v: f64, p: &VoltVarParams) -> f64 {
    let q = p.kqv1 * (p.db_low - v).max(0.0) - p.kqv2 * (v - p.db_high).max(0.0);
    q.clamp(-p.q_max, p.q_max)
}

/// Active power ceiling: unity below `dbp1`, linear down to `p_floor` at
/// `dbp2`, flat beyond.
pub fn volt_watt_ref(v: f64, p: &VoltWattParams) -> f64 {
    if v <= p.dbp1 {
        1.0
    } else if v >= p.dbp2 {
        p.p_floor
    } else {
        1.0 - (1.0 - p.p_floor) * (v - p.dbp1) / (p.dbp2 - p.dbp1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitMode {
    Continuous,
    /// Off-nominal but still required to exchange power; clearing timers run.
    Mandatory,
    MomentaryCessation,
    Tripped,
}

impl UnitMode {
    pub fn is_active(self) -> bool {
        matches!(self, UnitMode::Continuous | UnitMode::Mandatory)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VrtTimers {
    pub under_l1: f64,
    pub under_l0: f64,
    pub over_h1: f64,
    pub over_h0: f64,
    /// Countdown to momentary cessation while in a cessation band.
    pub mc_entry: Option<f64>,
    /// Countdown to reactivation while back in the continuous band.
    pub mc_exit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerUnitState {
    pub mode: UnitMode,
    pub v_filt: f64,
    pub q_vv_filt: f64,
    pub p_vw_filt: f64,
    pub p_ord: f64,
    pub ip: f64,
    pub iq: f64,
    pub timers: VrtTimers,
}

#[derive(Debug, Clone)]
pub struct DerUnit {
    pub code: GridCode,
    pub vrt: VrtSettings,
    pub ctrl: DerControlParams,
    /// Rated power; also the sampled operating setpoint (unit per-unit base).
    pub p_rated_mw: f64,
    /// Dense network bus index of the terminal.
    pub bus: usize,
}

/// One PV node slot to be populated with one unit per grid code.
#[derive(Debug, Clone, Copy)]
pub struct DerPlacement {
    pub bus: usize,
    /// Mean PV power of the whole node, MW.
    pub pv_mw: f64,
}

#[derive(Debug, Clone)]
pub struct FleetSpec {
    pub placements: Vec<DerPlacement>,
    pub shares: [f64; 3],
    /// Standard deviation of the rating draw as a fraction of its mean.
    pub sigma_frac: f64,
}

/// Draw the inverter fleet: one unit per (placement, grid code) with normally
/// distributed ratings (clipped at zero) and uniformly distributed
/// ride-through settings.
pub fn sample_fleet<R: Rng>(spec: &FleetSpec, rng: &mut R) -> Vec<DerUnit> {
    use rand_distr::{Distribution, Normal};
    let mut units = Vec::with_capacity(spec.placements.len() * 3);
    for pl in &spec.placements {
        for code in GridCode::ALL {
            let mean = spec.shares[code.index()] * pl.pv_mw;
            let rated = if spec.sigma_frac > 0.0 {
                Normal::new(mean, spec.sigma_frac * mean)
                    .expect("valid rating distribution")
                    .sample(rng)
                    .max(0.0)
            } else {
                mean
            };
            units.push(DerUnit {
                code,
                vrt: sample_vrt(code, rng),
                ctrl: default_control_params(code),
                p_rated_mw: rated,
                bus: pl.bus,
            });
        }
    }
    units
}

/// Steady state at a constant terminal voltage; used to back-initialize the
/// fleet at the power-flow operating point.
pub fn init_unit_state(unit: &DerUnit, v_mag: f64) -> DerUnitState {
    let vv = unit.ctrl.volt_var.map_or(0.0, |p| volt_var_ref(v_mag, &p));
    let vw = unit.ctrl.volt_watt.map_or(1.0, |p| volt_watt_ref(v_mag, &p));
    let p_ord = vw.min(1.0);
    let ip = (p_ord / v_mag.max(0.1)).clamp(0.0, unit.ctrl.i_max);
    let iq = vv.clamp(-unit.ctrl.i_max, unit.ctrl.i_max);
    DerUnitState {
        mode: UnitMode::Continuous,
        v_filt: v_mag,
        q_vv_filt: vv,
        p_vw_filt: vw,
        p_ord,
        ip,
        iq,
        timers: VrtTimers::default(),
    }
}

/// Advance the ride-through state machine by one step at the current filtered
/// voltage. Tripping is absorbing; all clearing timers reset when the voltage
/// reenters the continuous band.
pub fn vrt_update(unit: &DerUnit, st: &mut DerUnitState, dt: f64) {
    if st.mode == UnitMode::Tripped {
        return;
    }
    let s = &unit.vrt;
    let v = st.v_filt;
    let t = &mut st.timers;
    let continuous = v >= s.v_l1 && v <= s.continuous_high();

    if continuous {
        t.under_l1 = 0.0;
        t.under_l0 = 0.0;
        t.over_h1 = 0.0;
        t.over_h0 = 0.0;
        t.mc_entry = None;
    } else {
        if v < s.v_l1 {
            t.under_l1 += dt;
        }
        if v < s.v_l0 {
            t.under_l0 += dt;
        }
        if v > s.v_h1 {
            t.over_h1 += dt;
        }
        if v > s.v_h0 {
            t.over_h0 += dt;
        }
    }

    let expired = |timer: f64, clearing: f64| timer > 0.0 && timer >= clearing;
    if expired(t.under_l0, s.t_l0)
        || expired(t.under_l1, s.t_l1)
        || expired(t.over_h1, s.t_h1)
        || expired(t.over_h0, s.t_h0)
    {
        st.mode = UnitMode::Tripped;
        return;
    }

    let supports_mc = s.v_h_mc.is_some();
    let in_mc_band = supports_mc && (v < s.v_l0 || v > s.continuous_high());

    match st.mode {
        UnitMode::Continuous | UnitMode::Mandatory => {
            if in_mc_band {
                let remaining = t.mc_entry.get_or_insert(s.mc_deact_delay);
                *remaining -= dt;
                if *remaining <= 0.0 {
                    st.mode = UnitMode::MomentaryCessation;
                    t.mc_entry = None;
                    t.mc_exit = None;
                }
            } else {
                t.mc_entry = None;
                st.mode = if continuous { UnitMode::Continuous } else { UnitMode::Mandatory };
            }
        }
        UnitMode::MomentaryCessation => {
            if continuous {
                let remaining = t.mc_exit.get_or_insert(s.mc_react_delay);
                *remaining -= dt;
                if *remaining <= 0.0 {
                    st.mode = UnitMode::Continuous;
                    t.mc_exit = None;
                }
            } else {
                t.mc_exit = None;
            }
        }
        UnitMode::Tripped => unreachable!(),
    }
}

fn apply_current_limit(ip: f64, iq: f64, i_max: f64, reactive_priority: bool) -> (f64, f64) {
    if ip.hypot(iq) <= i_max {
        return (ip, iq);
    }
    if reactive_priority {
        let iq_c = iq.clamp(-i_max, i_max);
        let head = (i_max * i_max - iq_c * iq_c).max(0.0).sqrt();
        (ip.clamp(-head, head), iq_c)
    } else {
        let ip_c = ip.clamp(-i_max, i_max);
        let head = (i_max * i_max - ip_c * ip_c).max(0.0).sqrt();
        (ip_c, iq.clamp(-head, head))
    }
}

/// Advance one inverter by `dt` at terminal voltage `v` and return its
/// injected current phasor in unit per-unit (network frame).
///
/// Tripped and momentarily ceased units emit zero current directly; their
/// current-path states are cleared so reactivation ramps back through the
/// `tpord`/`tg` lags.
pub fn der_step(unit: &DerUnit, st: &mut DerUnitState, v: Complex64, dt: f64) -> Complex64 {
    let v_mag = v.norm();
    st.v_filt = exp_track(st.v_filt, v_mag, dt, unit.ctrl.trv);
    vrt_update(unit, st, dt);
    if st.mode == UnitMode::Tripped {
        st.p_ord = 0.0;
        st.ip = 0.0;
        st.iq = 0.0;
        return Complex64::ZERO;
    }

    let vv_raw = unit.ctrl.volt_var.map_or(0.0, |p| volt_var_ref(st.v_filt, &p));
    let vw_raw = unit.ctrl.volt_watt.map_or(1.0, |p| volt_watt_ref(st.v_filt, &p));
    if let Some(p) = unit.ctrl.volt_var {
        st.q_vv_filt = exp_track(st.q_vv_filt, vv_raw, dt, p.tqv);
    }
    if let Some(p) = unit.ctrl.volt_watt {
        st.p_vw_filt = exp_track(st.p_vw_filt, vw_raw, dt, p.tpv);
    } else {
        st.p_vw_filt = 1.0;
    }

    if st.mode == UnitMode::MomentaryCessation {
        st.p_ord = 0.0;
        st.ip = 0.0;
        st.iq = 0.0;
        return Complex64::ZERO;
    }

    let p_target = clamp01(st.p_vw_filt);
    st.p_ord = exp_track(st.p_ord, p_target, dt, unit.ctrl.tpord);
    let ip_ref = (st.p_ord / st.v_filt.max(0.1)).clamp(0.0, unit.ctrl.i_max);
    st.ip = exp_track(st.ip, ip_ref, dt, unit.ctrl.tg);
    let iq_ref = st.q_vv_filt.clamp(-unit.ctrl.i_max, unit.ctrl.i_max);
    st.iq = exp_track(st.iq, iq_ref, dt, unit.ctrl.tiq);

    let (ip_out, iq_out) = apply_current_limit(
        st.ip,
        st.iq,
        unit.ctrl.i_max,
        st.v_filt < unit.ctrl.q_priority_below,
    );
    if v_mag < 1e-9 {
        return Complex64::ZERO;
    }
    Complex64::new(ip_out, -iq_out) * (v / v_mag)
}

/// Injected current magnitude coefficient at the unit's present state, in
/// unit per-unit. The network-frame current is `coeff * v/|v|`; the
/// coefficient stays fixed while the algebraic network is iterated within
/// one step.
pub fn unit_current_coeff(unit: &DerUnit, st: &DerUnitState) -> Complex64 {
    if !st.mode.is_active() {
        return Complex64::ZERO;
    }
    let (ip, iq) = apply_current_limit(
        st.ip,
        st.iq,
        unit.ctrl.i_max,
        st.v_filt < unit.ctrl.q_priority_below,
    );
    Complex64::new(ip, -iq)
}

/// Steady-state power exchanged at a constant terminal voltage magnitude,
/// in unit per-unit. Used to seed the power-flow initialization.
pub fn steady_injection_pu(unit: &DerUnit, v_mag: f64) -> Complex64 {
    let st = init_unit_state(unit, v_mag);
    let i = unit_current_coeff(unit, &st);
    Complex64::new(v_mag, 0.0) * i.conj()
}

/// Rated-power-weighted share of one code's units that are still exchanging
/// power (continuous or mandatory operation).
pub fn fleet_active_fraction(units: &[DerUnit], states: &[DerUnitState], code: GridCode) -> f64 {
    let mut active = 0.0;
    let mut total = 0.0;
    for (u, s) in units.iter().zip(states) {
        if u.code != code {
            continue;
        }
        total += u.p_rated_mw;
        if s.mode.is_active() {
            active += u.p_rated_mw;
        }
    }
    if total == 0.0 {
        1.0
    } else {
        active / total
    }
}
