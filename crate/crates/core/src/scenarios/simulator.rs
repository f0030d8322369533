//! Fixed-step phasor co-simulation. Machine dynamics advance with an
//! explicit trapezoidal step; the algebraic network is re-solved at each
//! stage by fixed-point iteration on the factored admittance matrix, with
//! machine Norton admittances and constant-impedance loads folded in so the
//! remaining voltage-dependent injections stay small. Inverter currents are
//! held over the step (their lags are slow against one step) and the fleet
//! states advance once per step on the final voltage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::{Scenario, SimulationTrace, SuiteKind, TraceMeta};
use crate::der_fleet::{
    der_step, fleet_active_fraction, init_unit_state, steady_injection_pu, unit_current_coeff,
    DerUnitState,
};
use crate::error::CoreError;
use crate::machines::{self, MachineInputs, MachineState};
use crate::network::{solve_power_flow, DisturbanceEvent, FactoredY, PowerFlowOptions, TestSystem};
use crate::trip_models::{weighted_fraction, GridCode, Side};
use crate::util::exp_track;

/// Measurement filter on the recorded substation voltage, s.
pub const V_SS_FILTER: f64 = 0.02;

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITERS: usize = 200;
/// Power-flow / inverter-injection alternation during initialization.
const INIT_MAX_ROUNDS: usize = 40;
const INIT_TOL: f64 = 1e-12;
/// Allowed gap between the power-flow point and the first algebraic solve.
const INIT_CONSISTENCY_TOL: f64 = 1e-6;

struct Simulator<'a> {
    sys: &'a TestSystem,
    scenario: &'a Scenario,
    lu_nominal: FactoredY,
    lu_fault: Option<FactoredY>,
    machine_states: Vec<MachineState>,
    machine_inputs: Vec<MachineInputs>,
    /// Machine current scale to the system base.
    machine_scale: Vec<f64>,
    der_states: Vec<DerUnitState>,
    /// Unit current scale to the system base.
    der_scale: Vec<f64>,
    /// Aggregated inverter current coefficient per bus; multiplied by the
    /// local voltage direction inside the network solve.
    der_bus_current: Vec<Complex64>,
    v: DVector<Complex64>,
    v_ss_filt: f64,
    omega_s: f64,
}

impl<'a> Simulator<'a> {
    fn new(sys: &'a TestSystem, scenario: &'a Scenario) -> Result<Self, CoreError> {
        scenario.validate()?;
        let n = sys.network.n();
        if scenario.disturbance.bus >= n {
            return Err(CoreError::config(format!(
                "scenario {}: disturbance bus {} outside the network",
                scenario.name, scenario.disturbance.bus
            )));
        }

        // Operating point: alternate the power flow with the inverter
        // injections it implies until both agree.
        let der_scale: Vec<f64> = sys.units.iter().map(|u| u.p_rated_mw / sys.base_mva).collect();
        let pf_opts = PowerFlowOptions::default();
        let mut extra = vec![Complex64::ZERO; n];
        let mut sol = solve_power_flow(&sys.network, &extra, pf_opts)?;
        let mut settled = false;
        for _ in 0..INIT_MAX_ROUNDS {
            let mut next = vec![Complex64::ZERO; n];
            for (u, &sc) in sys.units.iter().zip(&der_scale) {
                next[u.bus] += steady_injection_pu(u, sol.v[u.bus].norm()) * sc;
            }
            let moved = next
                .iter()
                .zip(&extra)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            extra = next;
            sol = solve_power_flow(&sys.network, &extra, pf_opts)?;
            if moved <= INIT_TOL {
                settled = true;
                break;
            }
        }
        if !settled {
            return Err(CoreError::numerical(
                "operating point did not settle between power flow and inverter injections",
            ));
        }

        let omega_s = 2.0 * std::f64::consts::PI * sys.f_hz;
        let mut machine_states = Vec::with_capacity(sys.machines.len());
        let mut machine_inputs = Vec::with_capacity(sys.machines.len());
        let mut machine_scale = Vec::with_capacity(sys.machines.len());
        for pm in &sys.machines {
            let b = pm.bus_index;
            let s_sys = sol.s_injection[b] + sys.network.buses[b].load - extra[b];
            let s_machine = s_sys * (sys.base_mva / pm.params.mva);
            let (st, inp) = machines::init_from_power_flow(&pm.params, sol.v[b], s_machine, omega_s)?;
            machine_states.push(st);
            machine_inputs.push(inp);
            machine_scale.push(pm.params.mva / sys.base_mva);
        }

        let mut y_dyn = sys.network.y_bus();
        for (i, bus) in sys.network.buses.iter().enumerate() {
            if bus.load != Complex64::ZERO {
                y_dyn[(i, i)] += bus.load.conj() / sol.v[i].norm_sqr();
            }
        }
        for (pm, &sc) in sys.machines.iter().zip(&machine_scale) {
            y_dyn[(pm.bus_index, pm.bus_index)] += machines::norton_admittance(&pm.params) * sc;
        }
        let lu_fault = if scenario.disturbance.has_shunt() {
            let overlay = scenario.disturbance.overlay_at(scenario.disturbance.t_start);
            let (b, y) = overlay.shunt.expect("fault overlay is active at onset");
            let mut y_f: DMatrix<Complex64> = y_dyn.clone();
            y_f[(b, b)] += y;
            Some(FactoredY::new(y_f)?)
        } else {
            None
        };
        let lu_nominal = FactoredY::new(y_dyn)?;

        let der_states: Vec<DerUnitState> = sys
            .units
            .iter()
            .map(|u| init_unit_state(u, sol.v[u.bus].norm()))
            .collect();

        let mut sim = Simulator {
            sys,
            scenario,
            lu_nominal,
            lu_fault,
            machine_states,
            machine_inputs,
            machine_scale,
            der_states,
            der_scale,
            der_bus_current: vec![Complex64::ZERO; n],
            v_ss_filt: sol.v[sys.coupling_bus].norm(),
            v: sol.v,
            omega_s,
        };
        sim.refresh_der_currents();

        // The dynamic formulation must reproduce the power-flow point before
        // anything moves, otherwise every later sample carries the offset.
        if scenario.disturbance.t_start > 0.0 {
            let v0 = sim.solve_network(&sim.machine_states, 0.0, &sim.v)?;
            let gap = v0
                .iter()
                .zip(sim.v.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if gap > INIT_CONSISTENCY_TOL {
                return Err(CoreError::numerical(format!(
                    "initial algebraic solve deviates from the power flow by {gap:.3e}"
                )));
            }
            sim.v = v0;
        }
        Ok(sim)
    }

    fn refresh_der_currents(&mut self) {
        self.der_bus_current.fill(Complex64::ZERO);
        for ((u, st), &sc) in self.sys.units.iter().zip(&self.der_states).zip(&self.der_scale) {
            let c = unit_current_coeff(u, st);
            if c != Complex64::ZERO {
                self.der_bus_current[u.bus] += c * sc;
            }
        }
    }

    /// One warm-started fixed-point pass over the algebraic network at time
    /// `t`, with machine currents evaluated at `mstates`.
    fn solve_network(
        &self,
        mstates: &[MachineState],
        t: f64,
        guess: &DVector<Complex64>,
    ) -> Result<DVector<Complex64>, CoreError> {
        let overlay = self.scenario.disturbance.overlay_at(t);
        let lu = if overlay.shunt.is_some() {
            self.lu_fault.as_ref().expect("fault factorization exists")
        } else {
            &self.lu_nominal
        };
        let n = self.sys.network.n();
        let mut v = guess.clone();
        for _ in 0..FIXED_POINT_MAX_ITERS {
            let mut inj = DVector::from_element(n, Complex64::ZERO);
            for ((pm, st), &sc) in self.sys.machines.iter().zip(mstates).zip(&self.machine_scale) {
                let b = pm.bus_index;
                let i_m = machines::network_current(&pm.params, st, v[b]);
                inj[b] += (i_m + machines::norton_admittance(&pm.params) * v[b]) * sc;
            }
            for (b, &c) in self.der_bus_current.iter().enumerate() {
                if c != Complex64::ZERO {
                    let m = v[b].norm();
                    if m > 1e-9 {
                        inj[b] += c * (v[b] / m);
                    }
                }
            }
            if let Some((b, s)) = overlay.injection {
                if v[b].norm() > 1e-6 {
                    inj[b] += (s / v[b]).conj();
                }
            }
            let v_new = lu.solve(&inj)?;
            let err = v_new
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            v = v_new;
            if err <= FIXED_POINT_TOL {
                return Ok(v);
            }
        }
        Err(CoreError::numerical(format!(
            "network fixed point stalled at t = {t:.4} in scenario {}",
            self.scenario.name
        )))
    }

    fn machine_derivs(&self, states: &[MachineState], v: &DVector<Complex64>) -> Vec<MachineState> {
        self.sys
            .machines
            .iter()
            .zip(states)
            .zip(&self.machine_inputs)
            .map(|((pm, st), inp)| {
                machines::derivatives(&pm.params, st, inp, v[pm.bus_index], self.omega_s)
            })
            .collect()
    }

    fn step(&mut self, t0: f64, t1: f64) -> Result<(), CoreError> {
        let dt = t1 - t0;

        let v_a = self.solve_network(&self.machine_states, t0, &self.v)?;
        let f_a = self.machine_derivs(&self.machine_states, &v_a);

        let mut predicted: Vec<MachineState> = self
            .machine_states
            .iter()
            .zip(&f_a)
            .map(|(s, f)| s.axpy(dt, f))
            .collect();
        for (pm, s) in self.sys.machines.iter().zip(&mut predicted) {
            machines::enforce_limits(&pm.params, s);
        }
        let v_b = self.solve_network(&predicted, t1, &v_a)?;
        let f_b = self.machine_derivs(&predicted, &v_b);

        for ((s, fa), fb) in self.machine_states.iter_mut().zip(&f_a).zip(&f_b) {
            *s = s.axpy(0.5 * dt, fa).axpy(0.5 * dt, fb);
        }
        for (pm, s) in self.sys.machines.iter().zip(&mut self.machine_states) {
            machines::enforce_limits(&pm.params, s);
        }
        self.v = self.solve_network(&self.machine_states, t1, &v_b)?;

        for (idx, u) in self.sys.units.iter().enumerate() {
            der_step(u, &mut self.der_states[idx], self.v[u.bus], dt);
        }
        self.refresh_der_currents();
        self.v_ss_filt = exp_track(self.v_ss_filt, self.v[self.sys.coupling_bus].norm(), dt, V_SS_FILTER);
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        let mut f = [0.0; 3];
        for code in GridCode::ALL {
            f[code.index()] = fleet_active_fraction(&self.sys.units, &self.der_states, code);
        }
        f
    }
}

/// Run one scenario against the assembled system and record the coupling-bus
/// voltage plus per-code active fractions at every step.
pub fn run_cosimulation(sys: &TestSystem, scenario: &Scenario) -> Result<SimulationTrace, CoreError> {
    let mut sim = Simulator::new(sys, scenario)?;
    let n_steps = scenario.steps();
    let mut tr = SimulationTrace {
        meta: TraceMeta {
            scenario: scenario.clone(),
            n_dg: sys.n_dg,
            system_seed: sys.seed,
            shares: sys.shares,
            unit_counts: sys.unit_count_by_code(),
        },
        t: Vec::with_capacity(n_steps + 1),
        v_ss_filt: Vec::with_capacity(n_steps + 1),
        frac: [
            Vec::with_capacity(n_steps + 1),
            Vec::with_capacity(n_steps + 1),
            Vec::with_capacity(n_steps + 1),
        ],
        frac_weighted: Vec::with_capacity(n_steps + 1),
    };
    let mut record = |t: f64, sim: &Simulator| -> Result<(), CoreError> {
        if !sim.v_ss_filt.is_finite() {
            return Err(CoreError::numerical(format!(
                "non-finite voltage at t = {t:.4} in scenario {}",
                scenario.name
            )));
        }
        let f = sim.fractions();
        tr.t.push(t);
        tr.v_ss_filt.push(sim.v_ss_filt);
        for code in GridCode::ALL {
            tr.frac[code.index()].push(f[code.index()]);
        }
        tr.frac_weighted.push(weighted_fraction(f, sys.shares));
        Ok(())
    };
    record(0.0, &sim)?;
    for k in 0..n_steps {
        let t0 = k as f64 * scenario.dt;
        let t1 = (k + 1) as f64 * scenario.dt;
        sim.step(t0, t1)?;
        record(t1, &sim)?;
    }
    Ok(tr)
}

/// Run a batch of scenarios in parallel. Traces come back in input order and
/// are bitwise independent of the thread count.
pub fn run_suite(sys: &TestSystem, scenarios: &[Scenario]) -> Result<Vec<SimulationTrace>, CoreError> {
    scenarios.par_iter().map(|sc| run_cosimulation(sys, sc)).collect()
}

/// Largest deviation of any bus voltage from the initial operating point
/// over an undisturbed run. The disturbance is a zero-magnitude injection
/// step, so the full integration loop runs but nothing should move; a sound
/// initialization keeps the result near zero.
pub fn no_disturbance_drift(sys: &TestSystem, horizon: f64, dt: f64) -> Result<f64, CoreError> {
    let scenario = Scenario {
        name: "hold".into(),
        kind: SuiteKind::InSample,
        side: Side::Under,
        disturbance: DisturbanceEvent::injection_step(sys.coupling_bus, 0.0, 0.0, horizon / 2.0)?,
        horizon,
        dt,
    };
    let mut sim = Simulator::new(sys, &scenario)?;
    let v0 = sim.v.clone();
    let mut worst = 0.0f64;
    for k in 0..scenario.steps() {
        let t0 = k as f64 * dt;
        sim.step(t0, (k + 1) as f64 * dt)?;
        for (a, b) in sim.v.iter().zip(v0.iter()) {
            worst = worst.max((a - b).norm());
        }
    }
    Ok(worst)
}
