//! Fourth-order two-axis synchronous machine with a DC1A-style excitation
//! system. Parameters are per-unit on the machine base; the network interface
//! converts to system base through the explicit MVA rating. Governors are not
//! modeled: mechanical power is held at its initial value.
//!
//! Machine dq convention: the q-axis leads the network reference by
//! `delta - pi/2`, so a phasor is brought into machine coordinates by
//! multiplying with `exp(-j(delta - pi/2))`; `re` is then the d component.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExciterParams {
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    pub vr_max: f64,
    pub vr_min: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MachineParams {
    /// External id of the terminal bus.
    pub bus: usize,
    /// Machine MVA base for the per-unit data below.
    pub mva: f64,
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_t: f64,
    pub xq_t: f64,
    pub td0_t: f64,
    pub tq0_t: f64,
    pub exciter: ExciterParams,
}

/// Dynamic state; also reused as the container for its time derivative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MachineState {
    /// Rotor angle, rad in the network reference frame.
    pub delta: f64,
    /// Speed deviation, pu.
    pub d_omega: f64,
    pub eq_t: f64,
    pub ed_t: f64,
    pub efd: f64,
    pub vr: f64,
    /// Washout feedback state; the stabilizer output is `kf/tf*efd - rf`.
    pub rf: f64,
}

/// Constant inputs fixed at initialization.
#[derive(Debug, Clone, Copy)]
pub struct MachineInputs {
    pub pm: f64,
    pub vref: f64,
}

impl MachineState {
    pub fn axpy(&self, dt: f64, d: &MachineState) -> MachineState {
        MachineState {
            delta: self.delta + dt * d.delta,
            d_omega: self.d_omega + dt * d.d_omega,
            eq_t: self.eq_t + dt * d.eq_t,
            ed_t: self.ed_t + dt * d.ed_t,
            efd: self.efd + dt * d.efd,
            vr: self.vr + dt * d.vr,
            rf: self.rf + dt * d.rf,
        }
    }

    pub fn max_abs(&self) -> f64 {
        [self.delta, self.d_omega, self.eq_t, self.ed_t, self.efd, self.vr, self.rf]
            .into_iter()
            .fold(0.0, |a, x| a.max(x.abs()))
    }
}

#[inline]
fn to_dq(delta: f64, phasor: Complex64) -> (f64, f64) {
    let rot = Complex64::from_polar(1.0, -(delta - std::f64::consts::FRAC_PI_2));
    let dq = phasor * rot;
    (dq.re, dq.im)
}

#[inline]
fn from_dq(delta: f64, d: f64, q: f64) -> Complex64 {
    Complex64::new(d, q) * Complex64::from_polar(1.0, delta - std::f64::consts::FRAC_PI_2)
}

/// Stator currents in machine per-unit from the transient-reactance algebraic
/// equations (stator resistance neglected).
pub fn stator_currents(p: &MachineParams, s: &MachineState, v: Complex64) -> (f64, f64) {
    let (vd, vq) = to_dq(s.delta, v);
    let id = (s.eq_t - vq) / p.xd_t;
    let iq = (vd - s.ed_t) / p.xq_t;
    (id, iq)
}

pub fn electrical_power(p: &MachineParams, s: &MachineState, id: f64, iq: f64) -> f64 {
    s.ed_t * id + s.eq_t * iq + (p.xq_t - p.xd_t) * id * iq
}

/// Current injected into the network, machine per-unit, network frame.
pub fn network_current(p: &MachineParams, s: &MachineState, v: Complex64) -> Complex64 {
    let (id, iq) = stator_currents(p, s, v);
    from_dq(s.delta, id, iq)
}

/// Norton admittance used to fold the machine into the network matrix; the
/// average of the two transient reactances keeps the remaining saliency
/// correction small and the per-step fixed point contractive.
pub fn norton_admittance(p: &MachineParams) -> Complex64 {
    Complex64::new(0.0, -2.0 / (p.xd_t + p.xq_t))
}

/// State derivatives given the terminal voltage phasor (machine per-unit).
pub fn derivatives(
    p: &MachineParams,
    s: &MachineState,
    inp: &MachineInputs,
    v: Complex64,
    omega_s: f64,
) -> MachineState {
    let (id, iq) = stator_currents(p, s, v);
    let pe = electrical_power(p, s, id, iq);
    let ex = &p.exciter;
    let vf = ex.kf / ex.tf * s.efd - s.rf;
    let verr = inp.vref - v.norm() - vf;
    let mut dvr = (ex.ka * verr - s.vr) / ex.ta;
    // Anti-windup on the regulator ceiling.
    if (s.vr >= ex.vr_max && dvr > 0.0) || (s.vr <= ex.vr_min && dvr < 0.0) {
        dvr = 0.0;
    }
    MachineState {
        delta: omega_s * s.d_omega,
        d_omega: (inp.pm - pe - p.d * s.d_omega) / (2.0 * p.h),
        eq_t: (-s.eq_t - (p.xd - p.xd_t) * id + s.efd) / p.td0_t,
        ed_t: (-s.ed_t + (p.xq - p.xq_t) * iq) / p.tq0_t,
        efd: (s.vr - ex.ke * s.efd) / ex.te,
        vr: dvr,
        rf: (ex.kf / ex.tf * s.efd - s.rf) / ex.tf,
    }
}

/// Clamp the regulator state to its ceiling after an integration stage.
pub fn enforce_limits(p: &MachineParams, s: &mut MachineState) {
    s.vr = s.vr.clamp(p.exciter.vr_min, p.exciter.vr_max);
}

/// Back-initialize the machine at a power-flow operating point so that all
/// state derivatives vanish. `s_inj` is the injected complex power in machine
/// per-unit at terminal voltage `v`.
pub fn init_from_power_flow(
    p: &MachineParams,
    v: Complex64,
    s_inj: Complex64,
    omega_s: f64,
) -> Result<(MachineState, MachineInputs), CoreError> {
    if v.norm() < 1e-6 {
        return Err(CoreError::numerical(format!("machine bus {}: dead terminal", p.bus)));
    }
    let i = (s_inj / v).conj();
    let delta = (v + Complex64::new(0.0, p.xq) * i).arg();
    let mut state = MachineState { delta, ..Default::default() };
    let (vd, vq) = to_dq(delta, v);
    let (id, iq) = {
        let idq = i * Complex64::from_polar(1.0, -(delta - std::f64::consts::FRAC_PI_2));
        (idq.re, idq.im)
    };
    state.eq_t = vq + p.xd_t * id;
    state.ed_t = vd - p.xq_t * iq;
    state.efd = state.eq_t + (p.xd - p.xd_t) * id;
    let ex = &p.exciter;
    state.vr = ex.ke * state.efd;
    if state.vr > ex.vr_max || state.vr < ex.vr_min {
        return Err(CoreError::numerical(format!(
            "machine bus {}: equilibrium field voltage {:.3} outside regulator ceiling",
            p.bus, state.vr
        )));
    }
    state.rf = ex.kf / ex.tf * state.efd;
    let inputs = MachineInputs {
        pm: electrical_power(p, &state, id, iq),
        vref: v.norm() + state.vr / ex.ka,
    };
    debug_assert!(derivatives(p, &state, &inputs, v, omega_s).max_abs() < 1e-9);
    Ok((state, inputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::FixtureSet;
    use crate::network::{solve_power_flow, PhasorNetwork};
    use approx::assert_relative_eq;

    const OMEGA_S: f64 = 2.0 * std::f64::consts::PI * 50.0;

    fn nine_bus_machines() -> Vec<(MachineParams, MachineState, MachineInputs, Complex64)> {
        let set = FixtureSet::embedded().unwrap();
        let net = PhasorNetwork::from_transmission_fixture(&set.transmission).unwrap();
        let sol = solve_power_flow(&net, &vec![Complex64::ZERO; 9], Default::default()).unwrap();
        set.transmission
            .machines
            .iter()
            .map(|p| {
                let idx = p.bus - 1;
                let s_machine = sol.s_injection[idx] * set.transmission.base_mva / p.mva;
                let (st, inp) = init_from_power_flow(p, sol.v[idx], s_machine, OMEGA_S).unwrap();
                (p.clone(), st, inp, sol.v[idx])
            })
            .collect()
    }

    #[test]
    fn equilibrium_derivatives_vanish() {
        for (p, st, inp, v) in nine_bus_machines() {
            let d = derivatives(&p, &st, &inp, v, OMEGA_S);
            assert!(d.max_abs() <= 1e-9, "bus {} derivative {:?}", p.bus, d);
        }
    }

    #[test]
    fn injection_reproduces_power_flow_point() {
        let set = FixtureSet::embedded().unwrap();
        let net = PhasorNetwork::from_transmission_fixture(&set.transmission).unwrap();
        let sol = solve_power_flow(&net, &vec![Complex64::ZERO; 9], Default::default()).unwrap();
        for (p, st, _inp, v) in nine_bus_machines() {
            let i = network_current(&p, &st, v) * p.mva / set.transmission.base_mva;
            let s = v * i.conj();
            let expect = sol.s_injection[p.bus - 1];
            assert_relative_eq!(s.re, expect.re, epsilon = 1e-6);
            assert_relative_eq!(s.im, expect.im, epsilon = 1e-6);
        }
    }

    #[test]
    fn speed_deviation_drives_angle() {
        let (p, mut st, inp, v) = nine_bus_machines().remove(0);
        st.d_omega = 0.01;
        let d = derivatives(&p, &st, &inp, v, OMEGA_S);
        assert_relative_eq!(d.delta, 0.01 * OMEGA_S, max_relative = 1e-12);
    }

    #[test]
    fn mechanical_step_accelerates_by_inverse_inertia() {
        let (p, st, mut inp, v) = nine_bus_machines().remove(0);
        inp.pm += 0.1;
        let d = derivatives(&p, &st, &inp, v, OMEGA_S);
        assert_relative_eq!(d.d_omega, 0.1 / (2.0 * p.h), max_relative = 1e-9);
    }

    #[test]
    fn aligned_internal_voltage_gives_zero_current() {
        let (p, _, _, _) = nine_bus_machines().remove(0);
        let v = Complex64::from_polar(1.02, 0.3);
        let s = MachineState {
            delta: 0.3,
            eq_t: 1.02,
            ed_t: 0.0,
            ..Default::default()
        };
        let (id, iq) = stator_currents(&p, &s, v);
        assert!(id.abs() < 1e-14 && iq.abs() < 1e-14);
    }

    #[test]
    fn frame_rotation_invariance() {
        let (p, st, _, v) = nine_bus_machines().remove(1);
        let (id0, iq0) = stator_currents(&p, &st, v);
        let pe0 = electrical_power(&p, &st, id0, iq0);
        for phi in [0.3, -1.2, 2.9] {
            let rot = Complex64::from_polar(1.0, phi);
            let mut s2 = st;
            s2.delta += phi;
            let (id, iq) = stator_currents(&p, &s2, v * rot);
            assert_relative_eq!(id, id0, epsilon = 1e-12);
            assert_relative_eq!(iq, iq0, epsilon = 1e-12);
            assert_relative_eq!(electrical_power(&p, &s2, id, iq), pe0, epsilon = 1e-12);
            let i_rot = network_current(&p, &s2, v * rot);
            let i0 = network_current(&p, &st, v);
            assert!((i_rot - i0 * rot).norm() < 1e-12);
        }
    }

    #[test]
    fn regulator_tracks_error_with_first_order_law() {
        let (p, _, _, _) = nine_bus_machines().remove(0);
        let ex = &p.exciter;
        // Frozen field circuit: only the Vr state moves. Expect
        // vr(t) = ka*de*(1 - exp(-t/ta)).
        let de = 0.02;
        let inp = MachineInputs { pm: 0.0, vref: 1.0 + de };
        let v = Complex64::new(1.0, 0.0);
        let mut vr = 0.0;
        let dt = 1e-5;
        let steps = (0.1 / dt) as usize;
        for _ in 0..steps {
            // Euler on the isolated vr equation, fine at this step size.
            let dvr = (ex.ka * (inp.vref - v.norm()) - vr) / ex.ta;
            vr += dt * dvr;
        }
        let expect = ex.ka * de * (1.0 - (-0.1f64 / ex.ta).exp());
        assert_relative_eq!(vr, expect, max_relative = 1e-3);
    }

    #[test]
    fn regulator_ceiling_is_windup_free() {
        let (p, mut st, mut inp, v) = nine_bus_machines().remove(0);
        inp.vref += 10.0;
        st.vr = p.exciter.vr_max;
        let d = derivatives(&p, &st, &inp, v, OMEGA_S);
        assert_eq!(d.vr, 0.0);
        st.vr = p.exciter.vr_min;
        inp.vref -= 20.0;
        let d = derivatives(&p, &st, &inp, v, OMEGA_S);
        assert_eq!(d.vr, 0.0);
    }

    #[test]
    fn one_second_hold_at_equilibrium_does_not_drift() {
        // Heun integration against a frozen terminal phasor.
        for (p, st0, inp, v) in nine_bus_machines() {
            let mut st = st0;
            let dt = 1e-3;
            for _ in 0..1000 {
                let k1 = derivatives(&p, &st, &inp, v, OMEGA_S);
                let pred = st.axpy(dt, &k1);
                let k2 = derivatives(&p, &pred, &inp, v, OMEGA_S);
                st = st.axpy(dt / 2.0, &k1).axpy(dt / 2.0, &k2);
                enforce_limits(&p, &mut st);
            }
            let drift = MachineState {
                delta: st.delta - st0.delta,
                d_omega: st.d_omega - st0.d_omega,
                eq_t: st.eq_t - st0.eq_t,
                ed_t: st.ed_t - st0.ed_t,
                efd: st.efd - st0.efd,
                vr: st.vr - st0.vr,
                rf: st.rf - st0.rf,
            };
            assert!(drift.max_abs() < 1e-6, "bus {} drifted {:?}", p.bus, drift);
        }
    }
}
