//! Newton-Raphson power flow in polar form. Loads are constant-power here;
//! the dynamic model folds them into the admittance matrix afterwards.

use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::CoreError;

use super::{BusKind, PhasorNetwork};

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions { tolerance: 1e-8, max_iterations: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub v: DVector<Complex64>,
    /// Net complex power injected at each bus by the converged solution
    /// (generation minus load as seen from the network).
    pub s_injection: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Solve the power flow for `net` with additional constant-power injections
/// (e.g. inverter operating points) per bus.
pub fn solve_power_flow(
    net: &PhasorNetwork,
    extra_injection: &[Complex64],
    opts: PowerFlowOptions,
) -> Result<PowerFlowSolution, CoreError> {
    let n = net.n();
    if extra_injection.len() != n {
        return Err(CoreError::config(format!(
            "extra_injection length {} does not match bus count {n}",
            extra_injection.len()
        )));
    }
    let y = net.y_bus();
    let g = y.map(|c| c.re);
    let b = y.map(|c| c.im);

    // Unknown ordering: angles for all non-slack buses, then |V| for PQ buses.
    let angle_vars: Vec<usize> =
        (0..n).filter(|&i| net.buses[i].kind != BusKind::Slack).collect();
    let vmag_vars: Vec<usize> = (0..n).filter(|&i| net.buses[i].kind == BusKind::Pq).collect();

    let p_spec: Vec<f64> = (0..n)
        .map(|i| net.buses[i].p_gen - net.buses[i].load.re + extra_injection[i].re)
        .collect();
    let q_spec: Vec<f64> =
        (0..n).map(|i| -net.buses[i].load.im + extra_injection[i].im).collect();

    let mut vm: Vec<f64> = net
        .buses
        .iter()
        .map(|bus| match bus.kind {
            BusKind::Slack | BusKind::Pv => bus.v_set,
            BusKind::Pq => 1.0,
        })
        .collect();
    let mut th = vec![0.0_f64; n];

    let calc = |vm: &[f64], th: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let mut pi = 0.0;
            let mut qi = 0.0;
            for k in 0..n {
                let gik = g[(i, k)];
                let bik = b[(i, k)];
                if gik == 0.0 && bik == 0.0 {
                    continue;
                }
                let t = th[i] - th[k];
                let (s, c) = t.sin_cos();
                pi += vm[k] * (gik * c + bik * s);
                qi += vm[k] * (gik * s - bik * c);
            }
            p[i] = vm[i] * pi;
            q[i] = vm[i] * qi;
        }
        (p, q)
    };

    let m = angle_vars.len() + vmag_vars.len();
    let mut iterations = 0;
    let mut max_mismatch;
    loop {
        let (p, q) = calc(&vm, &th);
        let mut f = DVector::<f64>::zeros(m);
        for (r, &i) in angle_vars.iter().enumerate() {
            f[r] = p_spec[i] - p[i];
        }
        for (r, &i) in vmag_vars.iter().enumerate() {
            f[angle_vars.len() + r] = q_spec[i] - q[i];
        }
        max_mismatch = f.amax();
        if max_mismatch <= opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(CoreError::PowerFlowDiverged { mismatch: max_mismatch, iterations });
        }

        let mut jac = DMatrix::<f64>::zeros(m, m);
        for (r, &i) in angle_vars.iter().enumerate() {
            // dP_i rows.
            for (cidx, &k) in angle_vars.iter().enumerate() {
                jac[(r, cidx)] = if i == k {
                    -q[i] - b[(i, i)] * vm[i] * vm[i]
                } else {
                    let t = th[i] - th[k];
                    vm[i] * vm[k] * (g[(i, k)] * t.sin() - b[(i, k)] * t.cos())
                };
            }
            for (cidx, &k) in vmag_vars.iter().enumerate() {
                jac[(r, angle_vars.len() + cidx)] = if i == k {
                    p[i] / vm[i] + g[(i, i)] * vm[i]
                } else {
                    let t = th[i] - th[k];
                    vm[i] * (g[(i, k)] * t.cos() + b[(i, k)] * t.sin())
                };
            }
        }
        for (r, &i) in vmag_vars.iter().enumerate() {
            // dQ_i rows.
            let row = angle_vars.len() + r;
            for (cidx, &k) in angle_vars.iter().enumerate() {
                jac[(row, cidx)] = if i == k {
                    p[i] - g[(i, i)] * vm[i] * vm[i]
                } else {
                    let t = th[i] - th[k];
                    -vm[i] * vm[k] * (g[(i, k)] * t.cos() + b[(i, k)] * t.sin())
                };
            }
            for (cidx, &k) in vmag_vars.iter().enumerate() {
                jac[(row, angle_vars.len() + cidx)] = if i == k {
                    q[i] / vm[i] - b[(i, i)] * vm[i]
                } else {
                    let t = th[i] - th[k];
                    vm[i] * (g[(i, k)] * t.sin() - b[(i, k)] * t.cos())
                };
            }
        }

        let dx = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| CoreError::numerical("singular power-flow Jacobian"))?;
        for (r, &i) in angle_vars.iter().enumerate() {
            th[i] += dx[r];
        }
        for (r, &i) in vmag_vars.iter().enumerate() {
            vm[i] += dx[angle_vars.len() + r];
            if vm[i] <= 0.0 {
                return Err(CoreError::numerical(format!(
                    "power flow drove |V| at bus {} non-positive",
                    net.buses[i].id
                )));
            }
        }
        iterations += 1;
    }

    let v = DVector::from_iterator(
        n,
        (0..n).map(|i| Complex::from_polar(vm[i], th[i])),
    );
    let i_inj = &y * &v;
    let s_injection: Vec<Complex64> =
        (0..n).map(|i| v[i] * i_inj[i].conj()).collect();
    Ok(PowerFlowSolution { v, s_injection, iterations, max_mismatch })
}
