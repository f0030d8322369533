//! Parameter fitting for the tripping models: bound-constrained particle
//! swarm search over per-(code, side) decision vectors, a sum-of-squared-
//! errors replay objective, and the mean-absolute-error metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::trip_models::{
    dera_simulate, pi_simulate, DerAParams, GridCode, ModelFamily, PiParams, PiRecovery, Side,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub swarm_size: usize,
    pub max_iters: usize,
    pub omega: f64,
    pub phi_p: f64,
    pub phi_g: f64,
    /// Stop when the best position moves less than this between updates.
    pub min_step: f64,
    /// Stop when the best objective improves by less than this.
    pub min_func_delta: f64,
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            swarm_size: 100,
            max_iters: 100,
            omega: 0.5,
            phi_p: 0.5,
            phi_g: 0.5,
            min_step: 1e-8,
            min_func_delta: 1e-8,
            seed: 0,
        }
    }
}

impl SwarmConfig {
    /// Budget for production fits against simulated suites. The stagnation
    /// cutoffs are disabled because tiny improvements occur mid-descent on
    /// the replay objective and would otherwise end the search early.
    pub fn thorough() -> Self {
        SwarmConfig {
            swarm_size: 150,
            max_iters: 400,
            min_step: 0.0,
            min_func_delta: 0.0,
            ..SwarmConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    FuncDelta,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    /// Best objective after init and after every completed iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Global-best particle swarm minimization with positions clipped to bounds.
///
/// All random draws come from one seeded stream in a fixed order; objective
/// evaluations may run in parallel but their results are consumed in particle
/// order, so the outcome is identical regardless of thread count.
pub fn pso_minimize<F>(objective: F, bounds: &[(f64, f64)], cfg: &SwarmConfig) -> PsoOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = bounds.len();
    assert!(dim > 0 && cfg.swarm_size >= 2, "degenerate swarm");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut xs: Vec<Vec<f64>> = (0..cfg.swarm_size)
        .map(|_| bounds.iter().map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo)).collect())
        .collect();
    let mut vs: Vec<Vec<f64>> = (0..cfg.swarm_size)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| {
                    let span = (hi - lo).abs();
                    -span + rng.random::<f64>() * 2.0 * span
                })
                .collect()
        })
        .collect();

    let eval_all = |xs: &[Vec<f64>]| -> Vec<f64> {
        xs.par_iter().map(|x| objective(x)).collect()
    };

    let mut fp = eval_all(&xs);
    let mut pbest = xs.clone();
    let (mut gi, mut fg) = (0usize, f64::INFINITY);
    for (i, &f) in fp.iter().enumerate() {
        if f < fg {
            gi = i;
            fg = f;
        }
    }
    let mut g = pbest[gi].clone();
    let mut history = vec![fg];
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;

    'outer: for _ in 0..cfg.max_iters {
        iterations += 1;
        // Draw both random matrices up front so the stream layout does not
        // depend on evaluation order.
        let rp: Vec<Vec<f64>> = (0..cfg.swarm_size)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let rg: Vec<Vec<f64>> = (0..cfg.swarm_size)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();

        for i in 0..cfg.swarm_size {
            for d in 0..dim {
                vs[i][d] = cfg.omega * vs[i][d]
                    + cfg.phi_p * rp[i][d] * (pbest[i][d] - xs[i][d])
                    + cfg.phi_g * rg[i][d] * (g[d] - xs[i][d]);
                xs[i][d] = (xs[i][d] + vs[i][d]).clamp(bounds[d].0, bounds[d].1);
            }
        }

        let fx = eval_all(&xs);
        for i in 0..cfg.swarm_size {
            if fx[i] < fp[i] {
                fp[i] = fx[i];
                pbest[i].clone_from(&xs[i]);
            }
        }

        let mut im = 0;
        for (i, &f) in fp.iter().enumerate() {
            if f < fp[im] {
                im = i;
            }
        }
        if fp[im] < fg {
            let step: f64 = g
                .iter()
                .zip(&pbest[im])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let delta = fg - fp[im];
            g.clone_from(&pbest[im]);
            fg = fp[im];
            history.push(fg);
            if delta <= cfg.min_func_delta {
                termination = Termination::FuncDelta;
                break 'outer;
            }
            if step <= cfg.min_step {
                termination = Termination::Step;
                break 'outer;
            }
        } else {
            history.push(fg);
        }
    }

    PsoOutcome { x: g, f: fg, history, iterations, termination }
}

/// Decision-vector layout of one fit. Voltage pairs are ordered so that
/// feasibility is always `x[0] < x[1]` and `x[2] < x[3]`, regardless of side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FitLayout {
    /// `[v0_p, v1_p, v0_i, v1_i, t_deact]` plus `[v0_rec, t_rec]` when
    /// reactivation is fitted.
    PiUnder { recovery: bool },
    /// `[v1_p, v0_p, v1_i, v0_i, t_deact]` (ascending order preserved) plus
    /// the recovery pair.
    PiOver { recovery: bool },
    /// `[v_l0, v_l1, v_h1, v_h0, t_vl0, t_vl1, t_vh0, t_vh1, v_r_frac]`,
    /// fitted on both sides jointly.
    DerA,
}

pub const TRV_DEFAULT: f64 = 0.02;

impl FitLayout {
    pub fn for_family(family: ModelFamily, code: GridCode, side: Side) -> FitLayout {
        match family {
            ModelFamily::DerA => FitLayout::DerA,
            ModelFamily::Pi => {
                // Only the newest code reconnects within the studied window.
                let recovery = code == GridCode::Inv2020;
                match side {
                    Side::Under => FitLayout::PiUnder { recovery },
                    Side::Over => FitLayout::PiOver { recovery },
                }
            }
        }
    }

    pub fn dim(self) -> usize {
        match self {
            FitLayout::PiUnder { recovery } | FitLayout::PiOver { recovery } => {
                if recovery {
                    7
                } else {
                    5
                }
            }
            FitLayout::DerA => 9,
        }
    }

    pub fn default_bounds(self) -> Vec<(f64, f64)> {
        const T: (f64, f64) = (0.01, 10.0);
        match self {
            FitLayout::PiUnder { recovery } => {
                let mut b = vec![(0.0, 1.0); 4];
                b.push(T);
                if recovery {
                    b.push((0.0, 1.0));
                    b.push(T);
                }
                b
            }
            FitLayout::PiOver { recovery } => {
                let mut b = vec![(1.0, 1.4); 4];
                b.push(T);
                if recovery {
                    b.push((1.0, 1.4));
                    b.push(T);
                }
                b
            }
            FitLayout::DerA => vec![
                (0.0, 1.0),
                (0.0, 1.0),
                (1.0, 1.4),
                (1.0, 1.4),
                T,
                T,
                T,
                T,
                (0.0, 1.0),
            ],
        }
    }

    /// Decode a position into model parameters, or return the constraint
    /// violation magnitude when the ordering is infeasible.
    pub fn decode(self, x: &[f64]) -> Result<FittedParams, f64> {
        assert_eq!(x.len(), self.dim(), "layout/vector mismatch");
        let gap = |lo: f64, hi: f64| (lo - hi).max(0.0);
        match self {
            FitLayout::PiUnder { recovery } | FitLayout::PiOver { recovery } => {
                let violation = gap(x[0], x[1]) + gap(x[2], x[3]);
                if violation > 0.0 || x[0] == x[1] || x[2] == x[3] {
                    return Err(violation);
                }
                let over = matches!(self, FitLayout::PiOver { .. });
                let (v0_p, v1_p, v0_i, v1_i) = if over {
                    (x[1], x[0], x[3], x[2])
                } else {
                    (x[0], x[1], x[2], x[3])
                };
                Ok(FittedParams::Pi(PiParams {
                    side: if over { Side::Over } else { Side::Under },
                    v0_p,
                    v1_p,
                    v0_i,
                    v1_i,
                    t_deact: x[4],
                    recovery: recovery.then(|| PiRecovery { v0_rec: x[5], t_rec: x[6] }),
                    trv: TRV_DEFAULT,
                }))
            }
            FitLayout::DerA => {
                let violation = gap(x[0], x[1]) + gap(x[2], x[3]);
                if violation > 0.0 || x[0] == x[1] || x[2] == x[3] || x[1] == x[2] {
                    return Err(violation);
                }
                Ok(FittedParams::DerA(DerAParams {
                    v_l0: x[0],
                    v_l1: x[1],
                    v_h1: x[2],
                    v_h0: x[3],
                    t_vl0: x[4],
                    t_vl1: x[5],
                    t_vh0: x[6],
                    t_vh1: x[7],
                    v_r_frac: x[8],
                    trv: TRV_DEFAULT,
                }))
            }
        }
    }
}

/// Parameters produced by a fit: one PI side block or one dwell-timer block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family", content = "params")]
pub enum FittedParams {
    Pi(PiParams),
    DerA(DerAParams),
}

impl FittedParams {
    pub fn simulate(&self, trace: &[f64], dt: f64) -> Vec<f64> {
        match self {
            FittedParams::Pi(p) => pi_simulate(p, trace, dt),
            FittedParams::DerA(p) => dera_simulate(p, trace, dt),
        }
    }
}

/// One (voltage, target fraction) pair the objective replays against.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub v: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub layout: FitLayout,
    pub traces: Vec<FitTrace>,
    pub dt: f64,
    pub bounds: Vec<(f64, f64)>,
}

impl FitProblem {
    pub fn new(layout: FitLayout, traces: Vec<FitTrace>, dt: f64) -> Result<Self, CoreError> {
        if traces.is_empty() {
            return Err(CoreError::config("fit requires at least one trace"));
        }
        for tr in &traces {
            if tr.v.len() != tr.target.len() || tr.v.is_empty() {
                return Err(CoreError::config("fit trace and target lengths differ"));
            }
        }
        Ok(FitProblem { layout, traces, dt, bounds: layout.default_bounds() })
    }
}

const INFEASIBLE_PENALTY: f64 = 1e9;

/// Sum of squared errors of the decoded model replayed from fresh state over
/// every trace; infeasible orderings get a large finite penalty that grows
/// with the violation.
pub fn objective(x: &[f64], prob: &FitProblem) -> f64 {
    match prob.layout.decode(x) {
        Err(violation) => INFEASIBLE_PENALTY * (1.0 + violation),
        Ok(params) => prob
            .traces
            .iter()
            .map(|tr| {
                let pred = params.simulate(&tr.v, prob.dt);
                pred.iter().zip(&tr.target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
            })
            .sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub layout: FitLayout,
    pub params: FittedParams,
    pub x: Vec<f64>,
    pub objective: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub wall_secs: f64,
    pub seed: u64,
}

/// Run one swarm search over a fit problem and decode the winner.
pub fn fit(prob: &FitProblem, cfg: &SwarmConfig) -> Result<FitResult, CoreError> {
    let started = std::time::Instant::now();
    let outcome = pso_minimize(|x| objective(x, prob), &prob.bounds, cfg);
    let params = prob.layout.decode(&outcome.x).map_err(|_| {
        CoreError::numerical("swarm search ended on an infeasible parameter ordering")
    })?;
    Ok(FitResult {
        layout: prob.layout,
        params,
        x: outcome.x,
        objective: outcome.f,
        history: outcome.history,
        iterations: outcome.iterations,
        termination: outcome.termination,
        wall_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
    })
}

/// Mean absolute error in percent.
pub fn mae(predicted: &[f64], actual: &[f64]) -> Result<f64, CoreError> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(CoreError::config("mae requires equal, nonempty series"));
    }
    let sum: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(100.0 * sum / predicted.len() as f64)
}
