//! Assembly of the study system: the 9-bus transmission case with `n_dg`
//! aggregate LV feeders attached at bus 5 through substation transformers,
//! each feeder hosting one inverter per grid code on every PV node.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::der_fleet::{sample_fleet, DerPlacement, DerUnit, FleetSpec};
use crate::error::CoreError;
use crate::fixtures::FixtureSet;
use crate::machines::MachineParams;
use crate::CODE_SHARES;

use super::{Branch, Bus, PhasorNetwork};

/// Dense external id of the transmission bus the feeders couple to.
pub const COUPLING_BUS_ID: usize = 5;

#[derive(Debug, Clone)]
pub struct PlacedMachine {
    pub params: MachineParams,
    pub bus_index: usize,
}

/// A fully assembled study system: network topology, machine parameters, and
/// the sampled inverter fleet. Dynamic state lives with the simulator, so one
/// system can be reused across scenarios.
#[derive(Debug, Clone)]
pub struct TestSystem {
    pub network: PhasorNetwork,
    pub machines: Vec<PlacedMachine>,
    pub units: Vec<DerUnit>,
    pub base_mva: f64,
    pub f_hz: f64,
    /// Dense index of the coupling bus (external id 5).
    pub coupling_bus: usize,
    pub n_dg: usize,
    pub seed: u64,
    pub shares: [f64; 3],
}

impl TestSystem {
    pub fn total_pv_mw(&self) -> f64 {
        self.units.iter().map(|u| u.p_rated_mw).sum()
    }

    pub fn total_feeder_load_mw(&self) -> f64 {
        // Feeder buses sit after the transmission buses.
        self.network.buses.iter().skip(9).map(|b| b.load.re).sum::<f64>() * self.base_mva
    }

    pub fn unit_count_by_code(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for u in &self.units {
            counts[u.code.index()] += 1;
        }
        counts
    }
}

/// Build the transmission + distribution co-simulation system.
///
/// Every feeder aggregates `fixture.aggregation` physical LV feeders: node
/// powers scale up by that factor and branch impedances down. Node loads and
/// per-code inverter ratings are drawn from normal distributions around their
/// set points (clipped at zero); ride-through thresholds are drawn uniformly
/// within each grid code's allowed ranges.
pub fn assemble_test_system(
    n_dg: usize,
    seed: u64,
    fixtures: &FixtureSet,
) -> Result<TestSystem, CoreError> {
    if n_dg == 0 {
        return Err(CoreError::config("n_dg must be at least 1"));
    }
    let tf = &fixtures.transmission;
    let ff = &fixtures.feeder;

    let mut network = PhasorNetwork::from_transmission_fixture(tf)?;
    let coupling_bus = network
        .buses
        .iter()
        .position(|b| b.id == COUPLING_BUS_ID)
        .ok_or_else(|| CoreError::config("transmission fixture lacks the coupling bus"))?;

    let base_mva = tf.base_mva;
    let z_scale = base_mva / (ff.s_base_mva * ff.aggregation);
    let tap_z = Complex64::new(ff.transformer.r_pu, ff.transformer.x_pu) * z_scale;
    let pv_mw_mean = ff.pv_kw_per_node / 1000.0 * ff.aggregation;
    let load_mw_mean = ff.load_kw_per_node / 1000.0 * ff.aggregation;
    let tan_phi = (1.0 / ff.load_power_factor.powi(2) - 1.0).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let load_dist = Normal::new(load_mw_mean, 0.2 * load_mw_mean)
        .map_err(|e| CoreError::config(format!("load distribution: {e}")))?;

    let mut placements: Vec<DerPlacement> = Vec::with_capacity(n_dg * ff.pv_nodes.len());
    for feeder in 0..n_dg {
        let offset = network.buses.len();
        let local_index = |node_id: usize| -> Result<usize, CoreError> {
            ff.nodes
                .iter()
                .position(|n| n.id == node_id)
                .map(|p| offset + p)
                .ok_or_else(|| CoreError::config(format!("feeder node {node_id} missing")))
        };
        for node in &ff.nodes {
            let name = format!("dg{}:{}", feeder + 1, node.name);
            network.buses.push(Bus::pq(1000 * (feeder + 1) + node.id, name));
        }
        network.branches.push(Branch::new(coupling_bus, local_index(ff.head_node)?, tap_z));
        for line in &ff.lines {
            network.branches.push(Branch::new(
                local_index(line.from)?,
                local_index(line.to)?,
                Complex64::new(line.r_pu, line.x_pu) * z_scale,
            ));
        }
        for &pv_node in &ff.pv_nodes {
            let idx = local_index(pv_node)?;
            let load_mw = load_dist.sample(&mut rng).max(0.0);
            network.buses[idx].load = Complex64::new(load_mw, load_mw * tan_phi) / base_mva;
            placements.push(DerPlacement { bus: idx, pv_mw: pv_mw_mean });
        }
    }

    let fleet = FleetSpec { placements, shares: CODE_SHARES, sigma_frac: 0.2 };
    // Separate stream so fleet draws do not alias the load draws above.
    let mut fleet_rng = ChaCha8Rng::seed_from_u64(seed);
    fleet_rng.set_stream(1);
    let units = sample_fleet(&fleet, &mut fleet_rng);

    let machines = tf
        .machines
        .iter()
        .map(|m| -> Result<PlacedMachine, CoreError> {
            let bus_index = network
                .buses
                .iter()
                .position(|b| b.id == m.bus)
                .ok_or_else(|| CoreError::config(format!("machine bus {} missing", m.bus)))?;
            Ok(PlacedMachine { params: m.clone(), bus_index })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(TestSystem {
        network,
        machines,
        units,
        base_mva,
        f_hz: tf.f_hz,
        coupling_bus,
        n_dg,
        seed,
        shares: CODE_SHARES,
    })
}
