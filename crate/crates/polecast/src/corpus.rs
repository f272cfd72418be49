//! Seeded synthetic corpora: random RC ladders and the excitations applied
//! to them.

use polecast_core::featurize::{build_records, DatasetConfig, Driver, Excitation, FeatureRecord, NormStats};
use polecast_core::{extract_tf, generate_spef, to_network, RcNetwork, SpefNet, ValueRanges};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One generated net and the seed that reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub index: usize,
    pub order: usize,
    pub seed: u64,
}

/// Draws `n` (order, seed) pairs with orders uniform in `[order_min, order_max]`.
pub fn net_specs(n: usize, order_min: usize, order_max: usize, seed: u64) -> Result<Vec<NetSpec>> {
    if order_min == 0 || order_min > order_max {
        return Err(CliError::Usage(format!("order range [{order_min}, {order_max}] is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|index| NetSpec { index, order: rng.random_range(order_min..=order_max), seed: rng.random() })
        .collect())
}

pub fn generate(spec: &NetSpec, ranges: &ValueRanges) -> Result<SpefNet> {
    Ok(generate_spef(spec.order, spec.seed, ranges)?)
}

/// Circuit between the net's driver pin and its first receiver pin.
pub fn network(net: &SpefNet) -> Result<RcNetwork> {
    let driver = net.driver_pin().ok_or_else(|| CliError::Usage(format!("net {} has no driver pin", net.name)))?;
    let receiver =
        net.receiver_pin().ok_or_else(|| CliError::Usage(format!("net {} has no receiver pin", net.name)))?;
    Ok(to_network(net, driver, receiver)?)
}

/// `per_net` excitations for one network, cycling through the driver
/// families. Ramp rise times scale with the slowest time constant.
pub fn excitations(net: &RcNetwork, per_net: usize, drivers: &[Driver], rng: &mut ChaCha8Rng) -> Result<Vec<Excitation>> {
    let tau = extract_tf(net)?.max_time_constant();
    Ok((0..per_net)
        .map(|k| {
            let driver = drivers[k % drivers.len()];
            Excitation { driver, stimulus: driver.stimulus(tau, rng) }
        })
        .collect())
}

/// Corpus recipe: `n_nets` random ladders, each driven `per_net` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_nets: usize,
    pub per_net: usize,
    pub order_min: usize,
    pub order_max: usize,
    pub seed: u64,
    #[serde(default)]
    pub ranges: ValueRanges,
    #[serde(default)]
    pub dataset: DatasetConfig,
}

impl CorpusConfig {
    /// One net per record, orders 2 to 15.
    pub fn desk(n_records: usize, seed: u64) -> Self {
        CorpusConfig {
            n_nets: n_records,
            per_net: 1,
            order_min: 2,
            order_max: 15,
            seed,
            ranges: ValueRanges::default(),
            dataset: DatasetConfig::default(),
        }
    }

    pub fn items(&self) -> Result<Vec<(RcNetwork, Excitation)>> {
        let specs = net_specs(self.n_nets, self.order_min, self.order_max, self.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ EXCITATION_SALT);
        let mut items = Vec::with_capacity(self.n_nets * self.per_net);
        for spec in &specs {
            let net = network(&generate(spec, &self.ranges)?)?;
            // Single-excitation corpora still see every driver family.
            let offset = spec.index % Driver::ALL.len();
            let drivers: Vec<Driver> = (0..Driver::ALL.len()).map(|k| Driver::ALL[(k + offset) % 3]).collect();
            for ex in excitations(&net, self.per_net, &drivers, &mut rng)? {
                items.push((net.clone(), ex));
            }
        }
        Ok(items)
    }

    pub fn records(&self) -> Result<(Vec<FeatureRecord>, NormStats)> {
        Ok(build_records(&self.items()?, &self.dataset, self.seed)?)
    }
}

const EXCITATION_SALT: u64 = 0xe8c1_7a71;
