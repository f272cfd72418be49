//! Feature records for a few ladders: triplet block, normalized time span
//! and the base/correction target split.

use polecast_core::featurize::{build_records, DatasetConfig, Driver, Excitation};
use polecast_core::{extract_tf, generate_spef, to_network, ValueRanges};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> polecast_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut items = Vec::new();
    for (k, order) in [2usize, 5, 9, 14].into_iter().enumerate() {
        let net = to_network(&generate_spef(order, k as u64, &ValueRanges::default())?, "I1:Y", "I2:A")?;
        let tau = extract_tf(&net)?.max_time_constant();
        for driver in Driver::ALL {
            items.push((net.clone(), Excitation { driver, stimulus: driver.stimulus(tau, &mut rng) }));
        }
    }
    let config = DatasetConfig { n_samples: 32, ..DatasetConfig::default() };
    let (records, stats) = build_records(&items, &config, 0)?;
    println!("NormStats: mu {:.4}, sigma {:.4}", stats.mu_t, stats.sigma_t);
    for r in &records {
        let corr = r.correction_target.max_abs();
        println!(
            "id {:>2} order {:>2} device {} t_norm {:+.3} active terms {} max |correction| {:.4}",
            r.id, r.order, r.device_id, r.t_norm, r.triplets.n_active, corr
        );
    }
    let r = &records[records.len() - 1];
    println!("\ntriplets of record {} (pole/|p|max, order, residue/|p|max):", r.id);
    for row in &r.triplets.rows[..r.triplets.n_active] {
        println!("  {:+.5} {} {:+.5}", row.pole_norm, row.order, row.residue_norm);
    }
    Ok(())
}
