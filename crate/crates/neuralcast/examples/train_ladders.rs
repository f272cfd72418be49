//! Two-stage training on a small corpus of random ladders, then a checkpoint
//! round trip and evaluation.
//!
//! cargo run -p neuralcast --example train_ladders -- [nets] [epochs]

use neuralcast::{checkpoint, evaluate, train, ModelConfig, TrainConfig};
use polecast_core::featurize::{build_records, DatasetConfig, Driver, Excitation};
use polecast_core::{extract_tf, generate_spef, to_network, ValueRanges};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let nets: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(15);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut items = Vec::new();
    for k in 0..nets {
        let spef = generate_spef(rng.random_range(2..=10), k as u64, &ValueRanges::default())?;
        let net = to_network(&spef, "I1:Y", "I2:A")?;
        let tau = extract_tf(&net)?.max_time_constant();
        let driver = Driver::ALL[k % 3];
        items.push((net, Excitation { driver, stimulus: driver.stimulus(tau, &mut rng) }));
    }
    let data_cfg = DatasetConfig { n_samples: 32, ..DatasetConfig::default() };
    let (records, stats) = build_records(&items, &data_cfg, 0)?;

    let model_cfg = ModelConfig {
        d_embed: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        conv_channels: 8,
        hidden: 16,
        seq_len: 32,
        target_len: 32,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig { epochs, lr: 3e-3, verbose: true, ..TrainConfig::default() };
    let (model, report) = train(&records, Some(stats), model_cfg, &train_cfg)?;
    println!("validation RMSE {:.5}, base only {:.5}, {:.1} s", report.val_rmse, report.base_only_val_rmse, report.wall_time_s);

    let restored = checkpoint::from_json(&checkpoint::to_json(&model))?;
    let eval = evaluate(&restored, &records)?;
    println!("all records after reload: RMSE {:.5}, base only {:.5}", eval.report.rmse, eval.report.base_rmse);
    Ok(())
}
