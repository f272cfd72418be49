//! The command pipeline end to end in a scratch directory: generate nets,
//! decompose one, build a dataset, train, evaluate.

use neuralcast::ModelConfig;
use polecast::commands::{self, ExperimentConfig};
use polecast_core::featurize::{DatasetConfig, Driver};
use polecast_core::ValueRanges;

fn main() -> polecast::Result<()> {
    let dir = std::env::temp_dir().join("polecast-pipeline");
    let nets = dir.join("nets");
    let manifest = commands::gen(24, 2, 12, 3, &ValueRanges::default(), &nets)?;
    println!("generated {} nets in {}", manifest.nets.len(), nets.display());

    let d = commands::decompose(&nets.join(&manifest.nets[0].file), true)?;
    println!(
        "{}: order {}, reconstruction error {:.2e}",
        d.net,
        d.transfer_function.order(),
        d.check_error.unwrap_or(f64::NAN)
    );

    let data = dir.join("data.jsonl");
    let config = DatasetConfig { n_samples: 32, ..DatasetConfig::default() };
    let summary = commands::dataset(&nets, 3, &Driver::ALL, &config, 3, &data)?;
    println!("{} records, orders {:?}", summary.n_records, summary.order_histogram);

    let mut experiment = ExperimentConfig::default();
    experiment.model = ModelConfig { d_embed: 16, n_heads: 2, d_ff: 32, conv_channels: 8, hidden: 16, ..experiment.model };
    experiment.model.n_enc_layers = 1;
    experiment.model.n_dec_layers = 1;
    experiment.train.epochs = 10;
    experiment.train.lr = 3e-3;
    let checkpoint = dir.join("model.json");
    let (_, report) = commands::train_model(&commands::load_records(&data)?, &experiment, &checkpoint)?;
    println!("validation RMSE {:.5} (base only {:.5})", report.val_rmse, report.base_only_val_rmse);

    let eval = commands::eval_model(&checkpoint, &data, &dir.join("eval.json"), Some(&dir.join("overlay.csv")))?;
    println!("evaluation RMSE {:.5}; overlay CSV in {}", eval.rmse, dir.display());
    Ok(())
}
