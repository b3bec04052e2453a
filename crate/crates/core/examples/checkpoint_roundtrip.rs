//! Trains briefly, writes a checkpoint with its normalization statistics,
//! reloads it, and evaluates in both normalized and raw units.
//!
//! cargo run --release --example checkpoint_roundtrip -- [path]

use ait::data::{fit_norm, generate_synthetic, split, GeneratorConfig};
use ait::eval::{evaluate, Units};
use ait::model::{AiTConfig, Checkpoint, Model};
use ait::training::{fit, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "model.ait".into());
    let gen = GeneratorConfig { n_samples: 200, ..GeneratorConfig::default() };
    let data = generate_synthetic(&gen, 1)?;
    let parts = split(&data, [0.6, 0.2, 0.2], 1)?;
    let norm = fit_norm(&parts.train);
    let train = norm.apply_dataset(&parts.train).samples;
    let val = norm.apply_dataset(&parts.val).samples;

    let model = Model::ait(AiTConfig::small(gen.n_vars, 16, 4, 2), 1)?;
    let cfg = TrainConfig { max_epochs: 5, patience: 5, seed: 1, ..TrainConfig::default() };
    let (best, report) = fit(&model, &train, &val, &cfg)?;
    println!("trained {} epochs, best val {:.5}", report.epochs.len(), report.best_val_loss);

    let checkpoint = Checkpoint::new(best, Some(norm));
    checkpoint.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!("{path}: {} bytes, identical after reload: {}", std::fs::metadata(&path)?.len(), loaded == checkpoint);

    println!("{}", evaluate(&loaded, &parts.test, Units::Normalized)?);
    println!("{}", evaluate(&loaded, &parts.test, Units::Raw)?);
    Ok(())
}
