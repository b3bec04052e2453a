//! Trains AiT on the correlated synthetic task and compares it with the
//! per-variable mean baseline.
//!
//! cargo run --release --example forecast_synthetic -- [hidden] [epochs] [seed] [samples]

use ait::data::{fit_norm, generate_synthetic, split, GeneratorConfig};
use ait::eval::evaluate_model;
use ait::model::{AiTConfig, Model};
use ait::training::{fit_with, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let hidden = args.first().copied().unwrap_or(16);
    let epochs = args.get(1).copied().unwrap_or(30);
    let seed = args.get(2).copied().unwrap_or(0) as u64;
    let n_samples = args.get(3).copied().unwrap_or(2000);

    let gen = GeneratorConfig {
        n_samples,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(&gen, seed)?;
    println!("{}", data.stats());
    let parts = split(&data, [0.6, 0.2, 0.2], seed)?;
    let norm = fit_norm(&parts.train);
    let (train, val, test) = (
        norm.apply_dataset(&parts.train).samples,
        norm.apply_dataset(&parts.val).samples,
        norm.apply_dataset(&parts.test).samples,
    );

    let cfg = AiTConfig::small(gen.n_vars, hidden, 4.min(hidden), 2);
    let model = Model::ait(cfg, seed)?;
    let train_cfg = TrainConfig {
        max_epochs: epochs,
        patience: epochs.min(40),
        seed,
        ..TrainConfig::default()
    };
    let (best, report) = fit_with(&model, &train, &val, &train_cfg, |e| println!("{e}"))?;
    println!("best epoch {} val {:.5}", report.best_epoch, report.best_val_loss);

    let ait = evaluate_model(&best, &test)?;
    let mean = evaluate_model(&Model::mean(), &test)?;
    println!("AiT  test MSE {:.5} MAE {:.5}", ait.mse, ait.mae);
    println!("mean test MSE {:.5} MAE {:.5}", mean.mse, mean.mae);
    println!("improvement {:.1}%", 100.0 * (1.0 - ait.mse / mean.mse));
    Ok(())
}
