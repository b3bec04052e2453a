//! Trains every model variant on the synthetic task over several seeds and
//! prints a results table.
//!
//! cargo run --release --example ablation -- [hidden] [epochs] [n_seeds] [unobserved_fraction]

use ait::data::{fit_norm, generate_synthetic, split, GeneratorConfig};
use ait::eval::{evaluate_model, table_header, table_row, MetricsReport};
use ait::model::{AiTConfig, Model, Variant};
use ait::training::{fit, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let hidden: usize = args.first().map_or(Ok(16), |a| a.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(40), |a| a.parse())?;
    let n_seeds: u64 = args.get(2).map_or(Ok(3), |a| a.parse())?;
    let unobserved: f64 = args.get(3).map_or(Ok(0.0), |a| a.parse())?;

    let gen = GeneratorConfig {
        unobserved_fraction: unobserved,
        ..GeneratorConfig::default()
    };
    let mut rows: Vec<(String, Vec<MetricsReport>)> = Variant::ALL
        .iter()
        .map(|v| (v.as_str().to_string(), Vec::new()))
        .chain(std::iter::once(("mean".to_string(), Vec::new())))
        .collect();
    for seed in 0..n_seeds {
        let data = generate_synthetic(&gen, seed)?;
        let parts = split(&data, [0.6, 0.2, 0.2], seed)?;
        let norm = fit_norm(&parts.train);
        let train = norm.apply_dataset(&parts.train).samples;
        let val = norm.apply_dataset(&parts.val).samples;
        let test = norm.apply_dataset(&parts.test).samples;
        let train_cfg = TrainConfig {
            max_epochs: epochs,
            patience: epochs.min(40),
            seed,
            ..TrainConfig::default()
        };
        for (i, variant) in Variant::ALL.into_iter().enumerate() {
            let cfg = AiTConfig::small(gen.n_vars, hidden, 4.min(hidden), 2).with_variant(variant);
            let (best, _) = fit(&Model::ait(cfg, seed)?, &train, &val, &train_cfg)?;
            let report = evaluate_model(&best, &test)?;
            eprintln!("seed {seed} {:<10} test MSE {:.4}", variant.as_str(), report.mse);
            rows[i].1.push(report);
        }
        rows[4].1.push(evaluate_model(&Model::mean(), &test)?);
    }
    println!("{}", table_header());
    for (name, reports) in &rows {
        println!("{}", table_row(name, reports));
    }
    Ok(())
}
