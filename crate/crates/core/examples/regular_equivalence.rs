//! On a fixed regular grid, trains the adaptive linear layer with default
//! keys and queries next to a row-softmax static linear map, compares their
//! test errors, and dumps both weight matrices for plotting.
//!
//! cargo run --release --example regular_equivalence -- [epochs] [n_seeds] [out_dir]

use std::path::PathBuf;

use ait::data::{fit_norm, generate_synthetic, split, GeneratorConfig, RegularGrid};
use ait::eval::{evaluate_model, export_weight_pair, weight_grids};
use ait::model::{Model, ModelSpec};
use ait::training::{fit, TrainConfig};

const L_IN: usize = 24;
const L_OUT: usize = 8;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map_or(Ok(100), |a| a.parse())?;
    let n_seeds: u64 = args.get(1).map_or(Ok(3), |a| a.parse())?;
    let out = PathBuf::from(args.get(2).map_or("weights", String::as_str));

    let gen = GeneratorConfig {
        missingness: 0.0,
        regular: Some(RegularGrid { l_in: L_IN, l_out: L_OUT }),
        ..GeneratorConfig::default()
    };
    let (mut alinear, mut static_linear) = (Vec::new(), Vec::new());
    for seed in 0..n_seeds {
        let data = generate_synthetic(&gen, seed)?;
        let parts = split(&data, [0.6, 0.2, 0.2], seed)?;
        let norm = fit_norm(&parts.train);
        let train = norm.apply_dataset(&parts.train).samples;
        let val = norm.apply_dataset(&parts.val).samples;
        let test = norm.apply_dataset(&parts.test).samples;
        let cfg = TrainConfig {
            max_epochs: epochs,
            patience: epochs.min(40),
            seed,
            ..TrainConfig::default()
        };
        let a = Model::new(ModelSpec::RegularAlinear { d: 16, l_in: L_IN, l_out: L_OUT }, seed)?;
        let s = Model::static_linear(L_IN, L_OUT, seed)?;
        let (a, ra) = fit(&a, &train, &val, &cfg)?;
        let (s, rs) = fit(&s, &train, &val, &cfg)?;
        let (ma, ms) = (evaluate_model(&a, &test)?.mse, evaluate_model(&s, &test)?.mse);
        println!(
            "seed {seed}: alinear {ma:.5} (best epoch {}), static-linear {ms:.5} (best epoch {})",
            ra.best_epoch, rs.best_epoch
        );
        alinear.push(ma);
        static_linear.push(ms);
        if seed == 0 {
            let ga = &weight_grids(&a, &test[0])?[0];
            let gs = &weight_grids(&s, &test[0])?[0];
            println!("mean |W_alinear - W_static| = {:.5}", ga.mean_abs_diff(gs).unwrap_or(f64::NAN));
            for p in export_weight_pair(&a, &test[0], Some(&s), &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    let ma = alinear.iter().sum::<f64>() / alinear.len() as f64;
    let ms = static_linear.iter().sum::<f64>() / static_linear.len() as f64;
    println!("seed-average MSE: alinear {ma:.5}, static-linear {ms:.5}");
    println!("relative difference {:.2}%", 100.0 * (ma - ms).abs() / ms);
    Ok(())
}
