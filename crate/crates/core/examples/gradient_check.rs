//! Checks reverse-mode gradients of a small AiT model against central
//! finite differences, one line per parameter tensor.
//!
//! cargo run --example gradient_check -- [variant]

use ait::data::{fit_norm, generate_synthetic, Batch, GeneratorConfig};
use ait::model::{AiTConfig, Model, Variant};
use ait::numerics::{compare_gradients, finite_diff_grad};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "full".into());
    let variant = Variant::parse(&name).ok_or(format!("unknown variant {name}"))?;
    let gen = GeneratorConfig { n_vars: 3, n_samples: 2, rate: 0.4, ..GeneratorConfig::default() };
    let data = generate_synthetic(&gen, 0)?;
    let samples = fit_norm(&data).apply_dataset(&data).samples;
    let batch = Batch::from_samples(&samples.iter().collect::<Vec<_>>());

    let model = Model::ait(AiTConfig::small(3, 8, 2, 2).with_variant(variant), 0)?;
    let (loss, analytic) = model.loss_and_grad(&batch)?;
    let numeric = finite_diff_grad(|p| model.loss_with(p, &batch).unwrap_or(f64::NAN), &model.params, 1e-5);
    let report = compare_gradients(&analytic, &numeric, 1e-4);

    println!("variant {name}, loss {loss:.6}");
    for p in &report.params {
        println!("{:<26} {:>5}  {:.2e}", p.name, p.numel, p.rel_error);
    }
    let worst = report.worst().map_or(0.0, |p| p.rel_error);
    println!("passed: {} (worst relative error {worst:.2e})", report.passed());
    Ok(())
}
