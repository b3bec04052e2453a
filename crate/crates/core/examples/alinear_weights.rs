//! Builds one adaptive linear layer and prints the weight matrices it
//! realizes for irregular input times, for default keys and queries, and
//! for a partially masked input.
//!
//! cargo run --example alinear_weights

use ait::alinear::{alinear_forward, export_weight_matrix, ALinearConfig, ALinearInput, ALinearParams};
use ait::numerics::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(title: &str, w: &Tensor) {
    println!("{title}");
    for i in 0..w.shape()[0] {
        let row: Vec<String> = w.row(i).iter().map(|v| format!("{v:.4}")).collect();
        let sum: f64 = w.row(i).iter().sum();
        println!("  [{}]  sum={sum:.12}", row.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layer = ALinearParams::init(ALinearConfig::new(8, Some(4), Some(3)), &mut rng);
    // Freshly initialized embeddings are nearly zero and give uniform rows;
    // sharpen them so the time dependence is visible.
    for (_, p) in layer.params.iter_mut() {
        p.data_mut().iter_mut().for_each(|v| *v *= 60.0);
    }

    let x = [1.0, 3.0, -2.0, 0.5];
    let s = [0.05, 0.11, 0.30, 0.42];
    let t = [0.55, 0.70, 0.95];
    let dynamic = ALinearInput { x: &x, s: Some(&s), s_mask: None, t: Some(&t) };
    show("dynamic keys and queries", &export_weight_matrix(&layer, &dynamic)?);
    println!("  y = {:?}", alinear_forward(&layer, &dynamic)?.data());

    let fixed = ALinearInput { x: &x, ..Default::default() };
    show("default keys and queries", &export_weight_matrix(&layer, &fixed)?);

    let mask = [true, false, true, false];
    let masked = ALinearInput { s_mask: Some(&mask), ..dynamic };
    show("second and fourth inputs masked", &export_weight_matrix(&layer, &masked)?);

    let none = [false; 4];
    let empty = ALinearInput { s_mask: Some(&none), ..dynamic };
    println!("all inputs masked: y = {:?}", alinear_forward(&layer, &empty)?.data());
    Ok(())
}
