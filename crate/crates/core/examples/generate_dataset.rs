//! Generates a synthetic irregular dataset, prints its statistics, splits
//! it, and round-trips it through the JSON-lines format.
//!
//! cargo run --example generate_dataset -- [n_samples] [seed] [path]

use ait::data::{fit_norm, generate_synthetic, load_dataset, save_dataset, split, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_samples: usize = args.first().map_or(Ok(200), |a| a.parse())?;
    let seed: u64 = args.get(1).map_or(Ok(0), |a| a.parse())?;
    let path = args.get(2).cloned().unwrap_or_else(|| "synthetic.jsonl".into());

    let gen = GeneratorConfig { n_samples, ..GeneratorConfig::default() };
    let data = generate_synthetic(&gen, seed)?;
    println!("{}", data.stats());

    let first = &data.samples[0];
    for (i, v) in first.variables.iter().enumerate().take(3) {
        println!(
            "sample 0 variable {i}: {} observations, {} queries, first times {:?}",
            v.observed.len(),
            v.queries.len(),
            &v.observed.times[..v.observed.len().min(4)]
        );
    }

    let parts = split(&data, [0.6, 0.2, 0.2], seed)?;
    println!("split sizes: train {} val {} test {}", parts.train.len(), parts.val.len(), parts.test.len());
    let norm = fit_norm(&parts.train);
    println!("per-variable means: {:?}", &norm.mean[..norm.mean.len().min(4)]);

    save_dataset(&data, &path)?;
    let back = load_dataset(&path)?;
    println!("wrote {path}; reloaded identical: {}", back == data);
    Ok(())
}
