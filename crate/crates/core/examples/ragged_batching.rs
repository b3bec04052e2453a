//! Pads samples with different observation counts into one batch and shows
//! that the mask, not the padding, decides what the model sees.
//!
//! cargo run --example ragged_batching

use ait::data::{make_batches, Batch, QuerySet, Sample, Variable, VariableSeries};
use ait::eval::predict_samples;
use ait::model::{AiTConfig, Model};

fn variable(times: &[f64], queries: &[f64]) -> Variable {
    Variable {
        observed: VariableSeries {
            times: times.to_vec(),
            values: times.iter().map(|t| (6.0 * t).sin()).collect(),
        },
        queries: QuerySet {
            times: queries.to_vec(),
            targets: Some(queries.iter().map(|t| (6.0 * t).sin()).collect()),
        },
    }
}

fn sample(vars: Vec<Variable>) -> Sample {
    Sample { variables: vars, observation_span: (0.0, 0.5), forecast_span: (0.5, 1.0) }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = sample(vec![variable(&[0.1, 0.2, 0.3, 0.4, 0.45], &[0.6]), variable(&[], &[0.7, 0.8])]);
    let b = sample(vec![variable(&[0.25], &[0.55, 0.9]), variable(&[0.05, 0.35], &[])]);

    let batch = Batch::from_samples(&[&a, &b]);
    println!("observation tensor {:?}, query tensor {:?}", batch.obs_values.shape(), batch.query_times.shape());
    for s in 0..2 {
        for n in 0..2 {
            println!("sample {s} var {n}: {} observed, {} queries", batch.obs_len(s, n), batch.query_len(s, n));
        }
    }
    println!("unpadding restores the samples: {}", batch.unpad() == vec![a.clone(), b.clone()]);

    let model = Model::ait(AiTConfig::small(2, 8, 2, 1), 0)?;
    let together = predict_samples(&model, &[a.clone(), b.clone()], 2, 1)?;
    let alone = predict_samples(&model, std::slice::from_ref(&b), 1, 1)?;
    println!("sample 1 batched:    {:?}", together[1]);
    println!("sample 1 on its own: {:?}", alone[0]);

    let batches = make_batches(&[a, b], 1, Some((7, 0)));
    println!("{} shuffled batches of one", batches.len());
    Ok(())
}
