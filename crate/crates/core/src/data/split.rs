use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

/// Train / validation / test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Random disjoint index partition of `0..n` with sizes rounded from `ratios`;
/// the test part takes the remainder.
pub fn split_indices(
    n: usize,
    ratios: [f64; 3],
    seed: u64,
) -> Result<[Vec<usize>; 3], DataError> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Ratios(ratios));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok([idx, val, test])
}

pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Split, DataError> {
    let [train, val, test] = split_indices(dataset.len(), ratios, seed)?;
    Ok(Split {
        train: dataset.subset(&train),
        val: dataset.subset(&val),
        test: dataset.subset(&test),
    })
}
