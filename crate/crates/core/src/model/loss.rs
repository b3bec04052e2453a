use super::ModelError;
use crate::data::Batch;
use crate::numerics::{Graph, Tensor, Var};

/// Per-query weights `[B, N, Q]` such that `Σ w·err²` is the mean over
/// samples of the mean over queried variables of the per-variable MSE.
/// Returns the weights and the number of contributing samples, or `None`
/// when the batch has no queries.
pub fn loss_weights(batch: &Batch) -> Option<(Tensor, usize)> {
    let (b, n, q) = (batch.batch_size, batch.n_vars, batch.max_query_len());
    let mut w = vec![0.0; b * n * q];
    let counts: Vec<Vec<usize>> = (0..b)
        .map(|bi| (0..n).map(|ni| batch.query_len(bi, ni)).collect())
        .collect();
    let active = counts.iter().filter(|c| c.iter().any(|&k| k > 0)).count();
    if active == 0 {
        return None;
    }
    for (bi, row) in counts.iter().enumerate() {
        let queried = row.iter().filter(|&&k| k > 0).count();
        for (ni, &k) in row.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let weight = 1.0 / (active * queried * k) as f64;
            let o = (bi * n + ni) * q;
            for j in 0..q {
                if batch.query_mask.data()[o + j] {
                    w[o + j] = weight;
                }
            }
        }
    }
    Some((Tensor::new(vec![b, n, q], w).expect("shape"), active))
}

/// Scalar training loss of predictions `[B, N, Q]` against the batch targets.
pub fn mse_loss(g: &mut Graph, pred: Var, batch: &Batch) -> Result<Var, ModelError> {
    if !batch.has_targets {
        return Err(ModelError::Contract("batch has queries without targets".into()));
    }
    let (w, _) = loss_weights(batch).ok_or(ModelError::UndefinedLoss)?;
    let target = g.constant(batch.targets.clone());
    let w = g.constant(w);
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let weighted = g.mul(sq, w)?;
    Ok(g.sum(weighted)?)
}
