use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{QuerySet, Sample, Variable, VariableSeries};
use crate::numerics::{Mask, Tensor};

/// Samples padded to the per-batch maxima `L` (observations) and `Q`
/// (queries). Padded positions hold 0 and are false in the masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub n_vars: usize,
    /// `[B, N, L]`
    pub obs_values: Tensor,
    /// `[B, N, L]`
    pub obs_times: Tensor,
    /// `[B, N, L]`
    pub obs_mask: Mask,
    /// `[B, N, Q]`
    pub query_times: Tensor,
    /// `[B, N, Q]`
    pub query_mask: Mask,
    /// `[B, N, Q]`; zeros where no target is known.
    pub targets: Tensor,
    pub has_targets: bool,
    pub spans: Vec<((f64, f64), (f64, f64))>,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample]) -> Batch {
        let b = samples.len();
        let n = samples.first().map_or(0, |s| s.n_vars());
        let l = samples
            .iter()
            .flat_map(|s| s.variables.iter().map(|v| v.observed.len()))
            .max()
            .unwrap_or(0);
        let q = samples
            .iter()
            .flat_map(|s| s.variables.iter().map(|v| v.queries.len()))
            .max()
            .unwrap_or(0);
        let mut obs_values = vec![0.0; b * n * l];
        let mut obs_times = vec![0.0; b * n * l];
        let mut obs_mask = vec![false; b * n * l];
        let mut query_times = vec![0.0; b * n * q];
        let mut query_mask = vec![false; b * n * q];
        let mut targets = vec![0.0; b * n * q];
        let mut has_targets = true;
        for (bi, s) in samples.iter().enumerate() {
            for (ni, v) in s.variables.iter().enumerate() {
                let o = (bi * n + ni) * l;
                for (j, (&t, &x)) in v.observed.times.iter().zip(&v.observed.values).enumerate() {
                    obs_times[o + j] = t;
                    obs_values[o + j] = x;
                    obs_mask[o + j] = true;
                }
                let o = (bi * n + ni) * q;
                for (j, &t) in v.queries.times.iter().enumerate() {
                    query_times[o + j] = t;
                    query_mask[o + j] = true;
                }
                match &v.queries.targets {
                    Some(ts) => targets[o..o + ts.len()].copy_from_slice(ts),
                    None => has_targets &= v.queries.is_empty(),
                }
            }
        }
        let lshape = [b, n, l];
        let qshape = [b, n, q];
        Batch {
            batch_size: b,
            n_vars: n,
            obs_values: Tensor::new(lshape.to_vec(), obs_values).expect("shape"),
            obs_times: Tensor::new(lshape.to_vec(), obs_times).expect("shape"),
            obs_mask: Mask::new(lshape.to_vec(), obs_mask).expect("shape"),
            query_times: Tensor::new(qshape.to_vec(), query_times).expect("shape"),
            query_mask: Mask::new(qshape.to_vec(), query_mask).expect("shape"),
            targets: Tensor::new(qshape.to_vec(), targets).expect("shape"),
            has_targets,
            spans: samples
                .iter()
                .map(|s| (s.observation_span, s.forecast_span))
                .collect(),
        }
    }

    pub fn max_obs_len(&self) -> usize {
        self.obs_values.shape()[2]
    }

    pub fn max_query_len(&self) -> usize {
        self.query_times.shape()[2]
    }

    /// Number of real observations of `(sample, variable)`.
    pub fn obs_len(&self, b: usize, n: usize) -> usize {
        let l = self.max_obs_len();
        let o = (b * self.n_vars + n) * l;
        self.obs_mask.data()[o..o + l].iter().filter(|&&m| m).count()
    }

    pub fn query_len(&self, b: usize, n: usize) -> usize {
        let q = self.max_query_len();
        let o = (b * self.n_vars + n) * q;
        self.query_mask.data()[o..o + q].iter().filter(|&&m| m).count()
    }

    /// True when every variable of every sample has exactly `l_in`
    /// observations and `l_out` queries.
    pub fn is_regular(&self, l_in: usize, l_out: usize) -> bool {
        self.max_obs_len() == l_in
            && self.max_query_len() == l_out
            && self.obs_mask.data().iter().all(|&m| m)
            && self.query_mask.data().iter().all(|&m| m)
    }

    /// Strips padding, recovering the original samples.
    pub fn unpad(&self) -> Vec<Sample> {
        let (l, q, n) = (self.max_obs_len(), self.max_query_len(), self.n_vars);
        (0..self.batch_size)
            .map(|b| Sample {
                variables: (0..n)
                    .map(|v| {
                        let lo = (b * n + v) * l;
                        let qo = (b * n + v) * q;
                        let keep_obs = |t: &Tensor| -> Vec<f64> {
                            (0..l)
                                .filter(|&j| self.obs_mask.data()[lo + j])
                                .map(|j| t.data()[lo + j])
                                .collect()
                        };
                        let keep_q = |t: &Tensor| -> Vec<f64> {
                            (0..q)
                                .filter(|&j| self.query_mask.data()[qo + j])
                                .map(|j| t.data()[qo + j])
                                .collect()
                        };
                        Variable {
                            observed: VariableSeries {
                                times: keep_obs(&self.obs_times),
                                values: keep_obs(&self.obs_values),
                            },
                            queries: QuerySet {
                                times: keep_q(&self.query_times),
                                targets: self.has_targets.then(|| keep_q(&self.targets)),
                            },
                        }
                    })
                    .collect(),
                observation_span: self.spans[b].0,
                forecast_span: self.spans[b].1,
            })
            .collect()
    }
}

/// Splits `samples` into padded batches of at most `batch_size`.
///
/// With `shuffle = Some((seed, epoch))` the order is a permutation that
/// depends only on the seed and the epoch index.
pub fn make_batches(samples: &[Sample], batch_size: usize, shuffle: Option<(u64, u64)>) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some((seed, epoch)) = shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            Batch::from_samples(&refs)
        })
        .collect()
}
