use serde::{Deserialize, Serialize};

use super::{Dataset, QuerySet, Sample, Variable, VariableSeries};

/// Floor applied to per-variable standard deviations.
pub const MIN_STD: f64 = 1e-8;

/// Increasing affine map `t ↦ (t − origin) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub origin: f64,
    pub scale: f64,
}

impl TimeMap {
    pub fn apply(&self, t: f64) -> f64 {
        (t - self.origin) / self.scale
    }

    pub fn invert(&self, u: f64) -> f64 {
        u * self.scale + self.origin
    }
}

/// Per-variable z-score parameters plus the global time map, fitted on the
/// training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub time: TimeMap,
}

/// Fits value statistics on observed values and maps
/// `[earliest observation start, latest forecast end]` onto `[0, 1]`.
///
/// A variable with no training observations passes through unchanged.
pub fn fit_norm(train: &Dataset) -> NormStats {
    let n = train.n_vars().unwrap_or(0);
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for s in &train.samples {
        for (i, v) in s.variables.iter().enumerate() {
            sum[i] += v.observed.values.iter().sum::<f64>();
            count[i] += v.observed.len();
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let mut sq = vec![0.0; n];
    for s in &train.samples {
        for (i, v) in s.variables.iter().enumerate() {
            sq[i] += v.observed.values.iter().map(|x| (x - mean[i]).powi(2)).sum::<f64>();
        }
    }
    let std = sq
        .iter()
        .zip(&count)
        .map(|(&q, &c)| {
            if c == 0 {
                1.0
            } else {
                (q / c as f64).sqrt().max(MIN_STD)
            }
        })
        .collect();
    let start = train
        .samples
        .iter()
        .map(|s| s.observation_span.0)
        .fold(f64::INFINITY, f64::min);
    let end = train
        .samples
        .iter()
        .map(|s| s.forecast_span.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let time = if start.is_finite() && end > start {
        TimeMap {
            origin: start,
            scale: end - start,
        }
    } else {
        TimeMap {
            origin: 0.0,
            scale: 1.0,
        }
    };
    NormStats { mean, std, time }
}

impl NormStats {
    pub fn n_vars(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_value(&self, var: usize, x: f64) -> f64 {
        (x - self.mean[var]) / self.std[var]
    }

    pub fn denormalize_value(&self, var: usize, z: f64) -> f64 {
        z * self.std[var] + self.mean[var]
    }

    fn map_sample(&self, s: &Sample, value: impl Fn(usize, f64) -> f64, time: impl Fn(f64) -> f64) -> Sample {
        Sample {
            variables: s
                .variables
                .iter()
                .enumerate()
                .map(|(i, v)| Variable {
                    observed: VariableSeries {
                        times: v.observed.times.iter().map(|&t| time(t)).collect(),
                        values: v.observed.values.iter().map(|&x| value(i, x)).collect(),
                    },
                    queries: QuerySet {
                        times: v.queries.times.iter().map(|&t| time(t)).collect(),
                        targets: v
                            .queries
                            .targets
                            .as_ref()
                            .map(|ts| ts.iter().map(|&x| value(i, x)).collect()),
                    },
                })
                .collect(),
            observation_span: (time(s.observation_span.0), time(s.observation_span.1)),
            forecast_span: (time(s.forecast_span.0), time(s.forecast_span.1)),
        }
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        self.map_sample(s, |i, x| self.normalize_value(i, x), |t| self.time.apply(t))
    }

    pub fn invert(&self, s: &Sample) -> Sample {
        self.map_sample(s, |i, z| self.denormalize_value(i, z), |u| self.time.invert(u))
    }

    pub fn apply_dataset(&self, d: &Dataset) -> Dataset {
        Dataset {
            meta: d.meta.clone(),
            samples: d.samples.iter().map(|s| self.apply(s)).collect(),
        }
    }
}
