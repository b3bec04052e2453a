//! Irregular multivariate time series: samples, synthetic generation, the
//! line-delimited file format, normalization, splitting and padded batches.

mod batch;
mod generate;
mod io;
mod norm;
mod split;

pub use batch::{make_batches, Batch};
pub use generate::{generate_synthetic, GeneratorConfig, RegularGrid};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use norm::{fit_norm, NormStats, TimeMap, MIN_STD};
pub use split::{split, split_indices, Split};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sample {sample}, variable {variable}: {message}")]
    Validation {
        sample: usize,
        variable: usize,
        message: String,
    },
    #[error("sample {sample} has {found} variables, expected {expected}")]
    VariableCount {
        sample: usize,
        found: usize,
        expected: usize,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Observed `(time, value)` pairs of one variable, chronologically ordered.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl VariableSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Forecast query times of one variable, with ground truth when known.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub times: Vec<f64>,
    pub targets: Option<Vec<f64>>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Variable {
    pub observed: VariableSeries,
    pub queries: QuerySet,
}

/// One IMTS instance: `N` variables over an observation window followed by
/// a forecast window.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub variables: Vec<Variable>,
    pub observation_span: (f64, f64),
    pub forecast_span: (f64, f64),
}

impl Sample {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    /// Total number of observations over all variables.
    pub fn observation_count(&self) -> usize {
        self.variables.iter().map(|v| v.observed.len()).sum()
    }

    pub fn query_count(&self) -> usize {
        self.variables.iter().map(|v| v.queries.len()).sum()
    }

    /// Checks ordering, lengths and span membership; `index` is only used
    /// for error messages.
    pub fn validate(&self, index: usize) -> Result<(), DataError> {
        let err = |variable: usize, message: &str| DataError::Validation {
            sample: index,
            variable,
            message: message.to_string(),
        };
        let (a, b) = self.observation_span;
        let (c, d) = self.forecast_span;
        if !(a < b && c < d && b <= c) {
            return Err(err(0, "spans must be non-empty and ordered"));
        }
        for (n, var) in self.variables.iter().enumerate() {
            let obs = &var.observed;
            if obs.times.len() != obs.values.len() {
                return Err(err(n, "times and values differ in length"));
            }
            if !strictly_increasing(&obs.times) {
                return Err(err(n, "times not strictly increasing"));
            }
            if obs.times.iter().chain(&obs.values).any(|v| !v.is_finite()) {
                return Err(err(n, "non-finite observation"));
            }
            if obs.times.iter().any(|&t| t < a || t > b) {
                return Err(err(n, "observation time outside observation span"));
            }
            let q = &var.queries;
            if let Some(targets) = &q.targets {
                if targets.len() != q.times.len() {
                    return Err(err(n, "query times and targets differ in length"));
                }
                if targets.iter().any(|v| !v.is_finite()) {
                    return Err(err(n, "non-finite target"));
                }
            }
            if q.times.iter().any(|&t| !t.is_finite() || t < c || t > d) {
                return Err(err(n, "query time outside forecast span"));
            }
            if q.times.iter().any(|&t| t < b) {
                return Err(err(n, "query time before end of observation window"));
            }
        }
        Ok(())
    }
}

fn strictly_increasing(times: &[f64]) -> bool {
    times.windows(2).all(|w| w[0] < w[1])
}

/// Header record stored on the first line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_vars: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `N ×` candidate observation grid points summed over samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub meta: Option<DatasetMeta>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self {
            meta: None,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_vars(&self) -> Option<usize> {
        self.meta
            .as_ref()
            .map(|m| m.n_vars)
            .or_else(|| self.samples.first().map(Sample::n_vars))
    }

    /// Validates every sample and that all share one variable count.
    pub fn validate(&self) -> Result<(), DataError> {
        let expected = self.n_vars().unwrap_or(0);
        for (i, s) in self.samples.iter().enumerate() {
            if s.n_vars() != expected {
                return Err(DataError::VariableCount {
                    sample: i,
                    found: s.n_vars(),
                    expected,
                });
            }
            s.validate(i)?;
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn stats(&self) -> DatasetStats {
        let n_vars = self.n_vars().unwrap_or(0);
        let observed: usize = self.samples.iter().map(Sample::observation_count).sum();
        let grid = match self.meta.as_ref().and_then(|m| m.grid_points) {
            Some(g) => g as usize,
            None => self
                .samples
                .iter()
                .map(|s| {
                    let mut ts: Vec<f64> = s
                        .variables
                        .iter()
                        .flat_map(|v| v.observed.times.iter().copied())
                        .collect();
                    ts.sort_by(f64::total_cmp);
                    ts.dedup();
                    ts.len() * n_vars
                })
                .sum(),
        };
        let sparsity = if grid == 0 {
            0.0
        } else {
            1.0 - observed as f64 / grid as f64
        };
        DatasetStats {
            samples: self.len(),
            n_vars,
            observations: observed,
            queries: self.samples.iter().map(Sample::query_count).sum(),
            observation_span: self.samples.first().map(|s| s.observation_span),
            forecast_span: self.samples.first().map(|s| s.forecast_span),
            sparsity,
        }
    }
}

/// Summary printed by `gen-data`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub n_vars: usize,
    pub observations: usize,
    pub queries: usize,
    pub observation_span: Option<(f64, f64)>,
    pub forecast_span: Option<(f64, f64)>,
    /// Fraction of candidate grid points left unobserved.
    pub sparsity: f64,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let span = |s: Option<(f64, f64)>| s.map_or("-".to_string(), |(a, b)| format!("[{a}, {b}]"));
        writeln!(
            f,
            "{:<10} {:>5} {:>12} {:>12} {:>14} {:>10}",
            "#Samples", "#Vars", "Obs. span", "Fcst. span", "#Observations", "Sparsity"
        )?;
        write!(
            f,
            "{:<10} {:>5} {:>12} {:>12} {:>14} {:>9.2}%",
            self.samples,
            self.n_vars,
            span(self.observation_span),
            span(self.forecast_span),
            self.observations,
            100.0 * self.sparsity
        )
    }
}
