//! Forecast metrics, timing, and weight-matrix dumps.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alinear::{ALinear, ALinearConfig};
use crate::data::{make_batches, Batch, Dataset, NormStats, Sample};
use crate::model::{weight_maps, Checkpoint, Model, ModelError, ModelSpec};
use crate::numerics::Graph;
use crate::training::{fit, parallel_map, worker_threads, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("metric is undefined: no queries in the dataset")]
    Undefined,
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Predicted values per sample, per variable, aligned with its queries.
pub type Predictions = Vec<Vec<Vec<f64>>>;

/// Runs the model over `samples` in fixed-size batches with up to `threads`
/// workers.
pub fn predict_samples(model: &Model, samples: &[Sample], batch_size: usize, threads: usize) -> Result<Predictions, EvalError> {
    let batches = make_batches(samples, batch_size, None);
    let parts = parallel_map(&batches, threads, |b| unpad_predictions(model, b));
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn unpad_predictions(model: &Model, batch: &Batch) -> Result<Predictions, EvalError> {
    let values = model.predict(batch)?.values;
    let (n, q) = (batch.n_vars, batch.max_query_len());
    Ok((0..batch.batch_size)
        .map(|b| {
            (0..n)
                .map(|v| {
                    let o = (b * n + v) * q;
                    values.data()[o..o + batch.query_len(b, v)].to_vec()
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Normalized,
    Raw,
}

/// Per-variable breakdown. `*_contribution` values sum to the totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub variable: usize,
    pub samples: usize,
    pub mse: f64,
    pub mae: f64,
    pub mse_contribution: f64,
    pub mae_contribution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub units: Units,
    pub samples: usize,
    pub seed: Option<u64>,
    pub per_variable: Vec<VariableMetrics>,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MSE {:.6}  MAE {:.6}  ({:?} units, {} samples)", self.mse, self.mae, self.units, self.samples)?;
        writeln!(f, "{:>8} {:>8} {:>12} {:>12}", "variable", "samples", "mse", "mae")?;
        for v in &self.per_variable {
            writeln!(f, "{:>8} {:>8} {:>12.6} {:>12.6}", v.variable, v.samples, v.mse, v.mae)?;
        }
        Ok(())
    }
}

/// Nested means: per variable over its queries, over queried variables,
/// then over samples with at least one query.
pub fn metrics(preds: &Predictions, samples: &[Sample]) -> Result<MetricsReport, EvalError> {
    if preds.len() != samples.len() {
        return Err(EvalError::Validation(format!(
            "{} predictions for {} samples",
            preds.len(),
            samples.len()
        )));
    }
    let n = samples.first().map_or(0, Sample::n_vars);
    let mut per = vec![(0usize, 0.0, 0.0, 0.0, 0.0); n];
    let (mut mse, mut mae, mut count) = (0.0, 0.0, 0usize);
    for (si, (p, s)) in preds.iter().zip(samples).enumerate() {
        let mut sample_terms = Vec::new();
        for (vi, (pv, v)) in p.iter().zip(&s.variables).enumerate() {
            let q = v.queries.len();
            if q == 0 {
                continue;
            }
            let targets = v.queries.targets.as_ref().ok_or_else(|| {
                EvalError::Validation(format!("sample {si} variable {vi}: queries without targets"))
            })?;
            if pv.len() != q {
                return Err(EvalError::Validation(format!(
                    "sample {si} variable {vi}: {} predictions for {q} queries",
                    pv.len()
                )));
            }
            let se = pv.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / q as f64;
            let ae = pv.iter().zip(targets).map(|(a, b)| (a - b).abs()).sum::<f64>() / q as f64;
            sample_terms.push((vi, se, ae));
        }
        if sample_terms.is_empty() {
            continue;
        }
        let k = sample_terms.len() as f64;
        count += 1;
        mse += sample_terms.iter().map(|t| t.1).sum::<f64>() / k;
        mae += sample_terms.iter().map(|t| t.2).sum::<f64>() / k;
        for (vi, se, ae) in sample_terms {
            let e = &mut per[vi];
            e.0 += 1;
            e.1 += se;
            e.2 += ae;
            e.3 += se / k;
            e.4 += ae / k;
        }
    }
    if count == 0 {
        return Err(EvalError::Undefined);
    }
    let c = count as f64;
    Ok(MetricsReport {
        mse: mse / c,
        mae: mae / c,
        units: Units::Normalized,
        samples: count,
        seed: None,
        per_variable: per
            .into_iter()
            .enumerate()
            .map(|(variable, (k, se, ae, sc, ac))| VariableMetrics {
                variable,
                samples: k,
                mse: if k > 0 { se / k as f64 } else { 0.0 },
                mae: if k > 0 { ae / k as f64 } else { 0.0 },
                mse_contribution: sc / c,
                mae_contribution: ac / c,
            })
            .collect(),
    })
}

pub fn metric_mse(preds: &Predictions, samples: &[Sample]) -> Result<f64, EvalError> {
    metrics(preds, samples).map(|r| r.mse)
}

pub fn metric_mae(preds: &Predictions, samples: &[Sample]) -> Result<f64, EvalError> {
    metrics(preds, samples).map(|r| r.mae)
}

/// Metrics of `model` on already-normalized samples.
pub fn evaluate_model(model: &Model, samples: &[Sample]) -> Result<MetricsReport, EvalError> {
    let preds = predict_samples(model, samples, 32, worker_threads())?;
    metrics(&preds, samples)
}

/// Metrics of a checkpoint on a raw dataset. The checkpoint's normalization
/// is applied first; with [`Units::Raw`] predictions and targets are mapped
/// back before scoring.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset, units: Units) -> Result<MetricsReport, EvalError> {
    let Some(norm) = &checkpoint.norm else {
        if units == Units::Raw {
            return Err(EvalError::Validation("checkpoint has no normalization statistics".into()));
        }
        return evaluate_model(&checkpoint.model, &dataset.samples);
    };
    if let Some(n) = dataset.n_vars() {
        if n != norm.n_vars() {
            return Err(EvalError::Validation(format!(
                "dataset has {n} variables, checkpoint normalization has {}",
                norm.n_vars()
            )));
        }
    }
    let samples = norm.apply_dataset(dataset).samples;
    let preds = predict_samples(&checkpoint.model, &samples, 32, worker_threads())?;
    let mut report = match units {
        Units::Normalized => metrics(&preds, &samples)?,
        Units::Raw => metrics(&denormalize(norm, &preds), &dataset.samples)?,
    };
    report.units = units;
    Ok(report)
}

fn denormalize(norm: &NormStats, preds: &Predictions) -> Predictions {
    preds
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .map(|(v, xs)| xs.iter().map(|&z| norm.denormalize_value(v, z)).collect())
                .collect()
        })
        .collect()
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, std: var.sqrt(), n }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// One row of a results table over seeds.
pub fn table_row(name: &str, reports: &[MetricsReport]) -> String {
    let mse = Summary::of(&reports.iter().map(|r| r.mse).collect::<Vec<_>>());
    let mae = Summary::of(&reports.iter().map(|r| r.mae).collect::<Vec<_>>());
    format!("| {name:<16} | {mse} | {mae} |")
}

pub fn table_header() -> String {
    format!("| {:<16} | {:<15} | {:<15} |\n|{}|{}|{}|", "model", "MSE", "MAE", "-".repeat(18), "-".repeat(17), "-".repeat(17))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub mean_epoch_seconds: f64,
    pub epochs_timed: usize,
    pub inference_seconds: f64,
    pub test_samples: usize,
    pub hardware: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingConfig {
    pub epochs: usize,
    pub train: TrainConfig,
    pub hardware: String,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            train: TrainConfig::default(),
            hardware: String::new(),
        }
    }
}

/// Mean training seconds per epoch after one warm-up epoch, and total
/// single-threaded inference seconds over `test`.
pub fn time_run(
    model: &Model,
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
    cfg: &TimingConfig,
) -> Result<TimingReport, EvalError> {
    let epochs = cfg.epochs.max(3);
    let mut mean_epoch_seconds = 0.0;
    if !train.is_empty() && !val.is_empty() {
        let train_cfg = TrainConfig {
            max_epochs: epochs + 1,
            patience: epochs + 1,
            ..cfg.train.clone()
        };
        let (_, report) = fit(model, train, val, &train_cfg)?;
        let timed = &report.epochs[1..];
        mean_epoch_seconds = timed.iter().map(|e| e.seconds).sum::<f64>() / timed.len().max(1) as f64;
    }
    let inference_seconds = time_inference(model, test, cfg.train.batch_size)?;
    Ok(TimingReport {
        mean_epoch_seconds,
        epochs_timed: epochs,
        inference_seconds,
        test_samples: test.len(),
        hardware: cfg.hardware.clone(),
    })
}

/// Single-threaded wall-clock seconds to predict all of `test`, after one
/// warm-up batch.
pub fn time_inference(model: &Model, test: &[Sample], batch_size: usize) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Ok(0.0);
    }
    predict_samples(model, &test[..1], batch_size, 1)?;
    let start = Instant::now();
    predict_samples(model, test, batch_size, 1)?;
    Ok(start.elapsed().as_secs_f64())
}

/// A realized weight matrix ready for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGrid {
    pub source: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl WeightGrid {
    fn from_slice(source: String, rows: usize, cols: usize, data: &[f64]) -> Self {
        Self {
            source,
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# rows={} cols={} source={}", self.rows, self.cols, self.source)?;
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", line.join("\t"))?;
        }
        Ok(())
    }

    /// Mean absolute entrywise difference; `None` if shapes differ.
    pub fn mean_abs_diff(&self, other: &WeightGrid) -> Option<f64> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return None;
        }
        let n = self.data.len().max(1) as f64;
        Some(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
    }
}

/// Every realized weight matrix the model applies to `sample`. Padding
/// columns and rows are cut away.
pub fn weight_grids(model: &Model, sample: &Sample) -> Result<Vec<WeightGrid>, EvalError> {
    let batch = Batch::from_samples(&[sample]);
    let mut grids = Vec::new();
    match &model.spec {
        ModelSpec::Ait(cfg) => {
            let (temporal, predictor) = weight_maps(cfg, &model.params, &batch)?;
            let (l, q, d) = (batch.max_obs_len(), batch.max_query_len(), cfg.hidden);
            for v in 0..batch.n_vars {
                let lv = batch.obs_len(0, v);
                if lv > 0 {
                    let full = &temporal.data()[v * d * l..(v + 1) * d * l];
                    let data: Vec<f64> = (0..d).flat_map(|r| full[r * l..r * l + lv].to_vec()).collect();
                    grids.push(WeightGrid::from_slice(format!("temporal_var{v}"), d, lv, &data));
                }
                if let Some(p) = &predictor {
                    let qv = batch.query_len(0, v);
                    if qv > 0 {
                        let full = &p.data()[v * q * d..v * q * d + qv * d];
                        grids.push(WeightGrid::from_slice(format!("predictor_var{v}"), qv, d, full));
                    }
                }
            }
        }
        ModelSpec::RegularAlinear { d, l_in, l_out } => {
            let layer = ALinear::new(ALinearConfig::new(*d, Some(*l_in), Some(*l_out)), "alinear");
            let mut g = Graph::new();
            let w = layer
                .weights(&mut g, &model.params, 1, *l_in, None, None)
                .map_err(ModelError::from)?;
            grids.push(WeightGrid::from_slice("alinear_default".into(), *l_out, *l_in, g.value(w).data()));
        }
        ModelSpec::StaticLinear { l_in, l_out } => {
            let mut g = Graph::new();
            let w = g.param(&model.params, "w_static").map_err(ModelError::from)?;
            let w = g.softmax_rows(w, None, false).map_err(ModelError::from)?;
            grids.push(WeightGrid::from_slice("static_linear".into(), *l_out, *l_in, g.value(w).data()));
        }
        ModelSpec::Mean => {}
    }
    Ok(grids)
}

/// Writes `model`'s weight grids (and the baseline's, if given) as TSV files
/// into `dir`, returning the paths written.
pub fn export_weight_pair(model: &Model, sample: &Sample, baseline: Option<&Model>, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut grids = weight_grids(model, sample)?;
    if let Some(b) = baseline {
        grids.extend(weight_grids(b, sample)?);
    }
    let mut paths = Vec::new();
    for grid in grids {
        let path = dir.join(format!("{}.tsv", grid.source));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        grid.write_tsv(&mut f)?;
        f.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
