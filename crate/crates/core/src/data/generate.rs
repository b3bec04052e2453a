use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetMeta, QuerySet, Sample, Variable, VariableSeries};

/// Fixed observation and forecast grid for regular series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegularGrid {
    pub l_in: usize,
    pub l_out: usize,
}

/// Parameters of the latent-factor generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_vars: usize,
    pub n_samples: usize,
    /// Number of shared latent signals per sample.
    pub n_latents: usize,
    /// Expected candidate observation times per unit time.
    pub rate: f64,
    /// Probability that a candidate point is dropped for a variable.
    pub missingness: f64,
    pub noise_std: f64,
    pub observation_span: (f64, f64),
    pub forecast_span: (f64, f64),
    /// Latent sinusoid frequencies, in cycles per unit time.
    pub freq_range: (f64, f64),
    /// Std of the per-sample linear trend, measured over the full window.
    pub trend_std: f64,
    /// Fraction of variables with no observations at all in each sample.
    pub unobserved_fraction: f64,
    /// When set, candidate times form an evenly spaced grid instead of a
    /// Poisson process.
    pub regular: Option<RegularGrid>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_vars: 6,
            n_samples: 2000,
            n_latents: 2,
            rate: 1.0,
            missingness: 0.5,
            noise_std: 0.1,
            observation_span: (0.0, 24.0),
            forecast_span: (24.0, 36.0),
            freq_range: (1.0 / 72.0, 1.0 / 36.0),
            trend_std: 1.0,
            unobserved_fraction: 0.0,
            regular: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        let (a, b) = self.observation_span;
        let (c, d) = self.forecast_span;
        if self.n_vars < 2 {
            return bad("n_vars must be at least 2");
        }
        if self.n_latents < 1 {
            return bad("n_latents must be at least 1");
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad("rate must be positive");
        }
        if !(0.0..1.0).contains(&self.missingness) {
            return bad("missingness must lie in [0, 1)");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be non-negative");
        }
        if !(a < b && c < d) {
            return bad("observation and forecast spans must have positive length");
        }
        if c < b {
            return bad("forecast span must start at or after the observation span ends");
        }
        let (f0, f1) = self.freq_range;
        if !(f0 >= 0.0 && f0 <= f1 && f1.is_finite()) {
            return bad("freq_range must satisfy 0 <= lo <= hi");
        }
        if !(self.trend_std >= 0.0) {
            return bad("trend_std must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.unobserved_fraction) {
            return bad("unobserved_fraction must lie in [0, 1]");
        }
        if let Some(g) = self.regular {
            if g.l_in == 0 || g.l_out == 0 {
                return bad("regular grid lengths must be positive");
            }
        }
        Ok(())
    }
}

struct Latent {
    amplitude: f64,
    freq: f64,
    phase: f64,
    slope: f64,
}

fn poisson_times<R: Rng>(rng: &mut R, rate: f64, start: f64, end: f64) -> Vec<f64> {
    let gap = Exp::new(rate).expect("positive rate");
    let mut out = Vec::new();
    let mut t = start;
    loop {
        t += gap.sample(rng);
        if t >= end {
            break;
        }
        if out.last().map_or(true, |&last| t > last) {
            out.push(t);
        }
    }
    out
}

/// Draws a dataset of correlated irregular series. Pure in `(config, seed)`.
///
/// Each sample has `n_latents` sinusoid-plus-trend signals; variable `n` is
/// a fixed (per-dataset) linear mix of them plus an offset, observed with
/// Gaussian noise on a shared candidate grid that each variable thins
/// independently. Query targets are the noiseless mix.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = config.n_vars;
    let f = config.n_latents;
    let mixing: Vec<f64> = (0..n * f).map(|_| std_normal.sample(&mut rng)).collect();
    let offsets: Vec<f64> = (0..n).map(|_| 0.5 * std_normal.sample(&mut rng)).collect();

    let (a, b) = config.observation_span;
    let (c, d) = config.forecast_span;
    let width = d - a;
    let amp_dist = Uniform::new_inclusive(0.5, 1.5);
    let freq_dist = Uniform::new_inclusive(config.freq_range.0, config.freq_range.1);
    let phase_dist = Uniform::new(0.0, 2.0 * PI);
    let trend = Normal::new(0.0, config.trend_std).expect("finite std");
    let noise = Normal::new(0.0, config.noise_std).expect("finite std");
    let n_hidden = (config.unobserved_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();

    let mut samples = Vec::with_capacity(config.n_samples);
    let mut grid_points = 0u64;
    for _ in 0..config.n_samples {
        let latents: Vec<Latent> = (0..f)
            .map(|_| Latent {
                amplitude: amp_dist.sample(&mut rng),
                freq: freq_dist.sample(&mut rng),
                phase: phase_dist.sample(&mut rng),
                slope: trend.sample(&mut rng),
            })
            .collect();
        let signal = |var: usize, t: f64| -> f64 {
            let mut v = offsets[var];
            for (k, l) in latents.iter().enumerate() {
                let z = l.amplitude * (2.0 * PI * l.freq * t + l.phase).sin()
                    + l.slope * (t - a) / width;
                v += mixing[var * f + k] * z;
            }
            v
        };
        let (obs_grid, query_grid) = match config.regular {
            Some(g) => (
                (0..g.l_in)
                    .map(|i| a + (b - a) * i as f64 / g.l_in as f64)
                    .collect(),
                (0..g.l_out)
                    .map(|j| c + (d - c) * j as f64 / g.l_out as f64)
                    .collect(),
            ),
            None => (
                poisson_times(&mut rng, config.rate, a, b),
                poisson_times(&mut rng, config.rate, c, d),
            ),
        };
        grid_points += (obs_grid.len() * n) as u64;
        order.shuffle(&mut rng);
        let hidden = &order[..n_hidden];
        let keep = 1.0 - config.missingness;
        let mut variables = Vec::with_capacity(n);
        for var in 0..n {
            let mut observed = VariableSeries::default();
            for &t in &obs_grid {
                let kept = rng.gen_bool(keep);
                let eps = noise.sample(&mut rng);
                if kept && !hidden.contains(&var) {
                    observed.times.push(t);
                    observed.values.push(signal(var, t) + eps);
                }
            }
            let mut queries = QuerySet {
                times: Vec::new(),
                targets: Some(Vec::new()),
            };
            for &t in &query_grid {
                if rng.gen_bool(keep) {
                    queries.times.push(t);
                    queries
                        .targets
                        .as_mut()
                        .expect("targets present")
                        .push(signal(var, t));
                }
            }
            variables.push(Variable { observed, queries });
        }
        samples.push(Sample {
            variables,
            observation_span: config.observation_span,
            forecast_span: config.forecast_span,
        });
    }
    Ok(Dataset {
        meta: Some(DatasetMeta {
            n_vars: n,
            generator: Some(config.clone()),
            seed: Some(seed),
            grid_points: Some(grid_points),
        }),
        samples,
    })
}
