use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{GeneratorConfig, RegularGrid};
use crate::model::{AiTConfig, ModelSpec, Variant};
use crate::training::TrainConfig;

/// Flat run configuration. Every key may also be given on the command line
/// as `--key value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset file; generated from the generator keys when absent.
    pub data: Option<String>,
    /// Checkpoint for `eval` and `export-weights`.
    pub checkpoint: Option<String>,
    pub out: String,
    pub seed: u64,
    /// Runs once per listed seed when nonempty.
    pub seeds: Vec<u64>,
    pub raw_units: bool,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,

    pub n_vars: usize,
    pub n_samples: usize,
    pub n_latents: usize,
    pub rate: f64,
    pub missingness: f64,
    pub noise_std: f64,
    pub obs_start: f64,
    pub obs_end: f64,
    pub fc_start: f64,
    pub fc_end: f64,
    pub freq_min: f64,
    pub freq_max: f64,
    pub trend_std: f64,
    pub unobserved_fraction: f64,
    /// Regular grid lengths; 0 means irregular sampling.
    pub regular_l_in: usize,
    pub regular_l_out: usize,

    /// `ait`, `static_linear`, `alinear_default` or `mean`.
    pub model: String,
    pub hidden: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    /// 0 means equal to `hidden`.
    pub ffn_width: usize,
    pub variant: String,
    /// Embedding width of the `alinear_default` model.
    pub alinear_d: usize,

    pub lr0: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub cosine_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,

    pub hardware: String,
    pub sample: usize,
    pub gradcheck_tol: f64,
    pub gradcheck_step: f64,
    pub gradcheck_vars: usize,
    pub gradcheck_hidden: usize,
    pub gradcheck_heads: usize,
    pub gradcheck_blocks: usize,
    pub gradcheck_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GeneratorConfig::default();
        let train = TrainConfig::default();
        let ait = AiTConfig::new(gen.n_vars);
        Self {
            data: None,
            checkpoint: None,
            out: "runs".into(),
            seed: 0,
            seeds: Vec::new(),
            raw_units: false,
            train_ratio: 0.6,
            val_ratio: 0.2,
            test_ratio: 0.2,
            n_vars: gen.n_vars,
            n_samples: gen.n_samples,
            n_latents: gen.n_latents,
            rate: gen.rate,
            missingness: gen.missingness,
            noise_std: gen.noise_std,
            obs_start: gen.observation_span.0,
            obs_end: gen.observation_span.1,
            fc_start: gen.forecast_span.0,
            fc_end: gen.forecast_span.1,
            freq_min: gen.freq_range.0,
            freq_max: gen.freq_range.1,
            trend_std: gen.trend_std,
            unobserved_fraction: gen.unobserved_fraction,
            regular_l_in: 0,
            regular_l_out: 0,
            model: "ait".into(),
            hidden: ait.hidden,
            n_heads: ait.n_heads,
            n_blocks: ait.n_blocks,
            ffn_width: 0,
            variant: Variant::Full.as_str().into(),
            alinear_d: 16,
            lr0: train.lr0,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            cosine_period: train.cosine_period,
            beta1: train.beta1,
            beta2: train.beta2,
            eps: train.eps,
            hardware: String::new(),
            sample: 0,
            gradcheck_tol: 1e-4,
            gradcheck_step: 1e-5,
            gradcheck_vars: 3,
            gradcheck_hidden: 8,
            gradcheck_heads: 2,
            gradcheck_blocks: 2,
            gradcheck_samples: 2,
        }
    }
}

impl RunConfig {
    /// Names of every key.
    pub fn keys() -> Vec<String> {
        match toml::Value::try_from(RunConfig::default()) {
            Ok(toml::Value::Table(t)) => {
                let mut keys: Vec<String> = t.keys().cloned().collect();
                keys.extend(["data".to_string(), "checkpoint".to_string()]);
                keys
            }
            _ => Vec::new(),
        }
    }

    /// Reads `path` (if any), then applies `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            table.insert(key.clone(), parse_value(raw));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate().map_err(|e| match e {
            CliError::Config(_) => e,
            other => CliError::Config(other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.generator()?;
        self.train_config(0).validate()?;
        self.model_spec()?;
        let sum = self.train_ratio + self.val_ratio + self.test_ratio;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn ratios(&self) -> [f64; 3] {
        [self.train_ratio, self.val_ratio, self.test_ratio]
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    pub fn generator(&self) -> Result<GeneratorConfig, CliError> {
        let regular = match (self.regular_l_in, self.regular_l_out) {
            (0, 0) => None,
            (l_in, l_out) if l_in > 0 && l_out > 0 => Some(RegularGrid { l_in, l_out }),
            _ => return Err(CliError::Config("regular_l_in and regular_l_out must both be set".into())),
        };
        let cfg = GeneratorConfig {
            n_vars: self.n_vars,
            n_samples: self.n_samples,
            n_latents: self.n_latents,
            rate: self.rate,
            missingness: self.missingness,
            noise_std: self.noise_std,
            observation_span: (self.obs_start, self.obs_end),
            forecast_span: (self.fc_start, self.fc_end),
            freq_range: (self.freq_min, self.freq_max),
            trend_std: self.trend_std,
            unobserved_fraction: self.unobserved_fraction,
            regular,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            cosine_period: self.cosine_period,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed,
        }
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        Variant::parse(&self.variant).ok_or_else(|| {
            CliError::Config(format!(
                "unknown variant {:?}; expected one of full, rm_spattf, rm_statve, rp_tsmlp",
                self.variant
            ))
        })
    }

    pub fn ait_config(&self, n_vars: usize, variant: Variant) -> AiTConfig {
        AiTConfig {
            n_vars,
            hidden: self.hidden,
            n_heads: self.n_heads,
            n_blocks: self.n_blocks,
            ffn_width: if self.ffn_width == 0 { self.hidden } else { self.ffn_width },
            variant,
        }
    }

    /// Model selected by `model`, for datasets with `n_vars` variables.
    pub fn model_spec_for(&self, n_vars: usize) -> Result<ModelSpec, CliError> {
        let regular = || match (self.regular_l_in, self.regular_l_out) {
            (0, _) | (_, 0) => Err(CliError::Config(format!(
                "model {:?} needs regular_l_in and regular_l_out",
                self.model
            ))),
            (l_in, l_out) => Ok((l_in, l_out)),
        };
        let spec = match self.model.as_str() {
            "ait" => {
                let cfg = self.ait_config(n_vars, self.variant()?);
                cfg.validate()?;
                ModelSpec::Ait(cfg)
            }
            "static_linear" => {
                let (l_in, l_out) = regular()?;
                ModelSpec::StaticLinear { l_in, l_out }
            }
            "alinear_default" => {
                let (l_in, l_out) = regular()?;
                ModelSpec::RegularAlinear {
                    d: self.alinear_d,
                    l_in,
                    l_out,
                }
            }
            "mean" => ModelSpec::Mean,
            other => {
                return Err(CliError::Config(format!(
                    "unknown model {other:?}; expected ait, static_linear, alinear_default or mean"
                )))
            }
        };
        Ok(spec)
    }

    fn model_spec(&self) -> Result<ModelSpec, CliError> {
        self.model_spec_for(self.n_vars)
    }
}

/// Interprets a command-line value as TOML, falling back to a string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
