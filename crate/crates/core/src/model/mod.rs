//! Forecasting models over padded [`Batch`]es: the full adaptive
//! iTransformer, its ablation variants, and the baselines it is compared to.

mod ait;
mod baselines;
mod checkpoint;
mod loss;

pub use ait::{AiTConfig, Variant};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use loss::{loss_weights, mse_loss};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alinear::ALinearError;
use crate::data::Batch;
use crate::numerics::{Graph, Mask, NumericsError, ParamSet, Tensor, Var};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("loss is undefined: the batch has no queries")]
    UndefinedLoss,
    #[error("batch has {found} variables, model expects {expected}")]
    VariableCount { expected: usize, found: usize },
    #[error(transparent)]
    ALinear(#[from] ALinearError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which model a parameter set belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Ait(AiTConfig),
    /// Row-softmax dense `[l_out × l_in]` map shared by all variables.
    StaticLinear { l_in: usize, l_out: usize },
    /// Adaptive linear layer with default keys and queries on a fixed grid.
    RegularAlinear { d: usize, l_in: usize, l_out: usize },
    /// Each variable's mean observed value, for every query.
    Mean,
}

impl ModelSpec {
    pub fn name(&self) -> String {
        match self {
            ModelSpec::Ait(c) => format!("ait-{}", c.variant.as_str()),
            ModelSpec::StaticLinear { .. } => "static-linear".into(),
            ModelSpec::RegularAlinear { .. } => "alinear-default".into(),
            ModelSpec::Mean => "mean".into(),
        }
    }
}

/// Model predictions aligned with the batch's query mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    /// `[B, N, Q]`
    pub values: Tensor,
    pub mask: Mask,
}

/// A model specification together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

impl Model {
    /// Freshly initialized parameters, deterministic in `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match &spec {
            ModelSpec::Ait(cfg) => {
                cfg.validate()?;
                ait::init(cfg, &mut rng)
            }
            ModelSpec::StaticLinear { l_in, l_out } => baselines::static_linear_init(*l_in, *l_out, &mut rng),
            ModelSpec::RegularAlinear { d, l_in, l_out } => {
                baselines::regular_alinear_init(*d, *l_in, *l_out, &mut rng)
            }
            ModelSpec::Mean => ParamSet::new(),
        };
        Ok(Self { spec, params })
    }

    pub fn ait(config: AiTConfig, seed: u64) -> Result<Self, ModelError> {
        Self::new(ModelSpec::Ait(config), seed)
    }

    pub fn static_linear(l_in: usize, l_out: usize, seed: u64) -> Result<Self, ModelError> {
        Self::new(ModelSpec::StaticLinear { l_in, l_out }, seed)
    }

    pub fn mean() -> Self {
        Self {
            spec: ModelSpec::Mean,
            params: ParamSet::new(),
        }
    }

    /// Records the forward pass with `params` in place of the model's own,
    /// returning predictions `[B, N, Q]`.
    pub fn forward_with(&self, g: &mut Graph, params: &ParamSet, batch: &Batch) -> Result<Var, ModelError> {
        match &self.spec {
            ModelSpec::Ait(cfg) => {
                if batch.n_vars != cfg.n_vars {
                    return Err(ModelError::VariableCount {
                        expected: cfg.n_vars,
                        found: batch.n_vars,
                    });
                }
                ait::forward(cfg, g, params, batch)
            }
            ModelSpec::StaticLinear { l_in, l_out } => baselines::static_linear_forward(*l_in, *l_out, g, params, batch),
            ModelSpec::RegularAlinear { d, l_in, l_out } => {
                baselines::regular_alinear_forward(*d, *l_in, *l_out, g, params, batch)
            }
            ModelSpec::Mean => Ok(baselines::mean_forward(g, batch)),
        }
    }

    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<Var, ModelError> {
        self.forward_with(g, &self.params, batch)
    }

    pub fn predict(&self, batch: &Batch) -> Result<PredictionOutput, ModelError> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, batch)?;
        Ok(PredictionOutput {
            values: g.value(y).clone(),
            mask: batch.query_mask.clone(),
        })
    }

    /// Batch loss and its gradient for every parameter.
    pub fn loss_and_grad(
        &self,
        batch: &Batch,
    ) -> Result<(f64, std::collections::BTreeMap<String, Tensor>), ModelError> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, batch)?;
        let loss = mse_loss(&mut g, y, batch)?;
        let value = g.value(loss).item().expect("scalar");
        let grads = g.backward(loss, &self.params)?;
        Ok((value, grads))
    }

    /// Batch loss with `params` substituted, without gradients.
    pub fn loss_with(&self, params: &ParamSet, batch: &Batch) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let y = self.forward_with(&mut g, params, batch)?;
        let loss = mse_loss(&mut g, y, batch)?;
        Ok(g.value(loss).item().expect("scalar"))
    }
}

pub use ait::{fuse_static, predict, spatial_encode, spatial_encode_with_attention, temporal_encode, weight_maps};

#[cfg(test)]
mod tests;
