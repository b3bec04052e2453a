//! Temporal encoder → static fusion → spatial encoder → predictor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::alinear::{ALinear, ALinearConfig, TimePoints};
use crate::data::Batch;
use crate::numerics::{fan_in_uniform_init, normal_init, Graph, ParamSet, Tensor, Var, LAYER_NORM_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// No spatial encoder: fused embeddings go straight to the predictor.
    RmSpattf,
    /// No static embedding and no fusion MLP: `h = h_dyna`.
    RmStatve,
    /// Predictor replaced by `MLP([h ‖ φ(q)])`.
    RpTsmlp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::RmSpattf, Variant::RmStatve, Variant::RpTsmlp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RmSpattf => "rm_spattf",
            Variant::RmStatve => "rm_statve",
            Variant::RpTsmlp => "rp_tsmlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AiTConfig {
    pub n_vars: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ffn_width: usize,
    pub variant: Variant,
}

impl AiTConfig {
    /// Hidden width 64, 4 heads, 3 blocks.
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            hidden: 64,
            n_heads: 4,
            n_blocks: 3,
            ffn_width: 64,
            variant: Variant::Full,
        }
    }

    pub fn small(n_vars: usize, hidden: usize, n_heads: usize, n_blocks: usize) -> Self {
        Self {
            n_vars,
            hidden,
            n_heads,
            n_blocks,
            ffn_width: hidden,
            variant: Variant::Full,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.n_vars == 0 || self.hidden == 0 || self.ffn_width == 0 {
            return bad("n_vars, hidden and ffn_width must be positive");
        }
        if self.n_heads == 0 || self.hidden % self.n_heads != 0 {
            return bad("hidden must be divisible by n_heads");
        }
        if self.n_blocks == 0 && self.variant != Variant::RmSpattf {
            return bad("n_blocks must be at least 1");
        }
        Ok(())
    }

    fn uses_blocks(&self) -> bool {
        self.variant != Variant::RmSpattf
    }

    fn uses_static(&self) -> bool {
        self.variant != Variant::RmStatve
    }

    fn temporal(&self) -> ALinear {
        ALinear::new(ALinearConfig::new(self.hidden, None, Some(self.hidden)), "temporal")
    }

    fn predictor(&self) -> ALinear {
        ALinear::new(ALinearConfig::new(self.hidden, Some(self.hidden), None), "predictor")
    }
}

fn dense<R: Rng>(p: &mut ParamSet, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) {
    p.insert(format!("{name}.w"), fan_in_uniform_init(rng, &[fan_in, fan_out], fan_in));
    p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

pub(super) fn init<R: Rng>(cfg: &AiTConfig, rng: &mut R) -> ParamSet {
    let d = cfg.hidden;
    let mut p = ParamSet::new();
    p.extend_prefixed("temporal", cfg.temporal().config.init(rng));
    if cfg.uses_static() {
        p.insert("h_stat", normal_init(rng, &[cfg.n_vars, d], 1.0));
        dense(&mut p, rng, "fusion.l1", 2 * d, d);
        dense(&mut p, rng, "fusion.l2", d, d);
    }
    if cfg.uses_blocks() {
        for l in 0..cfg.n_blocks {
            let b = format!("blocks.{l}");
            for proj in ["q", "k", "v", "o"] {
                dense(&mut p, rng, &format!("{b}.attn.{proj}"), d, d);
            }
            dense(&mut p, rng, &format!("{b}.ffn.l1"), d, cfg.ffn_width);
            dense(&mut p, rng, &format!("{b}.ffn.l2"), cfg.ffn_width, d);
            for ln in ["ln1", "ln2"] {
                p.insert(format!("{b}.{ln}.gain"), Tensor::full(&[d], 1.0));
                p.insert(format!("{b}.{ln}.bias"), Tensor::zeros(&[d]));
            }
        }
    }
    if cfg.variant == Variant::RpTsmlp {
        // φ shares the query embedder's architecture.
        let phi = ALinearConfig::new(d, None, None).init(rng).scoped("query");
        p.extend_prefixed("phi.query", phi);
        dense(&mut p, rng, "tsmlp.l1", 2 * d, d);
        dense(&mut p, rng, "tsmlp.l2", d, 1);
    } else {
        p.extend_prefixed("predictor", cfg.predictor().config.init(rng));
    }
    p
}

fn linear(g: &mut Graph, params: &ParamSet, name: &str, x: Var) -> Result<Var, ModelError> {
    let w = g.param(params, &format!("{name}.w"))?;
    let b = g.param(params, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add_bias(y, b)?)
}

/// `l2(relu(l1(x)))`
fn mlp(g: &mut Graph, params: &ParamSet, name: &str, x: Var) -> Result<Var, ModelError> {
    let h = linear(g, params, &format!("{name}.l1"), x)?;
    let h = g.relu(h)?;
    linear(g, params, &format!("{name}.l2"), h)
}

/// Dynamic embeddings `[B·N, D]`: one adaptive linear call per
/// (sample, variable) with the observation times as keys and the default
/// queries. Variables without observations map to zero.
pub fn temporal_encode(cfg: &AiTConfig, g: &mut Graph, params: &ParamSet, batch: &Batch) -> Result<Var, ModelError> {
    let (b, n, l) = (batch.batch_size, batch.n_vars, batch.max_obs_len());
    let rows = b * n;
    let values = g.constant(batch.obs_values.reshaped(&[rows, l])?);
    let times = g.constant(batch.obs_times.reshaped(&[rows, l])?);
    let mask = batch.obs_mask.reshaped(&[rows, l])?;
    let (h, _) = cfg.temporal().forward(
        g,
        params,
        values,
        Some(TimePoints {
            times,
            mask: Some(&mask),
        }),
        None,
    )?;
    Ok(h)
}

/// `h = MLP(h_dyna ‖ h_stat)` per variable, `[B·N, D]`.
pub fn fuse_static(cfg: &AiTConfig, g: &mut Graph, params: &ParamSet, h_dyna: Var) -> Result<Var, ModelError> {
    let rows = g.value(h_dyna).shape()[0];
    let (n, d) = (cfg.n_vars, cfg.hidden);
    let batch = rows / n;
    let stat = g.param(params, "h_stat")?;
    let stat = g.reshape(stat, &[1, n, d])?;
    let stat = g.repeat_axis(stat, 0, batch)?;
    let stat = g.reshape(stat, &[rows, d])?;
    let joined = g.concat_last(h_dyna, stat)?;
    mlp(g, params, "fusion", joined)
}

/// Post-norm transformer blocks over the `N` variable tokens of each sample.
pub fn spatial_encode(cfg: &AiTConfig, g: &mut Graph, params: &ParamSet, h: Var) -> Result<Var, ModelError> {
    spatial_encode_with_attention(cfg, g, params, h).map(|(y, _)| y)
}

/// As [`spatial_encode`], also returning every block's attention weights
/// `[B·heads, N, N]`.
pub fn spatial_encode_with_attention(
    cfg: &AiTConfig,
    g: &mut Graph,
    params: &ParamSet,
    h: Var,
) -> Result<(Var, Vec<Var>), ModelError> {
    let rows = g.value(h).shape()[0];
    let (n, d, heads) = (cfg.n_vars, cfg.hidden, cfg.n_heads);
    let batch = rows / n;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = h;
    let mut maps = Vec::with_capacity(cfg.n_blocks);
    for l in 0..cfg.n_blocks {
        let p = format!("blocks.{l}");
        let split = |g: &mut Graph, v: Var| -> Result<Var, ModelError> {
            let v = g.reshape(v, &[batch, n, heads, dh])?;
            let v = g.permute(v, &[0, 2, 1, 3])?;
            Ok(g.reshape(v, &[batch * heads, n, dh])?)
        };
        let q = linear(g, params, &format!("{p}.attn.q"), x)?;
        let k = linear(g, params, &format!("{p}.attn.k"), x)?;
        let v = linear(g, params, &format!("{p}.attn.v"), x)?;
        let (q, k, v) = (split(g, q)?, split(g, k)?, split(g, v)?);
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax_rows(scores, None, false)?;
        maps.push(attn);
        let o = g.matmul(attn, v)?;
        let o = g.reshape(o, &[batch, heads, n, dh])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[rows, d])?;
        let o = linear(g, params, &format!("{p}.attn.o"), o)?;
        let r = g.add(x, o)?;
        let gain = g.param(params, &format!("{p}.ln1.gain"))?;
        let bias = g.param(params, &format!("{p}.ln1.bias"))?;
        let x1 = g.layer_norm(r, gain, bias, LAYER_NORM_EPS)?;
        let f = mlp(g, params, &format!("{p}.ffn"), x1)?;
        let r = g.add(x1, f)?;
        let gain = g.param(params, &format!("{p}.ln2.gain"))?;
        let bias = g.param(params, &format!("{p}.ln2.bias"))?;
        x = g.layer_norm(r, gain, bias, LAYER_NORM_EPS)?;
    }
    Ok((x, maps))
}

/// Predictions `[B, N, Q]` from embeddings `[B·N, D]` at the batch's query
/// times.
pub fn predict(cfg: &AiTConfig, g: &mut Graph, params: &ParamSet, h: Var, batch: &Batch) -> Result<Var, ModelError> {
    let (b, n, q) = (batch.batch_size, batch.n_vars, batch.max_query_len());
    let rows = b * n;
    let d = cfg.hidden;
    if cfg.variant == Variant::RpTsmlp {
        let qt = g.constant(batch.query_times.reshaped(&[rows * q, 1])?);
        let phi = ALinear::new(ALinearConfig::new(d, None, None), "phi").embed(g, params, "query", qt)?;
        let phi = g.reshape(phi, &[rows * q, d])?;
        let hq = g.reshape(h, &[rows, 1, d])?;
        let hq = g.repeat_axis(hq, 1, q)?;
        let hq = g.reshape(hq, &[rows * q, d])?;
        let joined = g.concat_last(hq, phi)?;
        let y = mlp(g, params, "tsmlp", joined)?;
        return Ok(g.reshape(y, &[b, n, q])?);
    }
    let qt = g.constant(batch.query_times.reshaped(&[rows, q])?);
    let (y, _) = cfg.predictor().forward(g, params, h, None, Some(qt))?;
    Ok(g.reshape(y, &[b, n, q])?)
}

pub(super) fn forward(cfg: &AiTConfig, g: &mut Graph, params: &ParamSet, batch: &Batch) -> Result<Var, ModelError> {
    let h_dyna = temporal_encode(cfg, g, params, batch)?;
    let h = if cfg.uses_static() {
        fuse_static(cfg, g, params, h_dyna)?
    } else {
        h_dyna
    };
    let h = if cfg.uses_blocks() {
        spatial_encode(cfg, g, params, h)?
    } else {
        h
    };
    predict(cfg, g, params, h, batch)
}

/// Realized temporal-encoder weights `[B·N, D, L]` and, unless the
/// predictor is an MLP, predictor weights `[B·N, Q, D]`.
pub fn weight_maps(cfg: &AiTConfig, params: &ParamSet, batch: &Batch) -> Result<(Tensor, Option<Tensor>), ModelError> {
    let (b, n) = (batch.batch_size, batch.n_vars);
    let (l, q) = (batch.max_obs_len(), batch.max_query_len());
    let rows = b * n;
    let mut g = Graph::new();
    let times = g.constant(batch.obs_times.reshaped(&[rows, l])?);
    let mask = batch.obs_mask.reshaped(&[rows, l])?;
    let temporal = cfg.temporal().weights(
        &mut g,
        params,
        rows,
        l,
        Some(TimePoints {
            times,
            mask: Some(&mask),
        }),
        None,
    )?;
    let predictor = if cfg.variant == Variant::RpTsmlp {
        None
    } else {
        let qt = g.constant(batch.query_times.reshaped(&[rows, q])?);
        let w = cfg.predictor().weights(&mut g, params, rows, cfg.hidden, None, Some(qt))?;
        Some(g.value(w).clone())
    };
    Ok((g.value(temporal).clone(), predictor))
}
