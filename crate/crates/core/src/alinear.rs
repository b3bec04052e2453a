//! Adaptive linear layer.
//!
//! A linear map `y = W x` whose weight matrix is realized per call as
//! `W = softmax_rows(Q Kᵀ)`, where the keys `K` embed the input time points
//! and the queries `Q` embed the output time points. When one side has no
//! time points, a learnable default matrix of fixed length takes its place,
//! so the layer covers every mix of variable and fixed input/output lengths.
//!
//! Every row of `W` is a probability vector over the unmasked inputs, so
//! each output is a convex combination of the inputs. A fully masked input
//! yields an all-zero output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{normal_init, Graph, Mask, NumericsError, ParamSet, Tensor, Var};

/// Standard deviation of the initial weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ALinearError {
    #[error("no input time points and the layer has no fixed input length")]
    MissingKeys,
    #[error("no output time points and the layer has no fixed output length")]
    MissingQueries,
    #[error("{what}: expected length {expected}, got {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Shape of an adaptive linear layer. `in_len` / `out_len` enable the
/// default key / query matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ALinearConfig {
    pub d: usize,
    pub in_len: Option<usize>,
    pub out_len: Option<usize>,
}

impl ALinearConfig {
    pub fn new(d: usize, in_len: Option<usize>, out_len: Option<usize>) -> Self {
        assert!(d >= 1, "embedding width must be positive");
        Self { d, in_len, out_len }
    }

    /// Fresh parameters: `key.*` and `query.*` embedders (`1 → D → D`),
    /// plus `k_default [in_len × D]` and `q_default [out_len × D]` when the
    /// corresponding length is fixed.
    pub fn init<R: Rng>(&self, rng: &mut R) -> ParamSet {
        let d = self.d;
        let mut p = ParamSet::new();
        for side in ["key", "query"] {
            p.insert(format!("{side}.w1"), normal_init(rng, &[1, d], INIT_STD));
            p.insert(format!("{side}.b1"), Tensor::zeros(&[d]));
            p.insert(format!("{side}.w2"), normal_init(rng, &[d, d], INIT_STD));
            p.insert(format!("{side}.b2"), Tensor::zeros(&[d]));
        }
        if let Some(l) = self.in_len {
            p.insert("k_default", normal_init(rng, &[l, d], INIT_STD));
        }
        if let Some(l) = self.out_len {
            p.insert("q_default", normal_init(rng, &[l, d], INIT_STD));
        }
        p
    }
}

/// An adaptive linear layer bound to a parameter-name prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct ALinear {
    pub config: ALinearConfig,
    prefix: String,
}

/// Batched input side: `[G, L]` time points and an optional validity mask.
#[derive(Clone, Copy, Debug)]
pub struct TimePoints<'a> {
    pub times: Var,
    pub mask: Option<&'a Mask>,
}

impl ALinear {
    pub fn new(config: ALinearConfig, prefix: impl Into<String>) -> Self {
        Self {
            config,
            prefix: prefix.into(),
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    /// Two-layer embedder applied to each scalar of `times [G, L]`,
    /// giving `[G, L, D]`.
    pub fn embed(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        side: &str,
        times: Var,
    ) -> Result<Var, ALinearError> {
        let shape = g.value(times).shape().to_vec();
        let rows: usize = shape.iter().product();
        let d = self.config.d;
        let w1 = g.param(params, &self.name(&format!("{side}.w1")))?;
        let b1 = g.param(params, &self.name(&format!("{side}.b1")))?;
        let w2 = g.param(params, &self.name(&format!("{side}.w2")))?;
        let b2 = g.param(params, &self.name(&format!("{side}.b2")))?;
        let col = g.reshape(times, &[rows, 1])?;
        let h = g.matmul(col, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.relu(h)?;
        let h = g.matmul(h, w2)?;
        let h = g.add_bias(h, b2)?;
        let mut out_shape = shape;
        out_shape.push(d);
        Ok(g.reshape(h, &out_shape)?)
    }

    /// Realized weight matrix `[G, L_out, L_in]` for a batch of `G` rows.
    pub fn weights(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        groups: usize,
        l_in: usize,
        s: Option<TimePoints<'_>>,
        t: Option<Var>,
    ) -> Result<Var, ALinearError> {
        let keys = match s {
            Some(tp) => {
                check_len("input time points", l_in, g.value(tp.times).shape()[1])?;
                Side::Dynamic(self.embed(g, params, "key", tp.times)?)
            }
            None => {
                let fixed = self.config.in_len.ok_or(ALinearError::MissingKeys)?;
                check_len("input length", fixed, l_in)?;
                Side::Default(g.param(params, &self.name("k_default"))?)
            }
        };
        let (queries, l_out) = match t {
            Some(tv) => {
                let l = g.value(tv).shape()[1];
                (Side::Dynamic(self.embed(g, params, "query", tv)?), l)
            }
            None => {
                let fixed = self.config.out_len.ok_or(ALinearError::MissingQueries)?;
                (Side::Default(g.param(params, &self.name("q_default"))?), fixed)
            }
        };
        let scores = match (queries, keys) {
            (Side::Dynamic(q), Side::Dynamic(k)) => {
                let kt = g.transpose(k)?;
                g.matmul(q, kt)?
            }
            (Side::Dynamic(q), Side::Default(k)) => {
                let kt = g.transpose(k)?;
                g.matmul(q, kt)?
            }
            (Side::Default(q), Side::Dynamic(k)) => {
                let qt = g.transpose(q)?;
                let s = g.matmul(k, qt)?;
                g.transpose(s)?
            }
            (Side::Default(q), Side::Default(k)) => {
                let kt = g.transpose(k)?;
                let s = g.matmul(q, kt)?;
                let s = g.reshape(s, &[1, l_out, l_in])?;
                g.repeat_axis(s, 0, groups)?
            }
        };
        let mask = s.and_then(|tp| tp.mask).map(|m| m.repeat_rows(l_out));
        Ok(g.softmax_rows(scores, mask.as_ref(), true)?)
    }

    /// `y [G, L_out] = W x` for `x [G, L_in]`; also returns `W`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        x: Var,
        s: Option<TimePoints<'_>>,
        t: Option<Var>,
    ) -> Result<(Var, Var), ALinearError> {
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(NumericsError::Dimension {
                op: "alinear",
                left: xs,
                right: vec![],
            }
            .into());
        }
        let (groups, l_in) = (xs[0], xs[1]);
        let w = self.weights(g, params, groups, l_in, s, t)?;
        let l_out = g.value(w).shape()[1];
        let xc = g.reshape(x, &[groups, l_in, 1])?;
        let y = g.matmul(w, xc)?;
        let y = g.reshape(y, &[groups, l_out])?;
        Ok((y, w))
    }
}

enum Side {
    Dynamic(Var),
    Default(Var),
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ALinearError> {
    if expected == found {
        Ok(())
    } else {
        Err(ALinearError::Length {
            what,
            expected,
            found,
        })
    }
}

/// A standalone layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ALinearParams {
    pub config: ALinearConfig,
    pub params: ParamSet,
}

impl ALinearParams {
    pub fn init<R: Rng>(config: ALinearConfig, rng: &mut R) -> Self {
        let params = config.init(rng);
        Self { config, params }
    }

    fn layer(&self) -> ALinear {
        ALinear::new(self.config, "")
    }
}

/// One un-batched call: `x [L_in]`, optional input times `s [L_in]` with
/// optional mask, optional output times `t [L_out]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ALinearInput<'a> {
    pub x: &'a [f64],
    pub s: Option<&'a [f64]>,
    pub s_mask: Option<&'a [bool]>,
    pub t: Option<&'a [f64]>,
}

fn record_input(g: &mut Graph, input: &ALinearInput<'_>) -> Result<(Var, Option<Var>, Option<Mask>, Option<Var>), ALinearError> {
    let l_in = input.x.len();
    let x = g.constant(Tensor::new(vec![1, l_in], input.x.to_vec())?);
    let s = match input.s {
        Some(s) => {
            check_len("input time points", l_in, s.len())?;
            Some(g.constant(Tensor::new(vec![1, l_in], s.to_vec())?))
        }
        None => None,
    };
    let mask = match (input.s, input.s_mask) {
        (Some(_), Some(m)) => {
            check_len("input mask", l_in, m.len())?;
            Some(Mask::new(vec![1, l_in], m.to_vec())?)
        }
        _ => None,
    };
    let t = match input.t {
        Some(t) => Some(g.constant(Tensor::new(vec![1, t.len()], t.to_vec())?)),
        None => None,
    };
    Ok((x, s, mask, t))
}

fn run(params: &ALinearParams, input: &ALinearInput<'_>) -> Result<(Tensor, Tensor), ALinearError> {
    let mut g = Graph::new();
    let (x, s, mask, t) = record_input(&mut g, input)?;
    let layer = params.layer();
    let tp = s.map(|times| TimePoints {
        times,
        mask: mask.as_ref(),
    });
    let (y, w) = layer.forward(&mut g, &params.params, x, tp, t)?;
    let y = g.value(y);
    let w = g.value(w);
    let (lo, li) = (w.shape()[1], w.shape()[2]);
    Ok((
        y.reshaped(&[lo])?,
        w.reshaped(&[lo, li])?,
    ))
}

/// Key embeddings `[L × D]` of input time points.
pub fn embed_keys(params: &ALinearParams, s: &[f64]) -> Result<Tensor, ALinearError> {
    embed_side(params, "key", s)
}

/// Query embeddings `[L × D]` of output time points.
pub fn embed_queries(params: &ALinearParams, t: &[f64]) -> Result<Tensor, ALinearError> {
    embed_side(params, "query", t)
}

fn embed_side(params: &ALinearParams, side: &str, times: &[f64]) -> Result<Tensor, ALinearError> {
    let mut g = Graph::new();
    let tv = g.constant(Tensor::new(vec![1, times.len()], times.to_vec())?);
    let e = params.layer().embed(&mut g, &params.params, side, tv)?;
    Ok(g.value(e).reshaped(&[times.len(), params.config.d])?)
}

/// Output `[L_out]` of one adaptive linear call.
pub fn alinear_forward(params: &ALinearParams, input: &ALinearInput<'_>) -> Result<Tensor, ALinearError> {
    run(params, input).map(|(y, _)| y)
}

/// The realized `[L_out × L_in]` weight matrix of the same call.
pub fn export_weight_matrix(params: &ALinearParams, input: &ALinearInput<'_>) -> Result<Tensor, ALinearError> {
    run(params, input).map(|(_, w)| w)
}
