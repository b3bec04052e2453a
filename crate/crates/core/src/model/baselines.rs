use rand::Rng;

use super::ModelError;
use crate::alinear::{ALinear, ALinearConfig, INIT_STD};
use crate::data::Batch;
use crate::numerics::{normal_init, Graph, ParamSet, Tensor, Var};

fn require_regular(batch: &Batch, l_in: usize, l_out: usize, who: &str) -> Result<(), ModelError> {
    if batch.is_regular(l_in, l_out) {
        Ok(())
    } else {
        Err(ModelError::Contract(format!(
            "{who} needs every variable to have exactly {l_in} observations and {l_out} queries"
        )))
    }
}

pub(super) fn static_linear_init<R: Rng>(l_in: usize, l_out: usize, rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("w_static", normal_init(rng, &[l_out, l_in], INIT_STD));
    p
}

/// `y = x · softmax_rows(W)ᵀ` over each variable's fixed-length window.
pub(super) fn static_linear_forward(
    l_in: usize,
    l_out: usize,
    g: &mut Graph,
    params: &ParamSet,
    batch: &Batch,
) -> Result<Var, ModelError> {
    require_regular(batch, l_in, l_out, "static linear baseline")?;
    let (b, n) = (batch.batch_size, batch.n_vars);
    let x = g.constant(batch.obs_values.reshaped(&[b * n, l_in])?);
    let w = g.param(params, "w_static")?;
    let w = g.softmax_rows(w, None, false)?;
    let wt = g.transpose(w)?;
    let y = g.matmul(x, wt)?;
    Ok(g.reshape(y, &[b, n, l_out])?)
}

pub(super) fn regular_alinear_init<R: Rng>(d: usize, l_in: usize, l_out: usize, rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    p.extend_prefixed("alinear", ALinearConfig::new(d, Some(l_in), Some(l_out)).init(rng));
    p
}

/// Adaptive linear layer with default keys and queries.
pub(super) fn regular_alinear_forward(
    d: usize,
    l_in: usize,
    l_out: usize,
    g: &mut Graph,
    params: &ParamSet,
    batch: &Batch,
) -> Result<Var, ModelError> {
    require_regular(batch, l_in, l_out, "default-mode adaptive linear")?;
    let (b, n) = (batch.batch_size, batch.n_vars);
    let layer = ALinear::new(ALinearConfig::new(d, Some(l_in), Some(l_out)), "alinear");
    let x = g.constant(batch.obs_values.reshaped(&[b * n, l_in])?);
    let (y, _) = layer.forward(g, params, x, None, None)?;
    Ok(g.reshape(y, &[b, n, l_out])?)
}

/// Mean of each variable's observations repeated at every query; 0 when
/// the variable is unobserved.
pub(super) fn mean_forward(g: &mut Graph, batch: &Batch) -> Var {
    let (b, n, l, q) = (batch.batch_size, batch.n_vars, batch.max_obs_len(), batch.max_query_len());
    let mut out = vec![0.0; b * n * q];
    for row in 0..b * n {
        let vals = &batch.obs_values.data()[row * l..(row + 1) * l];
        let mask = &batch.obs_mask.data()[row * l..(row + 1) * l];
        let (sum, count) = vals
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, c), (&v, _)| (s + v, c + 1));
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        out[row * q..(row + 1) * q].fill(mean);
    }
    g.constant(Tensor::new(vec![b, n, q], out).expect("shape"))
}
