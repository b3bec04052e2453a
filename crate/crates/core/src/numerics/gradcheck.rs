//! Central finite-difference oracle for checking analytic gradients.

use std::collections::BTreeMap;

use super::{ParamSet, Tensor};

/// `(f(θ + h·e) − f(θ − h·e)) / 2h` for every coordinate of every parameter.
pub fn finite_diff_grad<F>(mut f: F, params: &ParamSet, h: f64) -> BTreeMap<String, Tensor>
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut probe = params.clone();
    let mut out = BTreeMap::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let base = params.get(&name).expect("listed name").clone();
        let mut grad = Tensor::zeros(base.shape());
        for i in 0..base.len() {
            let x0 = base.data()[i];
            probe.get_mut(&name).expect("name").data_mut()[i] = x0 + h;
            let up = f(&probe);
            probe.get_mut(&name).expect("name").data_mut()[i] = x0 - h;
            let down = f(&probe);
            probe.get_mut(&name).expect("name").data_mut()[i] = x0;
            grad.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.insert(name, grad);
    }
    out
}

/// `‖g_ad − g_fd‖∞ / max(1, ‖g_fd‖∞)`.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    diff / numeric.max_abs().max(1.0)
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares analytic gradients against [`finite_diff_grad`] parameter by parameter.
pub fn compare_gradients(
    analytic: &BTreeMap<String, Tensor>,
    numeric: &BTreeMap<String, Tensor>,
    tolerance: f64,
) -> GradCheckReport {
    let params = numeric
        .iter()
        .map(|(name, fd)| {
            let rel_error = analytic
                .get(name)
                .map_or(f64::INFINITY, |ad| relative_error(ad, fd));
            ParamCheck {
                name: name.clone(),
                numel: fd.len(),
                rel_error,
                passed: rel_error < tolerance,
            }
        })
        .collect();
    GradCheckReport { tolerance, params }
}
