//! Central finite-difference verification of tape gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-parameter relative error `‖a − n‖ / max(‖a‖, ‖n‖)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub params_checked: usize,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Element indices probed for a tensor of `len` elements.
fn probe_indices(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        return (0..len).collect();
    }
    (0..limit)
        .map(|i| i * len / limit + (i * 7) % (len / limit).max(1))
        .collect()
}

/// Analytic gradients (via `backward`) for every parameter.
pub fn analytic_gradients<F>(store: &mut ParamStore, loss: &F) -> Vec<Vec<f64>>
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    store.zero_grad();
    let mut g = Graph::new();
    let root = loss(&mut g, store);
    g.backward(root, store);
    store.iter().map(|p| p.grad.data().to_vec()).collect()
}

/// Compares `analytic` against central differences with step `eps`, probing at
/// most `per_param` elements of each parameter.
pub fn check_against<F>(
    store: &mut ParamStore,
    loss: &F,
    analytic: &[Vec<f64>],
    eps: f64,
    per_param: usize,
) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let root = loss(&mut g, s);
        g.value(root).item()
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        params_checked: 0,
        elements_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let len = store.get(id).value.len();
        let mut diff = 0.0;
        let mut a_norm = 0.0;
        let mut n_norm = 0.0;
        for idx in probe_indices(len, per_param) {
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + eps;
            let up = eval(store);
            store.get_mut(id).value.data_mut()[idx] = orig - eps;
            let down = eval(store);
            store.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi][idx];
            diff += (a - numeric) * (a - numeric);
            a_norm += a * a;
            n_norm += numeric * numeric;
            report.elements_checked += 1;
        }
        let denom = a_norm.sqrt().max(n_norm.sqrt());
        let rel = if denom > 1e-10 {
            diff.sqrt() / denom
        } else {
            diff.sqrt()
        };
        report.params_checked += 1;
        if rel > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst_param = store.get(id).name.clone();
            }
        }
    }
    report
}

/// Full check: backward pass, then central differences.
pub fn grad_check<F>(store: &mut ParamStore, loss: F, eps: f64, per_param: usize) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let analytic = analytic_gradients(store, &loss);
    check_against(store, &loss, &analytic, eps, per_param)
}
