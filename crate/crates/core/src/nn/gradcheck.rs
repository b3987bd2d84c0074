//! Central finite-difference checks of back-propagated gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over all values.
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares the gradient of `loss_fn` w.r.t. every trainable parameter with
/// central differences of step `step`. `loss_fn` must be deterministic.
pub fn check_store<F>(store: &ParamStore, step: f64, loss_fn: F) -> Result<GradCheck>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var)>,
{
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let (g, loss) = loss_fn(&analytic_store)?;
    g.backward(loss)?.accumulate_into(&g, &mut analytic_store);

    let value = |s: &ParamStore| -> Result<f64> {
        let (g, loss) = loss_fn(s)?;
        Ok(g.value(loss).item())
    };

    let mut probe = store.clone();
    let (mut diff_sq, mut a_sq, mut n_sq, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
    let mut checked = 0;
    for id in store.ids() {
        if !store.get(id).trainable {
            continue;
        }
        for i in 0..store.get(id).tensor.len() {
            let original = store.get(id).tensor.data()[i];
            probe.get_mut(id).tensor.data_mut()[i] = original + step;
            let plus = value(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = original - step;
            let minus = value(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = analytic_store.get(id).grad.data()[i];
            diff_sq += (analytic - numeric).powi(2);
            a_sq += analytic * analytic;
            n_sq += numeric * numeric;
            max_abs = max_abs.max((analytic - numeric).abs());
            checked += 1;
        }
    }
    let denom = a_sq.sqrt().max(n_sq.sqrt());
    let relative_error = if denom == 0.0 { 0.0 } else { diff_sq.sqrt() / denom };
    Ok(GradCheck {
        relative_error,
        max_abs_error: max_abs,
        checked,
    })
}
