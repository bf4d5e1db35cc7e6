use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Worst central-difference disagreement, per parameter and overall.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub per_param: Vec<(ParamId, String, f64)>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn error_for(&self, name: &str) -> Option<f64> {
        self.per_param
            .iter()
            .find(|(_, n, _)| n == name)
            .map(|&(_, _, e)| e)
    }
}

/// Step size that balances stencil truncation against roundoff in `f64`.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Gradients below this magnitude are compared absolutely: finite differences
/// of an `O(1)` loss carry roughly `1e-12` of roundoff.
pub const ERROR_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of `f` against the five-point stencil
/// `(−f(θ+2ε) + 8f(θ+ε) − 8f(θ−ε) + f(θ−2ε)) / 12ε`, one coordinate at a
/// time, for every parameter in `ids`. Relative error is
/// `|a − n| / max(|a|, |n|, ERROR_FLOOR)`.
///
/// `f` must be deterministic: it is re-run four times per coordinate.
/// Parameter values are restored on return; gradients hold the analytic result.
pub fn grad_check<F>(store: &mut ParamStore, ids: &[ParamId], epsilon: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    tape.backward(loss)?;
    store.accumulate_grads(&tape);
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        Ok(tape.item(loss))
    };

    let mut per_param = Vec::with_capacity(ids.len());
    let mut worst = 0.0f64;
    for &id in ids {
        let n = store.get(id).values.len();
        let mut param_worst = 0.0f64;
        for k in 0..n {
            let original = store.get(id).values[k];
            let mut at = |store: &mut ParamStore, step: f64| {
                store.get_mut(id).values[k] = original + step * epsilon;
                eval(store)
            };
            let plus2 = at(store, 2.0)?;
            let plus = at(store, 1.0)?;
            let minus = at(store, -1.0)?;
            let minus2 = at(store, -2.0)?;
            store.get_mut(id).values[k] = original;

            let numeric = (8.0 * (plus - minus) - (plus2 - minus2)) / (12.0 * epsilon);
            let analytic = store.get(id).grad[k];
            let denom = analytic.abs().max(numeric.abs()).max(ERROR_FLOOR);
            param_worst = param_worst.max((analytic - numeric).abs() / denom);
        }
        worst = worst.max(param_worst);
        per_param.push((id, store.get(id).name.clone(), param_worst));
    }
    Ok(GradCheckReport {
        per_param,
        max_relative_error: worst,
    })
}
