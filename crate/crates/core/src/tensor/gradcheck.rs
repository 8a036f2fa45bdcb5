use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares tape gradients of `f` against central differences over every
/// parameter entry in `store`.
///
/// Returns `max |analytic − numeric| / max(1, |analytic| + |numeric|)`.
/// `f` must be deterministic: any noise it uses has to be frozen outside.
/// Parameter values are restored and gradients zeroed on return.
pub fn gradient_check<F>(store: &mut ParamStore, h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    store.zero_grads();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("gradient_check probe".into()));
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for j in 0..store.value(id).len() {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + h;
            let up = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig - h;
            let down = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up? - down?) / (2.0 * h);
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
