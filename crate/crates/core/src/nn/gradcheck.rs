use alloc::vec::Vec;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{config, Error, Result};
use crate::math;

/// Compares tape gradients against central differences.
///
/// Returns the maximum over checked coordinates of
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`. When the store
/// holds more than `max_coords` scalars an evenly strided subset is checked.
pub fn finite_diff_check<F>(store: &mut ParamStore, h: f64, max_coords: usize, loss_fn: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if !(h > 1e-6 && h < 1e-3) {
        return Err(config("finite difference step must lie in (1e-6, 1e-3)"));
    }
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        check_finite(tape.value(loss).data()[0])?;
        tape.backward(loss)?
    };

    let coords: Vec<(usize, usize)> = store
        .ids()
        .flat_map(|id| (0..store.value(id).len()).map(move |j| (id.index(), j)))
        .collect();
    let stride = if coords.len() > max_coords.max(1) {
        coords.len().div_ceil(max_coords.max(1))
    } else {
        1
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        check_finite(tape.value(loss).data()[0])
    };

    let mut worst: f64 = 0.0;
    for &(p, j) in coords.iter().step_by(stride) {
        let id = store.ids().nth(p).expect("param index");
        let original = store.value(id).data()[j];
        store.value_mut(id).data_mut()[j] = original + h;
        let plus = eval(store);
        store.value_mut(id).data_mut()[j] = original - h;
        let minus = eval(store);
        store.value_mut(id).data_mut()[j] = original;
        let numeric = (plus? - minus?) / (2.0 * h);
        let exact = analytic.get(id).map_or(0.0, |g| g.data()[j]);
        let err = math::abs(exact - numeric) / (math::abs(exact) + math::abs(numeric) + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(alloc::string::String::from("finite_diff_check loss")))
    }
}
