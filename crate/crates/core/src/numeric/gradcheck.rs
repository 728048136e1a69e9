//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numeric::param::ParamStore;
use crate::numeric::tape::{NodeId, Tape};

/// Anything that owns a parameter store and can rebuild a loss from it.
/// Implemented by [`ParamStore`] itself and by the model bundle, so the
/// checker can drive either a bare kernel fragment or the whole model.
pub trait GradientHost {
    fn param_store(&self) -> &ParamStore;
    fn param_store_mut(&mut self) -> &mut ParamStore;
}

impl GradientHost for ParamStore {
    fn param_store(&self) -> &ParamStore {
        self
    }

    fn param_store_mut(&mut self) -> &mut ParamStore {
        self
    }
}

/// Compare analytic gradients against central differences for every scalar
/// parameter of the host.
///
/// `build` records the loss from scratch for the current parameter values and
/// returns the tape plus the scalar tail node. The relative error per scalar
/// uses the denominator max(|analytic|, |numeric|, 1e-8); the worst one is
/// returned. `h` must lie in [1e-6, 1e-3].
pub fn finite_diff_check<H, F>(host: &mut H, h: f64, build: F) -> Result<f64>
where
    H: GradientHost,
    F: Fn(&H) -> Result<(Tape, NodeId)>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Config(format!(
            "finite_diff_check: h={h} outside [1e-6, 1e-3]"
        )));
    }

    host.param_store_mut().zero_grad_all();
    let (tape, tail) = build(host)?;
    tape.backward(tail, host.param_store_mut())?;
    let ids: Vec<_> = host.param_store().ids().collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| host.param_store().get(id).grad.clone())
        .collect();

    let mut worst: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..host.param_store().get(id).len() {
            let orig = host.param_store().get(id).values[i];

            host.param_store_mut().get_mut(id).values[i] = orig + h;
            let (tape, tail) = build(host)?;
            let f_plus = tape.scalar(tail)?;

            host.param_store_mut().get_mut(id).values[i] = orig - h;
            let (tape, tail) = build(host)?;
            let f_minus = tape.scalar(tail)?;

            host.param_store_mut().get_mut(id).values[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
