use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Inputs of relu/hinge/norm nodes closer than this to zero mark a
/// point as too close to a kink for a meaningful finite-difference check.
pub const KINK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Max over checked coordinates of `|analytic - fd| / max(1, |fd|)`.
    pub max_relative_error: f64,
    /// Minimum distance to a non-differentiable point seen at the baseline.
    pub kink_gap: f64,
    /// Baseline lies within [`KINK_TOLERANCE`] of a kink.
    pub near_kink: bool,
    /// Coordinates whose ±h probes changed the relu activation pattern.
    /// These are excluded from `max_relative_error`.
    pub kink_coordinates: usize,
    pub checked_coordinates: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        !self.near_kink && self.max_relative_error < tol
    }
}

struct Eval {
    value: f64,
    signature: u64,
}

fn evaluate<F>(params: &[Tensor], f: &mut F) -> Result<Eval>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::NonScalarLoss(tape.shape(loss).to_vec()));
    }
    Ok(Eval {
        value: tape.item(loss),
        signature: tape.relu_signature(),
    })
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape with every tensor in `params` loaded as a
/// leaf (all marked trainable) and must return a scalar node.
pub fn finite_difference_check<F>(params: &[Tensor], h: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    let params: Vec<Tensor> = params.iter().cloned().map(Tensor::with_grad).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let first = tape.item(loss);
    let base_signature = tape.relu_signature();
    let kink_gap = tape.kink_gap();
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad_or_zeros(v))
        .collect::<Result<_>>()?;

    let second = evaluate(&params, &mut f)?.value;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut max_err = 0.0f64;
    let mut kinks = 0;
    let mut checked = 0;
    let mut probe = params.clone();
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = params[pi].data()[j];
            probe[pi].data_mut()[j] = orig + h;
            let plus = evaluate(&probe, &mut f)?;
            probe[pi].data_mut()[j] = orig - h;
            let minus = evaluate(&probe, &mut f)?;
            probe[pi].data_mut()[j] = orig;

            if plus.signature != base_signature || minus.signature != base_signature {
                kinks += 1;
                continue;
            }
            let fd = (plus.value - minus.value) / (2.0 * h);
            let err = (a - fd).abs() / fd.abs().max(1.0);
            max_err = max_err.max(err);
            checked += 1;
        }
    }

    Ok(GradCheck {
        max_relative_error: max_err,
        kink_gap,
        near_kink: kink_gap < KINK_TOLERANCE,
        kink_coordinates: kinks,
        checked_coordinates: checked,
    })
}
