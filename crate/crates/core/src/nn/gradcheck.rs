//! Central finite-difference check of a regressor's parameter gradients.

use crate::error::Result;
use crate::model::SequenceRegressor;
use crate::preprocess::SampleView;
use crate::seed::SeedStream;

use super::tape::Tape;

/// Outcome of [`check_gradients`] over every scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Perturbations that moved some relu input across zero. The difference
    /// quotient then spans two linear pieces and is not a valid oracle.
    pub kinks: usize,
    /// Kink-crossing perturbations whose difference quotient still agrees.
    pub kinks_agreeing: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn loss_of<M: SequenceRegressor + ?Sized>(model: &M, x: SampleView<'_>, target: f64) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let mut rng = SeedStream::root(0).rng();
    let y = model.predict_sample(&mut tape, &p, x, false, &mut rng)?;
    let l = tape.logcosh_mean(y, &[target]);
    tape.check_finite()?;
    Ok((tape.value(l).item(), tape.relu_pattern()))
}

/// Compares the tape gradient of `logcosh(f(x) - target)` with central
/// differences of step `h` for every scalar parameter. Relative errors use
/// `floor` as the smallest denominator; `tol` only classifies the
/// kink-crossing perturbations.
pub fn check_gradients<M: SequenceRegressor + ?Sized>(
    model: &mut M,
    x: SampleView<'_>,
    target: f64,
    h: f64,
    floor: f64,
    tol: f64,
) -> Result<GradCheck> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let mut rng = SeedStream::root(0).rng();
    let y = model.predict_sample(&mut tape, &p, x, false, &mut rng)?;
    let l = tape.logcosh_mean(y, &[target]);
    let mut analytic = model.params().zeros_like();
    tape.backward(l)?.accumulate_params(&mut analytic, 1.0);
    let base = tape.relu_pattern();

    let mut out = GradCheck {
        checked: 0,
        kinks: 0,
        kinks_agreeing: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = model.params().tensors()[pi].data()[j];
            model.params_mut().tensors_mut()[pi].data_mut()[j] = orig + h;
            let (lp, pat_p) = loss_of(model, x, target)?;
            model.params_mut().tensors_mut()[pi].data_mut()[j] = orig - h;
            let (lm, pat_m) = loss_of(model, x, target)?;
            model.params_mut().tensors_mut()[pi].data_mut()[j] = orig;
            let e = rel_err(a, (lp - lm) / (2.0 * h), floor);
            if pat_p != base || pat_m != base {
                out.kinks += 1;
                out.kinks_agreeing += usize::from(e < tol);
                continue;
            }
            out.checked += 1;
            if e > out.max_rel_err {
                out.max_rel_err = e;
                out.worst = format!("{}[{j}]", model.params().name(super::ParamId(pi)));
            }
        }
    }
    Ok(out)
}
