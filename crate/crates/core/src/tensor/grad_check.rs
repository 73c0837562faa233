//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};

use super::{Tape, Tensor};

/// Compare the tape's analytic gradients of a scalar-valued computation
/// against central finite differences over every entry of every input.
///
/// Returns the maximum over entries of
/// `|analytic - cd| / max(|analytic|, |cd|, 1e-8)`.
///
/// The closure is called with leaves already registered on the given tape;
/// it must return a scalar. Non-finite values anywhere abort with a
/// diagnostic naming the offending input and entry.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    if h <= 0.0 {
        return Err(Error::Contract(format!(
            "grad_check: step must be positive, got {h}"
        )));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &leaves);
    if !loss.is_scalar() {
        return Err(Error::Contract(format!(
            "grad_check: computation must be scalar-valued, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.item().is_finite() {
        return Err(Error::NonFinite(format!("loss value {}", loss.item())));
    }
    tape.backward(&loss);
    let analytic: Vec<Tensor> = leaves.iter().map(|l| tape.grad(l)).collect();

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut t = Tape::inference();
        let v = f(&mut t, points).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("perturbed loss value {v}")))
        }
    };

    let mut max_err = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let bump = |delta: f64| -> Vec<Tensor> {
                let mut pts = inputs.to_vec();
                let mut t = input.clone();
                t.data_mut()[e] += delta;
                pts[i] = t;
                pts
            };
            let plus = eval(&bump(h))
                .map_err(|err| Error::NonFinite(format!("input {i} entry {e} (+h): {err}")))?;
            let minus = eval(&bump(-h))
                .map_err(|err| Error::NonFinite(format!("input {i} entry {e} (-h): {err}")))?;
            let cd = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[e];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "analytic gradient of input {i} entry {e} is {a}"
                )));
            }
            let err = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
