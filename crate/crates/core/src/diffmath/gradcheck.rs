//! Central finite-difference verification of reverse-mode gradients.

use crate::diffmath::tape::{Tape, Var};
use crate::diffmath::tensor::Tensor;
use crate::error::{Error, Result};

/// Evaluate `build` as a plain function of a flat parameter vector.
fn eval_scalar<F>(build: &F, point: &[f64]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(Tensor::from_vec(point.to_vec()));
    let loss = build(&mut tape, leaf)?;
    let v = tape.value(loss).scalar_value()?;
    if !v.is_finite() {
        return Err(Error::domain("grad_check", "non-finite loss at perturbed point"));
    }
    Ok(v)
}

/// Compare the reverse-mode gradient of a scalar function against central
/// finite differences at `point`.
///
/// `build` constructs the loss from a single flat parameter leaf; it is
/// invoked once for the analytic gradient and twice per coordinate for the
/// difference quotients. Returns
/// `max_i |analytic_i - fd_i| / max(1, |fd_i|)`.
pub fn grad_check<F>(build: F, point: &[f64], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if epsilon <= 0.0 {
        return Err(Error::Config("grad_check epsilon must be positive".into()));
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(Tensor::from_vec(point.to_vec()));
    let loss = build(&mut tape, leaf)?;
    if !tape.value(loss).scalar_value()?.is_finite() {
        return Err(Error::domain("grad_check", "non-finite loss at point"));
    }
    let analytic = tape.backward(loss)?.get(leaf, &tape);

    let mut worst: f64 = 0.0;
    let mut perturbed = point.to_vec();
    for i in 0..point.len() {
        perturbed[i] = point[i] + epsilon;
        let up = eval_scalar(&build, &perturbed)?;
        perturbed[i] = point[i] - epsilon;
        let down = eval_scalar(&build, &perturbed)?;
        perturbed[i] = point[i];
        let fd = (up - down) / (2.0 * epsilon);
        let err = (analytic.data()[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = 0.5 * ||x||^2 has exact central differences.
        let err = grad_check(
            |t, x| {
                let s = t.square_norm(x);
                Ok(t.scale(s, 0.5))
            },
            &[0.3, -1.7, 2.2, 0.05],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn constant_function_gradient_exactly_zero() {
        let err = grad_check(
            |t, x| {
                let z = t.scale(x, 0.0);
                Ok(t.sum(z))
            },
            &[1.0, 2.0],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn composite_network_matches_differences() {
        // x -> tanh -> softplus -> weighted sum, all saturating ops.
        let err = grad_check(
            |t, x| {
                let h = t.tanh(x);
                let s = t.softplus(h);
                let e = t.exp(h)?;
                let m = t.mul(s, e)?;
                Ok(t.sum(m))
            },
            &[0.9, -0.4, 0.2, 1.4, -2.2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn non_finite_rejected() {
        // log reaches zero from above when x crosses the perturbation.
        let res = grad_check(
            |t, x| {
                let l = t.log(x)?;
                Ok(t.sum(l))
            },
            &[1e-6],
            1e-5,
        );
        assert!(res.is_err());
    }
}
