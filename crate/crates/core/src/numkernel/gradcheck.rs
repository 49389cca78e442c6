//! Central finite-difference verification of analytic gradients.

use super::Parameterized;
use crate::error::{Error, Result};

/// Checks every parameter element of `model` against central differences.
///
/// `loss` must be deterministic (no dropout), run in 64-bit precision, and
/// accumulate analytic gradients into the model's parameters as a side
/// effect. Returns the worst disagreement `|analytic - numeric|` normalized
/// by the largest gradient magnitude seen (analytic or numeric), so the
/// result reads as a relative error at the gradient's own scale.
pub fn grad_check<M, L>(model: &mut M, mut loss: L, epsilon: f64) -> Result<f64>
where
    M: Parameterized<f64>,
    L: FnMut(&mut M) -> Result<f64>,
{
    model.zero_grads();
    let base = loss(model)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {base} in gradient check")));
    }
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.as_slice().to_vec()).collect();
    let n_params = analytic.len();

    let mut numeric: Vec<Vec<f64>> = analytic.iter().map(|g| vec![0.0; g.len()]).collect();
    for pi in 0..n_params {
        for ei in 0..numeric[pi].len() {
            let orig = model.params()[pi].value.as_slice()[ei];
            model.params_mut()[pi].value.as_mut_slice()[ei] = orig + epsilon;
            model.zero_grads();
            let f_plus = loss(model)?;
            model.params_mut()[pi].value.as_mut_slice()[ei] = orig - epsilon;
            model.zero_grads();
            let f_minus = loss(model)?;
            model.params_mut()[pi].value.as_mut_slice()[ei] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::Numeric("non-finite loss during finite differencing".into()));
            }
            numeric[pi][ei] = (f_plus - f_minus) / (2.0 * epsilon);
        }
    }
    model.zero_grads();

    let mut scale: f64 = 1e-12;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        for (&av, &nv) in a.iter().zip(n.iter()) {
            scale = scale.max(av.abs()).max(nv.abs());
        }
    }
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        for (&av, &nv) in a.iter().zip(n.iter()) {
            worst = worst.max((av - nv).abs() / scale);
        }
    }
    Ok(worst)
}

/// Fault injection for checker-sensitivity tests: skews every gradient of
/// the first parameter by a constant offset.
pub fn corrupt_gradients<M: Parameterized<f64>>(model: &mut M) {
    if let Some(p) = model.params_mut().into_iter().next() {
        for g in p.grad.as_mut_slice() {
            *g += 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{Matrix, Parameter};

    struct Flat {
        p: Parameter<f64>,
    }

    impl Parameterized<f64> for Flat {
        fn params(&self) -> Vec<&Parameter<f64>> {
            vec![&self.p]
        }
        fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
            vec![&mut self.p]
        }
    }

    fn sum_loss(m: &mut Flat) -> crate::error::Result<f64> {
        let s: f64 = m.p.value.as_slice().iter().sum();
        for g in m.p.grad.as_mut_slice() {
            *g += 1.0;
        }
        Ok(s)
    }

    #[test]
    fn linear_closure_has_near_zero_error() {
        let mut m = Flat { p: Parameter::new("p", Matrix::from_vec(2, 2, vec![0.3, -0.7, 1.2, 0.0])) };
        let err = grad_check(&mut m, sum_loss, 1e-5).unwrap();
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn quadratic_closure_checks_out() {
        // f = sum(theta^2), grad = 2 theta.
        let mut m = Flat { p: Parameter::new("p", Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0])) };
        let err = grad_check(
            &mut m,
            |m| {
                let mut s = 0.0;
                for (v, g) in m.p.value.as_slice().iter().zip(m.p.grad.as_mut_slice().iter_mut()) {
                    s += v * v;
                    *g += 2.0 * v;
                }
                Ok(s)
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut m = Flat { p: Parameter::new("p", Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0])) };
        let err = grad_check(
            &mut m,
            |m| {
                let s: f64 = m.p.value.as_slice().iter().map(|v| v * v).sum();
                for (v, g) in m.p.value.as_slice().iter().zip(m.p.grad.as_mut_slice().iter_mut()) {
                    *g += 2.0 * v;
                }
                corrupt_gradients(m);
                Ok(s)
            },
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "err {err}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut m = Flat { p: Parameter::new("p", Matrix::from_vec(1, 1, vec![0.5])) };
        assert!(grad_check(&mut m, |_| Ok(f64::NAN), 1e-5).is_err());
    }
}
