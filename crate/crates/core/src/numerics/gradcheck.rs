use super::{NumericsError, ParamSet};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Coordinate where the maximum was reached, if any coordinate counted.
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Coordinates whose analytic and numeric magnitudes sum to at most this
/// value are skipped.
pub const NEGLIGIBLE_GRADIENT: f64 = 1e-9;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

/// Finite-difference formula.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h²).
    #[default]
    ThreePoint,
    /// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, error O(h⁴).
    /// Tolerates a larger step, which keeps round-off small on
    /// coordinates with tiny gradients.
    FivePoint,
}

/// Compares `analytic` with central differences of `f` around `x`.
///
/// `x` is restored before returning.
pub fn check_flat(
    x: &mut [f64],
    analytic: &[f64],
    epsilon: f64,
    f: impl FnMut(&[f64]) -> f64,
) -> Result<GradCheck, NumericsError> {
    check_flat_with(x, analytic, epsilon, Stencil::ThreePoint, f)
}

pub fn check_flat_with(
    x: &mut [f64],
    analytic: &[f64],
    epsilon: f64,
    stencil: Stencil,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Result<GradCheck, NumericsError> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(NumericsError::Epsilon(epsilon));
    }
    if x.len() != analytic.len() {
        return Err(NumericsError::shape("grad_check", &[x.len()], &[analytic.len()]));
    }
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_index: None,
        checked: 0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        let mut at = |x: &mut [f64], d: f64| {
            x[i] = orig + d;
            let v = f(x);
            x[i] = orig;
            v
        };
        let numeric = match stencil {
            Stencil::ThreePoint => {
                let (plus, minus) = (at(x, epsilon), at(x, -epsilon));
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(NumericsError::NonFiniteObjective);
                }
                (plus - minus) / (2.0 * epsilon)
            }
            Stencil::FivePoint => {
                let v = [
                    at(x, epsilon),
                    at(x, -epsilon),
                    at(x, 2.0 * epsilon),
                    at(x, -2.0 * epsilon),
                ];
                if v.iter().any(|v| !v.is_finite()) {
                    return Err(NumericsError::NonFiniteObjective);
                }
                (8.0 * (v[0] - v[1]) - (v[2] - v[3])) / (12.0 * epsilon)
            }
        };
        if analytic[i].abs() + numeric.abs() <= NEGLIGIBLE_GRADIENT {
            continue;
        }
        report.checked += 1;
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || report.worst_index.is_none() {
            report.max_relative_error = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// Finite-difference check over every scalar of a parameter set.
///
/// `objective` must return the loss and accumulate analytic gradients into
/// the parameters; gradients are zeroed before each call.
pub fn grad_check<M: ParamSet + ?Sized>(
    model: &mut M,
    epsilon: f64,
    objective: impl FnMut(&mut M) -> Result<f64, NumericsError>,
) -> Result<GradCheck, NumericsError> {
    grad_check_with(model, epsilon, Stencil::ThreePoint, objective)
}

pub fn grad_check_with<M: ParamSet + ?Sized>(
    model: &mut M,
    epsilon: f64,
    stencil: Stencil,
    mut objective: impl FnMut(&mut M) -> Result<f64, NumericsError>,
) -> Result<GradCheck, NumericsError> {
    model.zero_grad();
    let base = objective(model)?;
    if !base.is_finite() {
        return Err(NumericsError::NonFiniteObjective);
    }
    let analytic = model.flat_grads();
    let mut x = model.flat_values();
    let mut failure = None;
    let report = check_flat_with(&mut x, &analytic, epsilon, stencil, |values| {
        model.set_flat_values(values);
        model.zero_grad();
        match objective(model) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    model.set_flat_values(&x);
    if let Some(e) = failure {
        return Err(e);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ops, Parameter, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let c = [0.3, -1.7, 2.5, 4.0];
        let mut x = vec![1.0, 2.0, -3.0, 0.5];
        let report = check_flat(&mut x, &c, 1e-5, |x| x.iter().zip(&c).map(|(a, b)| a * b).sum()).unwrap();
        assert!(report.max_relative_error < 1e-9, "{report:?}");
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn five_point_is_exact_on_quartics() {
        let quartic = |x: &[f64]| x.iter().map(|&v: &f64| v.powi(4) - 2.0 * v.powi(3)).sum::<f64>();
        let mut x = vec![0.7, -1.3, 2.1];
        let analytic: Vec<f64> = x.iter().map(|&v: &f64| 4.0 * v.powi(3) - 6.0 * v * v).collect();
        let five = check_flat_with(&mut x, &analytic, 1e-2, Stencil::FivePoint, quartic).unwrap();
        let three = check_flat(&mut x, &analytic, 1e-2, quartic).unwrap();
        assert!(five.max_relative_error < 1e-10, "{five:?}");
        assert!(three.max_relative_error > 1e-6, "{three:?}");
        assert_eq!(x, vec![0.7, -1.3, 2.1]);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut x = vec![1.0, 2.0];
        let report = check_flat(&mut x, &[0.0, 0.0], 1e-5, |_| 42.0).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
        assert_eq!(report.checked, 0);
    }

    #[test]
    fn epsilon_out_of_range_rejected() {
        let mut x = vec![1.0];
        assert!(check_flat(&mut x, &[0.0], 0.5, |_| 0.0).is_err());
        assert!(check_flat(&mut x, &[0.0], 0.0, |_| 0.0).is_err());
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut x = vec![1.0];
        let err = check_flat(&mut x, &[1.0], 1e-5, |_| f64::NAN).unwrap_err();
        assert!(matches!(err, NumericsError::NonFiniteObjective));
    }

    #[test]
    fn cross_entropy_softmax_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = Tensor::new(vec![4, 5], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let gold = [0usize, 3, 1, 2];
        let mut params = vec![Parameter::new(
            "w",
            Tensor::new(vec![5, 4], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        )];
        let report = grad_check(&mut params, 1e-5, |p| {
            let logits = ops::matmul(&input, &p[0].value)?;
            let logp = ops::log_softmax_rows(&logits);
            let mut loss = 0.0;
            let mut g = Tensor::zeros(logp.shape());
            for (i, &y) in gold.iter().enumerate() {
                loss -= logp.get(i, y);
                g.set(i, y, -1.0);
            }
            let glogits = ops::log_softmax_rows_backward(&logp, &g)?;
            let (_, gw) = ops::matmul_backward(&input, &p[0].value, &glogits)?;
            p[0].accumulate(&gw)?;
            Ok(loss)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
