//! Central finite-difference check of reverse-mode gradients.

use super::{Graph, Scalar, Tensor, TensorError, Var};

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively, so that exact zeros do not divide by zero.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst disagreement.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`, maximized over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(MAGNITUDE_FLOOR)
}

fn evaluate<'s, T, E, M, F>(make: &M, f: &F, inputs: &[Tensor<T>]) -> std::result::Result<f64, E>
where
    T: Scalar,
    M: Fn() -> Graph<'s, T>,
    F: Fn(&mut Graph<'s, T>, &[Var]) -> std::result::Result<Var, E>,
{
    let mut g = make();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item().as_f64())
}

/// Compares the reverse-mode gradient of the scalar function `f` at `inputs`
/// against `(f(x + eps) - f(x - eps)) / (2 eps)` for every coordinate.
///
/// `f` must be deterministic; it is evaluated on inference-mode graphs, so
/// dropout is off.
pub fn grad_check<'s, T, E, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> std::result::Result<GradCheckReport, E>
where
    T: Scalar,
    E: From<TensorError>,
    F: Fn(&mut Graph<'s, T>, &[Var]) -> std::result::Result<Var, E>,
{
    grad_check_with(Graph::new, f, inputs, eps)
}

/// [`grad_check`] on graphs produced by `make`, e.g. seeded training graphs
/// whose dropout masks repeat on every evaluation.
pub fn grad_check_with<'s, T, E, M, F>(
    make: M,
    f: F,
    inputs: &[Tensor<T>],
    eps: f64,
) -> std::result::Result<GradCheckReport, E>
where
    T: Scalar,
    E: From<TensorError>,
    M: Fn() -> Graph<'s, T>,
    F: Fn(&mut Graph<'s, T>, &[Var]) -> std::result::Result<Var, E>,
{
    let mut g = make();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*var) {
            Some(t) => t.data().iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; inputs[i].len()],
        };
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            probe[i].data_mut()[k] = T::lit(orig.as_f64() + eps);
            let plus = evaluate(&make, &f, &probe)?;
            probe[i].data_mut()[k] = T::lit(orig.as_f64() - eps);
            let minus = evaluate(&make, &f, &probe)?;
            probe[i].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(TensorError::NonFinite { op: "grad_check" }.into());
            }
            let err = relative_error(analytic[k], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, k);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::new(&[3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let square_sum = |g: &mut Graph<'_, f64>, v: &[Var]| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        };

        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let loss = square_sum(&mut g, &[xv]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(xv).unwrap().data(), &[2.0, 4.0, 6.0]);

        let report = grad_check(square_sum, &[x], 1e-3).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.coordinates, 3);
    }

    #[test]
    fn relative_error_metric() {
        assert!((max_relative_error(&[1.0, 2.0], &[1.0, 2.5]) - 0.2).abs() < 1e-12);
        assert_eq!(max_relative_error(&[0.0], &[0.0]), 0.0);
    }
}
