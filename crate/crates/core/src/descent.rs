//! Limited-memory BFGS with Armijo backtracking, used for local updates when
//! the loss has no closed form.

use std::collections::VecDeque;

use crate::error::{DsplError, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOptions<T> {
    pub max_iter: usize,
    /// Stop once `‖∇‖ ≤ grad_tol * max(1, ‖∇(x₀)‖)`.
    pub grad_tol: T,
    /// Number of curvature pairs kept.
    pub memory: usize,
}

impl<T: Scalar> Default for DescentOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 5_000,
            grad_tol: T::lit(1e-11),
            memory: 10,
        }
    }
}

/// Minimizes a smooth function. `eval(x, grad)` returns `f(x)` and writes `∇f(x)`.
pub fn minimize<T, F>(x0: Vec<T>, opts: &DescentOptions<T>, mut eval: F) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![T::zero(); n];
    let mut f = eval(&x, &mut g);
    let g0 = dot(&g, &g).sqrt();
    let target = opts.grad_tol * g0.max(T::one());
    let c1 = T::lit(1e-4);
    let roundoff = T::lit(64.0) * T::epsilon();

    let mut pairs: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];

    for iter in 0..opts.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if !gnorm.is_finite() || !f.is_finite() {
            return Err(DsplError::NonFinite("descent iterate"));
        }
        if gnorm <= target {
            return Ok(x);
        }

        let mut d = two_loop(&g, &pairs);
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            pairs.clear();
            d = g.iter().map(|v| -*v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = if pairs.is_empty() && iter == 0 {
            T::one() / gnorm.max(T::one())
        } else {
            T::one()
        };

        let mut accepted = false;
        for _ in 0..80 {
            for ((xn, xi), di) in x_new.iter_mut().zip(&x).zip(&d) {
                *xn = *xi + step * *di;
            }
            let f_new = eval(&x_new, &mut g_new);
            let sufficient = f_new <= f + c1 * step * slope;
            // near the optimum the decrease drops below the rounding error of f
            let flat = (f_new - f).abs() <= roundoff * f.abs().max(T::one())
                && dot(&g_new, &g_new).sqrt() < gnorm;
            if f_new.is_finite() && (sufficient || flat) {
                let s: Vec<T> = x_new.iter().zip(&x).map(|(a, b)| *a - *b).collect();
                let y: Vec<T> = g_new.iter().zip(&g).map(|(a, b)| *a - *b).collect();
                let sy = dot(&s, &y);
                if sy > T::epsilon() * dot(&y, &y) {
                    if pairs.len() == opts.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s, y, T::one() / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                accepted = true;
                break;
            }
            step *= T::lit(0.5);
        }
        if !accepted {
            return Err(failed(iter, gnorm, &x));
        }
    }
    let gnorm = dot(&g, &g).sqrt();
    if gnorm <= target {
        Ok(x)
    } else {
        Err(failed(opts.max_iter, gnorm, &x))
    }
}

fn failed<T: Scalar>(iterations: usize, grad_norm: T, x: &[T]) -> DsplError {
    DsplError::DescentFailed {
        iterations,
        grad_norm: grad_norm.as_f64(),
        last: x.iter().map(|v| v.as_f64()).collect(),
    }
}

fn two_loop<T: Scalar>(g: &[T], pairs: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, r) in pairs.iter().rev() {
        let a = *r * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * *yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, r), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = *r * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * *si;
        }
    }
    q.into_iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_ill_conditioned_quadratic() {
        // f = 0.5 Σ c_i (x_i - i)²
        let c = [1e-2, 1.0, 50.0, 400.0];
        let x = minimize(vec![0.0f64; 4], &DescentOptions::default(), |x, g| {
            let mut f = 0.0;
            for i in 0..4 {
                let d = x[i] - i as f64;
                f += 0.5 * c[i] * d * d;
                g[i] = c[i] * d;
            }
            f
        })
        .unwrap();
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - i as f64).abs() < 1e-7, "{x:?}");
        }
    }

    #[test]
    fn rosenbrock() {
        let x = minimize(vec![-1.2f64, 1.0], &DescentOptions::default(), |x, g| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        })
        .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reports_failure_with_last_iterate() {
        let opts = DescentOptions {
            max_iter: 2,
            ..Default::default()
        };
        let err = minimize(vec![-1.2f64, 1.0], &opts, |x, g| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        })
        .unwrap_err();
        match err {
            DsplError::DescentFailed {
                iterations, last, ..
            } => {
                assert_eq!(iterations, 2);
                assert_eq!(last.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
