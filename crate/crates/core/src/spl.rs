//! Hard self-paced instance weighting and the single-machine SPL baseline.

use std::time::Instant;

use crate::descent::{minimize, DescentOptions};
use crate::error::{check_len, DsplError, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{dot, Scalar};
use crate::types::{
    feature_count, objective_unchecked, weights_to_bytes, Batch, HyperParams, IterationRecord,
    LossModel, RoundRecord, RunReport,
};
use crate::Fit;

/// `v_j = 1` iff `L(y_j, g(w, x_j)) < λ`, else `0`. Ties are excluded.
pub fn update_weights<T: Scalar, M: LossModel<T> + ?Sized>(
    batch: &Batch<T>,
    w: &[T],
    lambda: T,
    model: &M,
) -> Result<Vec<T>> {
    check_len("model length", batch.p(), w.len())?;
    if !(lambda > T::zero()) {
        return Err(DsplError::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(batch
        .instances()
        .map(|(x, y)| {
            if model.instance_loss(w, x, y) < lambda {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect())
}

/// Pooled ridge regression over every batch:
/// `argmin Σ ‖y - Xᵀw‖² + ridge ‖w‖²`.
pub fn fit_ols<T: Scalar>(batches: &[Batch<T>], ridge: T) -> Result<Vec<T>> {
    if !(ridge >= T::zero()) {
        return Err(DsplError::InvalidParameter(format!(
            "ridge must be non-negative, got {ridge}"
        )));
    }
    let ones: Vec<Vec<T>> = batches.iter().map(|b| vec![T::one(); b.n()]).collect();
    pooled_ridge(batches, &ones, T::one(), ridge)
}

/// Solves `(scale Σ v x xᵀ + ridge I) w = scale Σ v x y` over all batches.
fn pooled_ridge<T: Scalar>(
    batches: &[Batch<T>],
    v: &[Vec<T>],
    scale: T,
    ridge: T,
) -> Result<Vec<T>> {
    let p = feature_count(batches)?;
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![T::zero(); p];
    for (b, vi) in batches.iter().zip(v) {
        for ((x, y), &vj) in b.instances().zip(vi) {
            if vj == T::zero() {
                continue;
            }
            let s = scale * vj;
            for c in 0..p {
                let xc = s * x[c];
                rhs[c] += xc * y;
                for r in c..p {
                    gram[(r, c)] += x[r] * xc;
                }
            }
        }
    }
    for c in 0..p {
        gram[(c, c)] += ridge;
    }
    Cholesky::factor(&gram)?.solve(&rhs)
}

/// `Σ_i f_i(w, v_i; λ) + ‖w‖²`.
fn spl_objective<T: Scalar, M: LossModel<T> + ?Sized>(
    batches: &[Batch<T>],
    w: &[T],
    v: &[Vec<T>],
    lambda: T,
    model: &M,
) -> T {
    let mut total = dot(w, w);
    for (b, vi) in batches.iter().zip(v) {
        total += objective_unchecked(b, w, vi, lambda, model);
    }
    total
}

fn pooled_model_solve<T: Scalar, M: LossModel<T> + ?Sized>(
    batches: &[Batch<T>],
    v: &[Vec<T>],
    model: &M,
    start: &[T],
) -> Result<Vec<T>> {
    if model.has_closed_form() {
        // ∇ = 2 Σ v x (xᵀw - y) + 2w
        return pooled_ridge(batches, v, T::lit(2.0), T::lit(2.0));
    }
    minimize(start.to_vec(), &DescentOptions::default(), |w, grad| {
        let two = T::lit(2.0);
        for (g, wi) in grad.iter_mut().zip(w) {
            *g = two * *wi;
        }
        let mut f = dot(w, w);
        for (b, vi) in batches.iter().zip(v) {
            for ((x, y), &vj) in b.instances().zip(vi) {
                if vj == T::zero() {
                    continue;
                }
                let y_hat = model.predict(w, x);
                f += vj * model.loss(y, y_hat);
                model.add_predict_grad(w, x, vj * model.loss_slope(y, y_hat), grad);
            }
        }
        f
    })
}

/// Classic self-paced learning by alternate convex search on the pooled data:
/// a joint weighted ridge solve for `w`, the hard weight rule per batch, then
/// `λ ← min(λμ, τ_λ)`. Stops when the objective changes by less than
/// `eps_l * (1 + |F⁰|)` between rounds, `F⁰` being the objective at `w = 0`
/// with all weights on.
pub fn fit_spl<T: Scalar, M: LossModel<T> + ?Sized>(
    batches: &[Batch<T>],
    params: &HyperParams<T>,
    model: &M,
) -> Result<Fit<T>> {
    params.validate()?;
    let p = feature_count(batches)?;
    let start = Instant::now();
    let mut lambda = params.lambda0;
    let mut v: Vec<Vec<T>> = batches.iter().map(|b| vec![T::one(); b.n()]).collect();
    let mut w = vec![T::zero(); p];
    let f0 = spl_objective(batches, &w, &v, lambda, model);
    let threshold = params.eps_l * (T::one() + f0.abs());

    let mut report = RunReport::default();
    let mut prev: Option<T> = None;
    let mut converged = false;
    for t in 0..params.max_outer {
        w = pooled_model_solve(batches, &v, model, &w)?;
        v = batches
            .iter()
            .map(|b| update_weights(b, &w, lambda, model))
            .collect::<Result<_>>()?;
        let obj = spl_objective(batches, &w, &v, lambda, model);
        if !obj.is_finite() {
            return Err(DsplError::Diverged {
                outer: t,
                inner: 0,
                report: Box::new(report),
            });
        }
        let active: Vec<usize> = v
            .iter()
            .map(|vi| vi.iter().filter(|x| **x != T::zero()).count())
            .collect();
        report.iterations.push(IterationRecord {
            outer: t,
            inner: 0,
            lagrangian: obj.as_f64(),
            r_sq: 0.0,
            s_sq: 0.0,
            lambda: lambda.as_f64(),
            rho: 0.0,
            active_counts: active.clone(),
        });
        report.rounds.push(RoundRecord {
            outer: t,
            lagrangian: obj.as_f64(),
            lambda: lambda.as_f64(),
            inner_iterations: 1,
            inner_converged: true,
            active_total: active.iter().sum(),
        });
        if let Some(prev) = prev {
            if (obj - prev).abs() < threshold {
                converged = true;
                break;
            }
        }
        prev = Some(obj);
        lambda = (lambda * params.mu).min(params.tau_lambda);
    }

    report.final_z = w.iter().map(|x| x.as_f64()).collect();
    report.final_v = weights_to_bytes(&v);
    report.converged = converged;
    report.wall_time = start.elapsed();
    Ok(Fit { w, v, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LinearSquared;

    fn scalar_batch(xs: &[f64], ys: &[f64]) -> Batch<f64> {
        let cols: Vec<[f64; 1]> = xs.iter().map(|x| [*x]).collect();
        Batch::new(0, Matrix::from_columns(1, &cols).unwrap(), ys.to_vec()).unwrap()
    }

    #[test]
    fn indicator_rule() {
        // losses with w = 0 are y²: 0.5, 1.5, 1.0
        let b = scalar_batch(&[1.0, 1.0, 1.0], &[0.5f64.sqrt(), 1.5f64.sqrt(), 1.0]);
        let v = update_weights(&b, &[0.0], 1.0, &LinearSquared).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn weights_need_positive_lambda() {
        let b = scalar_batch(&[1.0], &[1.0]);
        assert!(update_weights(&b, &[0.0], 0.0, &LinearSquared).is_err());
        assert!(update_weights(&b, &[0.0, 1.0], 1.0, &LinearSquared).is_err());
    }

    #[test]
    fn ols_noiseless_and_limits() {
        let b = scalar_batch(&[1.0, 2.0, -1.0], &[3.0, 6.0, -3.0]);
        let w = fit_ols(std::slice::from_ref(&b), 0.0).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-12);
        let w = fit_ols(std::slice::from_ref(&b), 1e12).unwrap();
        assert!(w[0].abs() <= 1e-6 * 3.0);
        assert!(fit_ols(&[b], -1.0).is_err());
    }

    #[test]
    fn ols_singular_without_ridge() {
        let b = scalar_batch(&[0.0, 0.0], &[1.0, 2.0]);
        assert!(matches!(
            fit_ols(&[b], 0.0),
            Err(DsplError::NotPositiveDefinite { .. })
        ));
    }
}
