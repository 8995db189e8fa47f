//! Inner consensus-ADMM loop for fixed instance weights.
//!
//! Each pass refreshes the consensus variable `z` from the current models and
//! duals, solves every batch-local model against the new `z`, takes a dual
//! ascent step and measures the primal/dual residuals. Batch-local work runs on
//! the ambient rayon pool; every reduction is a sequential sum in batch order,
//! so results do not depend on the worker count.

use rayon::prelude::*;

use crate::descent::{minimize, DescentOptions};
use crate::error::{check_finite, check_len, DsplError, Result};
use crate::linalg::{largest_eigenvalue, weighted_gram, Cholesky};
use crate::scalar::{dist_sq, Scalar};
use crate::spl::update_weights;
use crate::types::{
    lagrangian_unchecked, Batch, ConsensusState, HyperParams, IterationRecord, LossModel,
};

/// Squared norms of the primal and dual residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals<T> {
    pub r_sq: T,
    pub s_sq: T,
}

/// Factored local system `2 Σ v_j x_j x_jᵀ + ρ I` with the data part of the
/// right-hand side, valid while `v` and `ρ` are unchanged.
#[derive(Debug, Clone)]
pub(crate) struct LocalSystem<T> {
    factor: Cholesky<T>,
    data_rhs: Vec<T>,
    rho: T,
}

impl<T: Scalar> LocalSystem<T> {
    pub(crate) fn new(batch: &Batch<T>, v: &[T], rho: T) -> Result<Self> {
        check_len("weight length", batch.n(), v.len())?;
        if !(rho > T::zero()) {
            return Err(DsplError::InvalidParameter(format!(
                "rho must be positive, got {rho}"
            )));
        }
        let two = T::lit(2.0);
        let gram = weighted_gram(batch.x(), v, two, rho);
        let factor = Cholesky::factor(&gram)?;
        let mut data_rhs = vec![T::zero(); batch.p()];
        for ((x, y), &vj) in batch.instances().zip(v) {
            if vj == T::zero() {
                continue;
            }
            let s = two * vj * y;
            for (r, xi) in data_rhs.iter_mut().zip(x) {
                *r += s * *xi;
            }
        }
        Ok(Self {
            factor,
            data_rhs,
            rho,
        })
    }

    pub(crate) fn solve(&self, alpha: &[T], z: &[T]) -> Result<Vec<T>> {
        let rhs: Vec<T> = self
            .data_rhs
            .iter()
            .zip(alpha)
            .zip(z)
            .map(|((d, a), zi)| *d - *a + self.rho * *zi)
            .collect();
        self.factor.solve(&rhs)
    }
}

fn check_local_inputs<T: Scalar>(
    batch: &Batch<T>,
    v: &[T],
    alpha: &[T],
    z: &[T],
    rho: T,
) -> Result<()> {
    check_len("dual length", batch.p(), alpha.len())?;
    check_len("consensus length", batch.p(), z.len())?;
    check_len("weight length", batch.n(), v.len())?;
    check_finite("dual", alpha)?;
    check_finite("consensus variable", z)?;
    check_finite("weights", v)?;
    if !rho.is_finite() {
        return Err(DsplError::NonFinite("rho"));
    }
    if !(rho > T::zero()) {
        return Err(DsplError::InvalidParameter(format!(
            "rho must be positive, got {rho}"
        )));
    }
    Ok(())
}

/// Exact local model update for linear prediction with squared loss:
/// `w = (2 Σ v_j x_j x_jᵀ + ρ I)⁻¹ (2 Σ v_j x_j y_j - α + ρ z)`.
pub fn update_w_closed_form<T: Scalar>(
    batch: &Batch<T>,
    v: &[T],
    alpha: &[T],
    z: &[T],
    rho: T,
) -> Result<Vec<T>> {
    check_local_inputs(batch, v, alpha, z, rho)?;
    LocalSystem::new(batch, v, rho)?.solve(alpha, z)
}

/// Local model update for any differentiable [`LossModel`], by L-BFGS started at `z`.
pub fn update_w_generic<T: Scalar, M: LossModel<T> + ?Sized>(
    batch: &Batch<T>,
    v: &[T],
    alpha: &[T],
    z: &[T],
    rho: T,
    model: &M,
    opts: &DescentOptions<T>,
) -> Result<Vec<T>> {
    check_local_inputs(batch, v, alpha, z, rho)?;
    local_descent(batch, v, alpha, z, rho, model, opts, z.to_vec())
}

#[allow(clippy::too_many_arguments)]
fn local_descent<T: Scalar, M: LossModel<T> + ?Sized>(
    batch: &Batch<T>,
    v: &[T],
    alpha: &[T],
    z: &[T],
    rho: T,
    model: &M,
    opts: &DescentOptions<T>,
    start: Vec<T>,
) -> Result<Vec<T>> {
    let half_rho = rho / T::lit(2.0);
    minimize(start, opts, |w, grad| {
        // Σ v L(y, g(w,x)) + αᵀ(w - z) + (ρ/2)‖w - z‖²; the -λΣv term is constant in w
        let mut f = T::zero();
        for (((gi, wi), zi), ai) in grad.iter_mut().zip(w).zip(z).zip(alpha) {
            let d = *wi - *zi;
            f += *ai * d + half_rho * d * d;
            *gi = *ai + rho * d;
        }
        for ((x, y), &vj) in batch.instances().zip(v) {
            if vj == T::zero() {
                continue;
            }
            let y_hat = model.predict(w, x);
            f += vj * model.loss(y, y_hat);
            model.add_predict_grad(w, x, vj * model.loss_slope(y, y_hat), grad);
        }
        f
    })
}

/// `z = (1 / (2 + ρm)) Σ (ρ w_i + α_i)`, the exact minimizer of the augmented
/// Lagrangian over `z`.
pub fn update_z<T: Scalar>(w_list: &[Vec<T>], alpha_list: &[Vec<T>], rho: T) -> Result<Vec<T>> {
    let m = w_list.len();
    if m == 0 {
        return Err(DsplError::InvalidParameter(
            "consensus update needs at least one batch".into(),
        ));
    }
    if !(rho > T::zero()) {
        return Err(DsplError::InvalidParameter(format!(
            "rho must be positive, got {rho}"
        )));
    }
    check_len("dual count", m, alpha_list.len())?;
    let p = w_list[0].len();
    let mut sum = vec![T::zero(); p];
    for (w, a) in w_list.iter().zip(alpha_list) {
        check_len("model length", p, w.len())?;
        check_len("dual length", p, a.len())?;
        for ((s, wi), ai) in sum.iter_mut().zip(w).zip(a) {
            *s += rho * *wi + *ai;
        }
    }
    let scale = T::one() / (T::lit(2.0) + rho * T::lit(m as f64));
    Ok(sum.into_iter().map(|s| s * scale).collect())
}

/// `α + ρ (w - z)`.
pub fn update_alpha<T: Scalar>(alpha: &[T], w: &[T], z: &[T], rho: T) -> Result<Vec<T>> {
    check_len("model length", alpha.len(), w.len())?;
    check_len("consensus length", alpha.len(), z.len())?;
    Ok(alpha
        .iter()
        .zip(w)
        .zip(z)
        .map(|((a, wi), zi)| *a + rho * (*wi - *zi))
        .collect())
}

/// `r² = Σ ‖w_i - z_new‖²`, `s² = m ρ² ‖z_new - z_old‖²`.
pub fn compute_residuals<T: Scalar>(
    w_list: &[Vec<T>],
    z_new: &[T],
    z_old: &[T],
    rho: T,
) -> Result<Residuals<T>> {
    check_len("previous consensus length", z_new.len(), z_old.len())?;
    let mut r_sq = T::zero();
    for w in w_list {
        check_len("model length", z_new.len(), w.len())?;
        r_sq += dist_sq(w, z_new);
    }
    let m = T::lit(w_list.len() as f64);
    let s_sq = m * rho * rho * dist_sq(z_new, z_old);
    Ok(Residuals { r_sq, s_sq })
}

/// Residual balancing: doubles ρ when `r > 10 s`, halves it when `10 r < s`.
pub fn adapt_rho<T: Scalar>(rho: T, res: Residuals<T>) -> T {
    let ten = T::lit(10.0);
    let r = res.r_sq.sqrt();
    let s = res.s_sq.sqrt();
    if r > ten * s {
        rho * T::lit(2.0)
    } else if ten * r < s {
        rho / T::lit(2.0)
    } else {
        rho
    }
}

/// Penalty large enough that every local subproblem satisfies
/// `ρ·γ(ρ) > 2φ²` and `ρ ≥ φ`, with `φ = 2 λ_max(X Xᵀ)` the gradient Lipschitz
/// constant of the squared-loss batch objective at full weight and
/// `γ(ρ) ≥ ρ` its strong-convexity modulus. Returns `1.05·√2·max_i φ_i`.
pub fn curvature_rho<T: Scalar>(batches: &[Batch<T>]) -> T {
    let phi = batches
        .par_iter()
        .map(|b| {
            let ones = vec![T::one(); b.n()];
            let gram = weighted_gram(b.x(), &ones, T::lit(2.0), T::zero());
            largest_eigenvalue(&gram, 10_000, T::lit(1e-12))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(T::zero(), T::max);
    T::lit(1.05 * std::f64::consts::SQRT_2) * phi.max(T::epsilon())
}

/// Result of one inner loop.
#[derive(Debug, Clone)]
pub struct InnerRun<T> {
    pub state: ConsensusState<T>,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    /// Final penalty (differs from the input only with adaptive ρ).
    pub rho: T,
}

/// Runs consensus ADMM from `state` with its weights fixed (or refreshed every
/// pass when `params.interleave_v` is set) until both residuals fall below
/// their tolerances or `params.max_inner` passes are spent.
pub fn run_inner_admm<T: Scalar, M: LossModel<T> + ?Sized>(
    batches: &[Batch<T>],
    state: ConsensusState<T>,
    params: &HyperParams<T>,
    model: &M,
) -> Result<InnerRun<T>> {
    params.validate()?;
    state.check_against(batches)?;
    let mut state = state;
    let mut trace = Vec::new();
    let out = inner_loop(
        batches, &mut state, params, params.rho, model, 0, &mut trace,
    )?;
    Ok(InnerRun {
        state,
        trace,
        converged: out.converged,
        rho: out.rho,
    })
}

pub(crate) struct InnerOutcome<T> {
    pub converged: bool,
    pub iterations: usize,
    pub rho: T,
}

enum LocalSolver<T> {
    Closed(Option<LocalSystem<T>>),
    Descent,
}

pub(crate) fn inner_loop<T: Scalar, M: LossModel<T> + ?Sized>(
    batches: &[Batch<T>],
    state: &mut ConsensusState<T>,
    params: &HyperParams<T>,
    rho0: T,
    model: &M,
    outer: usize,
    trace: &mut Vec<IterationRecord>,
) -> Result<InnerOutcome<T>> {
    let mut rho = rho0;
    let closed = model.has_closed_form();
    let mut solvers: Vec<LocalSolver<T>> = batches
        .iter()
        .map(|_| {
            if closed {
                LocalSolver::Closed(None)
            } else {
                LocalSolver::Descent
            }
        })
        .collect();
    let opts = DescentOptions::default();
    let lambda = state.lambda;
    let interleave = params.interleave_v;

    for k in 0..params.max_inner {
        let z_old = std::mem::take(&mut state.z);
        let z = update_z(&state.w, &state.alpha, rho)?;

        state
            .w
            .par_iter_mut()
            .zip(state.alpha.par_iter_mut())
            .zip(state.v.par_iter_mut())
            .zip(solvers.par_iter_mut())
            .zip(batches.par_iter())
            .try_for_each(|((((w, alpha), v), solver), batch)| -> Result<()> {
                let next = match solver {
                    LocalSolver::Closed(cache) => {
                        let sys = match cache {
                            Some(sys) => sys,
                            None => cache.insert(LocalSystem::new(batch, v, rho)?),
                        };
                        sys.solve(alpha, &z)?
                    }
                    LocalSolver::Descent => {
                        local_descent(batch, v, alpha, &z, rho, model, &opts, w.clone())?
                    }
                };
                *w = next;
                if interleave {
                    let fresh = update_weights(batch, w, lambda, model)?;
                    if fresh != *v {
                        *v = fresh;
                        if let LocalSolver::Closed(cache) = solver {
                            *cache = None;
                        }
                    }
                }
                for ((a, wi), zi) in alpha.iter_mut().zip(w.iter()).zip(&z) {
                    *a += rho * (*wi - *zi);
                }
                Ok(())
            })?;

        state.z = z;
        let res = compute_residuals(&state.w, &state.z, &z_old, rho)?;
        let lagrangian = lagrangian_unchecked(batches, state, rho, model);
        trace.push(IterationRecord {
            outer,
            inner: k,
            lagrangian: lagrangian.as_f64(),
            r_sq: res.r_sq.as_f64(),
            s_sq: res.s_sq.as_f64(),
            lambda: lambda.as_f64(),
            rho: rho.as_f64(),
            active_counts: state.active_counts(),
        });
        if !lagrangian.is_finite() || !res.r_sq.is_finite() || !res.s_sq.is_finite() {
            return Err(DsplError::Diverged {
                outer,
                inner: k,
                report: Box::default(),
            });
        }
        if res.r_sq < params.eps_r && res.s_sq < params.eps_s {
            return Ok(InnerOutcome {
                converged: true,
                iterations: k + 1,
                rho,
            });
        }
        if params.adaptive_rho {
            let next = adapt_rho(rho, res);
            if next != rho {
                rho = next;
                for s in solvers.iter_mut() {
                    if let LocalSolver::Closed(cache) = s {
                        *cache = None;
                    }
                }
            }
        }
    }
    Ok(InnerOutcome {
        converged: false,
        iterations: params.max_inner,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::types::LinearSquared;

    fn scalar_batch(xs: &[f64], ys: &[f64]) -> Batch<f64> {
        let cols: Vec<[f64; 1]> = xs.iter().map(|x| [*x]).collect();
        Batch::new(0, Matrix::from_columns(1, &cols).unwrap(), ys.to_vec()).unwrap()
    }

    #[test]
    fn closed_form_without_data_returns_z() {
        let b = scalar_batch(&[1.0, 2.0], &[1.0, 3.0]);
        let w = update_w_closed_form(&b, &[0.0, 0.0], &[0.0], &[0.37], 2.5).unwrap();
        assert!((w[0] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn closed_form_hand_example() {
        // (2*2 + 2)⁻¹ * (2*4) = 4/3
        let b = scalar_batch(&[1.0, 1.0], &[1.0, 3.0]);
        let w = update_w_closed_form(&b, &[1.0, 1.0], &[0.0], &[0.0], 2.0).unwrap();
        assert!((w[0] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_rejects_bad_rho() {
        let b = scalar_batch(&[1.0], &[1.0]);
        assert!(matches!(
            update_w_closed_form(&b, &[1.0], &[0.0], &[0.0], 0.0),
            Err(DsplError::InvalidParameter(_))
        ));
        assert!(matches!(
            update_w_closed_form(&b, &[1.0], &[f64::NAN], &[0.0], 1.0),
            Err(DsplError::NonFinite(_))
        ));
    }

    #[test]
    fn generic_matches_hand_example() {
        let b = scalar_batch(&[1.0, 1.0], &[1.0, 3.0]);
        let w = update_w_generic(
            &b,
            &[1.0, 1.0],
            &[0.0],
            &[0.0],
            2.0,
            &LinearSquared,
            &DescentOptions::default(),
        )
        .unwrap();
        assert!((w[0] - 4.0 / 3.0).abs() < 1e-6);
        let w = update_w_generic(
            &b,
            &[0.0, 0.0],
            &[0.0],
            &[0.25],
            2.0,
            &LinearSquared,
            &DescentOptions::default(),
        )
        .unwrap();
        assert!((w[0] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn z_update_hand_example() {
        let z = update_z(&[vec![1.0f64], vec![3.0]], &[vec![0.0], vec![0.0]], 2.0).unwrap();
        assert!((z[0] - 4.0 / 3.0).abs() < 1e-15);
        let z = update_z(&[vec![0.0, 0.0]], &[vec![0.0, 0.0]], 1.0).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        assert!(update_z::<f64>(&[], &[], 1.0).is_err());
    }

    #[test]
    fn alpha_update() {
        assert_eq!(
            update_alpha(&[0.0], &[1.0], &[0.0], 2.0).unwrap(),
            vec![2.0]
        );
        assert_eq!(
            update_alpha(&[0.3], &[1.0], &[1.0], 2.0).unwrap(),
            vec![0.3]
        );
        // fixed w - z = 1, ρ = 0.5: α_k = 0.5 k
        let mut a = vec![0.0];
        for k in 1..=10 {
            a = update_alpha(&a, &[2.0], &[1.0], 0.5).unwrap();
            assert!((a[0] - 0.5 * k as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn residuals_hand_example() {
        let r = compute_residuals(&[vec![1.0], vec![3.0]], &[2.0], &[0.0], 1.0).unwrap();
        assert_eq!(
            r,
            Residuals {
                r_sq: 2.0,
                s_sq: 8.0
            }
        );
        let r = compute_residuals(&[vec![2.0], vec![2.0]], &[2.0], &[2.0], 1.0).unwrap();
        assert_eq!(
            r,
            Residuals {
                r_sq: 0.0,
                s_sq: 0.0
            }
        );
        // homogeneity: scaling w - z by c multiplies r² by c²
        let r3 = compute_residuals(&[vec![5.0], vec![-1.0]], &[2.0], &[0.0], 1.0).unwrap();
        assert_eq!(r3.r_sq, 9.0 * 2.0);
    }

    #[test]
    fn rho_balancing() {
        let up = Residuals {
            r_sq: 400.0,
            s_sq: 1.0,
        };
        let down = Residuals {
            r_sq: 1.0,
            s_sq: 400.0,
        };
        let even = Residuals {
            r_sq: 3.0,
            s_sq: 3.0,
        };
        assert_eq!(adapt_rho(1.5, up), 3.0);
        assert_eq!(adapt_rho(1.5, down), 0.75);
        assert_eq!(adapt_rho(1.5, even), 1.5);
        // exactly on the threshold: r = 10 s is not "greater"
        assert_eq!(
            adapt_rho(
                1.0,
                Residuals {
                    r_sq: 100.0,
                    s_sq: 1.0
                }
            ),
            1.0
        );
    }

    #[test]
    fn curvature_rho_single_instance() {
        // X Xᵀ = [4], φ = 8
        let b = scalar_batch(&[2.0], &[1.0]);
        let rho = curvature_rho(&[b]);
        assert!((rho - 1.05 * std::f64::consts::SQRT_2 * 8.0).abs() < 1e-9);
    }
}
