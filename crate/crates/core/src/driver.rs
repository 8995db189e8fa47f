//! Distributed self-paced learning driver: alternates the inner consensus-ADMM
//! solve, the per-batch weight rule and the pace schedule.

use std::time::Instant;

use rayon::prelude::*;

use crate::admm::inner_loop;
use crate::error::{DsplError, Result};
use crate::scalar::Scalar;
use crate::spl::update_weights;
use crate::types::{
    feature_count, lagrangian_unchecked, weights_to_bytes, Batch, ConsensusState, HyperParams,
    LossModel, RoundRecord, RunReport,
};
use crate::Fit;

/// Next pace value.
///
/// By default `min(λμ, τ_λ)`. With `literal_lambda_step` the two-branch rule
/// `λ < τ_λ ? λμ : τ_λ` is used instead, which can overshoot `τ_λ` for one round.
pub fn lambda_step<T: Scalar>(lambda: T, params: &HyperParams<T>) -> T {
    if params.literal_lambda_step {
        if lambda < params.tau_lambda {
            lambda * params.mu
        } else {
            params.tau_lambda
        }
    } else {
        (lambda * params.mu).min(params.tau_lambda)
    }
}

/// Fits a consensus model over `batches`.
///
/// Starts from `w_i = z = 1`, `α_i = 0` and all weights on. Each outer round
/// runs the inner ADMM to tolerance, refreshes the weights from the local
/// models, records the augmented Lagrangian and then advances the pace. The
/// run is reported converged once the pace has reached `τ_λ` and the
/// Lagrangian moved by less than `eps_l * (1 + |L⁰|)` over a round.
///
/// Batch-local work uses the ambient rayon pool (see [`crate::with_workers`]).
pub fn fit_dspl<T: Scalar, M: LossModel<T> + ?Sized>(
    batches: &[Batch<T>],
    params: &HyperParams<T>,
    model: &M,
) -> Result<Fit<T>> {
    params.validate()?;
    feature_count(batches)?;
    let start = Instant::now();

    let mut state = ConsensusState::initial(batches, params.lambda0)?;
    let mut rho = params.rho;
    let l0 = lagrangian_unchecked(batches, &state, rho, model);
    if !l0.is_finite() {
        return Err(DsplError::Diverged {
            outer: 0,
            inner: 0,
            report: Box::default(),
        });
    }
    let threshold = params.eps_l * (T::one() + l0.abs());

    let mut report = RunReport::default();
    let mut prev: Option<T> = None;
    let mut converged = false;

    for t in 0..params.max_outer {
        let inner = match inner_loop(
            batches,
            &mut state,
            params,
            rho,
            model,
            t,
            &mut report.iterations,
        ) {
            Ok(out) => out,
            Err(DsplError::Diverged { outer, inner, .. }) => {
                report.wall_time = start.elapsed();
                return Err(DsplError::Diverged {
                    outer,
                    inner,
                    report: Box::new(report),
                });
            }
            Err(e) => return Err(e),
        };
        rho = inner.rho;

        let lambda = state.lambda;
        state.v = batches
            .par_iter()
            .zip(state.w.par_iter())
            .map(|(b, w)| update_weights(b, w, lambda, model))
            .collect::<Result<_>>()?;

        let l = lagrangian_unchecked(batches, &state, rho, model);
        report.rounds.push(RoundRecord {
            outer: t,
            lagrangian: l.as_f64(),
            lambda: lambda.as_f64(),
            inner_iterations: inner.iterations,
            inner_converged: inner.converged,
            active_total: state.active_counts().iter().sum(),
        });
        if !l.is_finite() {
            report.wall_time = start.elapsed();
            return Err(DsplError::Diverged {
                outer: t,
                inner: inner.iterations,
                report: Box::new(report),
            });
        }
        if let Some(prev) = prev {
            if lambda >= params.tau_lambda && (l - prev).abs() < threshold {
                converged = true;
                break;
            }
        }
        prev = Some(l);
        state.lambda = lambda_step(lambda, params);
    }

    report.final_z = state.z.iter().map(|x| x.as_f64()).collect();
    report.final_v = weights_to_bytes(&state.v);
    report.converged = converged;
    report.wall_time = start.elapsed();
    Ok(Fit {
        w: state.z,
        v: state.v,
        report,
    })
}
