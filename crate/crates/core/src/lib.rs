//! Distributed self-paced learning (DSPL) for robust linear regression.
//!
//! Self-paced learning trains on "easy" instances first: an instance enters
//! the fit only while its loss is below the pace `λ`, and `λ` grows over time.
//! This crate splits the data into mini-batches, gives every batch its own
//! model `w_i` tied to a consensus variable `z` by consensus ADMM, and updates
//! the per-batch models and instance weights in parallel.
//!
//! The solvers are generic over [`Scalar`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases below name the concrete instantiations.
//!
//! ```
//! use dspl::{datagen, fit_dspl, metrics, HyperParamsF64, LinearSquared};
//!
//! let data = datagen::generate::<f64>(&datagen::SynthConfig::balanced(5, 400, 4, 0.3, 1)).unwrap();
//! let params = HyperParamsF64::for_features(5);
//! let fit = fit_dspl(&data.batches, &params, &LinearSquared).unwrap();
//! let err = metrics::l2_recovery_error(&fit.w, &data.w_star).unwrap();
//! assert!(err < 0.1);
//! ```

// `!(x > 0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod datagen;
pub mod descent;
pub mod driver;
mod error;
pub mod linalg;
pub mod metrics;
mod scalar;
pub mod spl;
mod types;

pub use admm::{
    adapt_rho, compute_residuals, curvature_rho, run_inner_admm, update_alpha,
    update_w_closed_form, update_w_generic, update_z, InnerRun, Residuals,
};
pub use descent::DescentOptions;
pub use driver::{fit_dspl, lambda_step};
pub use error::{DsplError, Result};
pub use linalg::Matrix;
pub use scalar::Scalar;
pub use spl::{fit_ols, fit_spl, update_weights};
pub use types::{
    batch_objective, evaluate_lagrangian, feature_count, Batch, ConsensusState, HyperParams,
    IterationRecord, LinearSquared, LossModel, RoundRecord, RunReport,
};

/// Solver output: the model, final instance weights (0/1) and the trace.
#[derive(Debug, Clone)]
pub struct Fit<T> {
    pub w: Vec<T>,
    pub v: Vec<Vec<T>>,
    pub report: RunReport,
}

/// Runs `f` on a dedicated rayon pool with `workers` threads.
pub fn with_workers<R: Send>(
    workers: usize,
    f: impl FnOnce() -> R + Send,
) -> std::result::Result<R, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()?;
    Ok(pool.install(f))
}

pub type BatchF64 = Batch<f64>;
pub type BatchF32 = Batch<f32>;
pub type HyperParamsF64 = HyperParams<f64>;
pub type HyperParamsF32 = HyperParams<f32>;
pub type ConsensusStateF64 = ConsensusState<f64>;
pub type ConsensusStateF32 = ConsensusState<f32>;
pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type FitF64 = Fit<f64>;
pub type FitF32 = Fit<f32>;
pub type SynthDatasetF64 = datagen::SynthDataset<f64>;
pub type SynthDatasetF32 = datagen::SynthDataset<f32>;
