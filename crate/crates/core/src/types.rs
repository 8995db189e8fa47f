//! Shared data types, the prediction/loss model and objective evaluation.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, DsplError, Result};
use crate::linalg::Matrix;
use crate::scalar::{dist_sq, dot, Scalar};

/// One mini-batch: a `p x n_i` design matrix whose columns are instances, and
/// the matching responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    id: usize,
    x: Matrix<T>,
    y: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(id: usize, x: Matrix<T>, y: Vec<T>) -> Result<Self> {
        check_len("batch responses", x.cols(), y.len())?;
        if x.cols() == 0 || x.rows() == 0 {
            return Err(DsplError::InvalidParameter(format!(
                "batch {id} must have at least one feature and one instance"
            )));
        }
        check_finite("batch design matrix", x.as_slice())?;
        check_finite("batch responses", &y)?;
        Ok(Self { id, x, y })
    }

    #[inline]
    pub fn id(&self) -> usize {
        self.id
    }

    /// Feature count.
    #[inline]
    pub fn p(&self) -> usize {
        self.x.rows()
    }

    /// Instance count.
    #[inline]
    pub fn n(&self) -> usize {
        self.x.cols()
    }

    #[inline]
    pub fn x(&self) -> &Matrix<T> {
        &self.x
    }

    #[inline]
    pub fn y(&self) -> &[T] {
        &self.y
    }

    /// Iterates `(x_j, y_j)` pairs.
    pub fn instances(&self) -> impl ExactSizeIterator<Item = (&[T], T)> + '_ {
        self.x.columns().zip(self.y.iter().copied())
    }
}

/// Checks that all batches share one feature count and returns it.
pub fn feature_count<T: Scalar>(batches: &[Batch<T>]) -> Result<usize> {
    let first = batches
        .first()
        .ok_or_else(|| DsplError::InvalidParameter("at least one batch is required".into()))?;
    for b in batches {
        check_len("batch feature count", first.p(), b.p())?;
    }
    Ok(first.p())
}

/// Prediction rule `g(w, x)` paired with a per-instance loss `L(y, ŷ)`.
///
/// The loss must be non-negative with `L(y, y) = 0`. The descent-based local
/// solver needs the two derivative hooks; models that implement them only
/// approximately will still run, just to a looser optimum.
pub trait LossModel<T: Scalar>: Sync {
    fn predict(&self, w: &[T], x: &[T]) -> T;

    fn loss(&self, y: T, y_hat: T) -> T;

    /// `∂L/∂ŷ`.
    fn loss_slope(&self, y: T, y_hat: T) -> T;

    /// Adds `scale * ∂g/∂w` at `(w, x)` into `out`.
    fn add_predict_grad(&self, w: &[T], x: &[T], scale: T, out: &mut [T]);

    /// True when the model is linear prediction with squared loss, which
    /// admits a closed-form local update.
    fn has_closed_form(&self) -> bool {
        false
    }

    #[inline]
    fn instance_loss(&self, w: &[T], x: &[T], y: T) -> T {
        self.loss(y, self.predict(w, x))
    }
}

/// `g(w, x) = wᵀx` with `L(y, ŷ) = (y - ŷ)²`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinearSquared;

impl<T: Scalar> LossModel<T> for LinearSquared {
    #[inline]
    fn predict(&self, w: &[T], x: &[T]) -> T {
        dot(w, x)
    }

    #[inline]
    fn loss(&self, y: T, y_hat: T) -> T {
        let r = y - y_hat;
        r * r
    }

    #[inline]
    fn loss_slope(&self, y: T, y_hat: T) -> T {
        T::lit(2.0) * (y_hat - y)
    }

    fn add_predict_grad(&self, _w: &[T], x: &[T], scale: T, out: &mut [T]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o += scale * *xi;
        }
    }

    fn has_closed_form(&self) -> bool {
        true
    }
}

/// Every knob the solvers read.
///
/// `eps_l` is relative: an outer loop stops once `|ΔL| < eps_l * (1 + |L⁰|)`
/// where `L⁰` is the objective of the initial state. `eps_r` and `eps_s` are
/// absolute thresholds on the squared residual norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    pub lambda0: T,
    pub tau_lambda: T,
    pub mu: T,
    pub rho: T,
    pub eps_l: T,
    pub eps_r: T,
    pub eps_s: T,
    pub max_outer: usize,
    pub max_inner: usize,
    pub adaptive_rho: bool,
    pub interleave_v: bool,
    /// Use the two-branch pace rule that may overshoot `tau_lambda` once.
    pub literal_lambda_step: bool,
}

impl<T: Scalar> HyperParams<T> {
    /// Defaults for `p` features: λ₀ = 0.1, τ_λ = 1, μ = 1.1, ρ = 1,
    /// ε_L = 1e-6 (relative), ε_r = ε_s = 1e-6·p.
    pub fn for_features(p: usize) -> Self {
        let tol = T::lit(1e-6 * p.max(1) as f64);
        Self {
            lambda0: T::lit(0.1),
            tau_lambda: T::one(),
            mu: T::lit(1.1),
            rho: T::one(),
            eps_l: T::lit(1e-6),
            eps_r: tol,
            eps_s: tol,
            max_outer: 200,
            max_inner: 10_000,
            adaptive_rho: false,
            interleave_v: false,
            literal_lambda_step: false,
        }
    }

    /// Classic single-machine SPL baseline: λ = 1 with step μ = 1.1, capped at 1.
    pub fn spl_baseline(p: usize) -> Self {
        Self {
            lambda0: T::one(),
            ..Self::for_features(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DsplError::InvalidParameter(msg.to_string()));
        let all = [
            self.lambda0,
            self.tau_lambda,
            self.mu,
            self.rho,
            self.eps_l,
            self.eps_r,
            self.eps_s,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DsplError::NonFinite("hyper-parameters"));
        }
        if !(self.lambda0 > T::zero()) {
            return bad("lambda0 must be positive");
        }
        if self.lambda0 > self.tau_lambda {
            return bad("lambda0 must not exceed tau_lambda");
        }
        if !(self.mu > T::one()) {
            return bad("mu must be greater than 1");
        }
        if !(self.rho > T::zero()) {
            return bad("rho must be positive");
        }
        if !(self.eps_l > T::zero() && self.eps_r > T::zero() && self.eps_s > T::zero()) {
            return bad("tolerances must be positive");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration caps must be positive");
        }
        Ok(())
    }
}

/// Full optimizer state: per-batch models, duals and instance weights plus the
/// consensus variable and the current pace. Weights hold exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState<T> {
    pub w: Vec<Vec<T>>,
    pub z: Vec<T>,
    pub alpha: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub lambda: T,
}

impl<T: Scalar> ConsensusState<T> {
    /// `w_i = z = 1`, `α_i = 0`, `v_i = 1`.
    pub fn initial(batches: &[Batch<T>], lambda: T) -> Result<Self> {
        let p = feature_count(batches)?;
        let m = batches.len();
        Ok(Self {
            w: vec![vec![T::one(); p]; m],
            z: vec![T::one(); p],
            alpha: vec![vec![T::zero(); p]; m],
            v: batches.iter().map(|b| vec![T::one(); b.n()]).collect(),
            lambda,
        })
    }

    pub fn check_against(&self, batches: &[Batch<T>]) -> Result<()> {
        let m = batches.len();
        check_len("state models", m, self.w.len())?;
        check_len("state duals", m, self.alpha.len())?;
        check_len("state weights", m, self.v.len())?;
        let p = self.z.len();
        for (i, b) in batches.iter().enumerate() {
            check_len("state feature count", b.p(), p)?;
            check_len("state model length", p, self.w[i].len())?;
            check_len("state dual length", p, self.alpha[i].len())?;
            check_len("state weight length", b.n(), self.v[i].len())?;
        }
        Ok(())
    }

    pub fn active_counts(&self) -> Vec<usize> {
        self.v
            .iter()
            .map(|v| v.iter().filter(|x| **x != T::zero()).count())
            .collect()
    }

    /// True when every weight is exactly 0 or 1.
    pub fn weights_are_binary(&self) -> bool {
        self.v
            .iter()
            .flatten()
            .all(|x| *x == T::zero() || *x == T::one())
    }
}

/// One inner-ADMM pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub inner: usize,
    pub lagrangian: f64,
    pub r_sq: f64,
    pub s_sq: f64,
    pub lambda: f64,
    pub rho: f64,
    pub active_counts: Vec<usize>,
}

/// End of one outer round, after the weight update and before the pace step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub outer: usize,
    pub lagrangian: f64,
    pub lambda: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub active_total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub iterations: Vec<IterationRecord>,
    pub rounds: Vec<RoundRecord>,
    pub final_z: Vec<f64>,
    pub final_v: Vec<Vec<u8>>,
    pub converged: bool,
    pub wall_time: Duration,
}

impl RunReport {
    /// Bitwise comparison of everything except `wall_time`.
    pub fn same_trajectory(&self, other: &RunReport) -> bool {
        fn bits(a: f64, b: f64) -> bool {
            a.to_bits() == b.to_bits()
        }
        self.converged == other.converged
            && self.final_v == other.final_v
            && self.final_z.len() == other.final_z.len()
            && self
                .final_z
                .iter()
                .zip(&other.final_z)
                .all(|(a, b)| bits(*a, *b))
            && self.iterations.len() == other.iterations.len()
            && self.iterations.iter().zip(&other.iterations).all(|(a, b)| {
                a.outer == b.outer
                    && a.inner == b.inner
                    && bits(a.lagrangian, b.lagrangian)
                    && bits(a.r_sq, b.r_sq)
                    && bits(a.s_sq, b.s_sq)
                    && bits(a.lambda, b.lambda)
                    && bits(a.rho, b.rho)
                    && a.active_counts == b.active_counts
            })
            && self.rounds.len() == other.rounds.len()
            && self.rounds.iter().zip(&other.rounds).all(|(a, b)| {
                a.outer == b.outer
                    && bits(a.lagrangian, b.lagrangian)
                    && bits(a.lambda, b.lambda)
                    && a.inner_iterations == b.inner_iterations
                    && a.inner_converged == b.inner_converged
                    && a.active_total == b.active_total
            })
    }

    pub fn total_inner_iterations(&self) -> usize {
        self.iterations.len()
    }
}

pub(crate) fn weights_to_bytes<T: Scalar>(v: &[Vec<T>]) -> Vec<Vec<u8>> {
    v.iter()
        .map(|vi| vi.iter().map(|x| u8::from(*x != T::zero())).collect())
        .collect()
}

fn check_weights<T: Scalar>(v: &[T]) -> Result<()> {
    if v.iter().all(|x| *x >= T::zero() && *x <= T::one()) {
        Ok(())
    } else {
        Err(DsplError::InvalidParameter(
            "instance weights must lie in [0, 1]".into(),
        ))
    }
}

/// `Σ_j v_j L(y_j, g(w, x_j)) - λ Σ_j v_j`.
pub fn batch_objective<T: Scalar, M: LossModel<T> + ?Sized>(
    batch: &Batch<T>,
    w: &[T],
    v: &[T],
    lambda: T,
    model: &M,
) -> Result<T> {
    check_len("model length", batch.p(), w.len())?;
    check_len("weight length", batch.n(), v.len())?;
    check_weights(v)?;
    Ok(objective_unchecked(batch, w, v, lambda, model))
}

pub(crate) fn objective_unchecked<T: Scalar, M: LossModel<T> + ?Sized>(
    batch: &Batch<T>,
    w: &[T],
    v: &[T],
    lambda: T,
    model: &M,
) -> T {
    let mut acc = T::zero();
    for ((x, y), &vj) in batch.instances().zip(v) {
        if vj != T::zero() {
            acc += vj * (model.instance_loss(w, x, y) - lambda);
        }
    }
    acc
}

/// Augmented Lagrangian
/// `Σ f_i(w_i, v_i; λ) + ‖z‖² + Σ α_iᵀ(w_i - z) + (ρ/2) Σ ‖w_i - z‖²`.
///
/// Per-batch terms may be computed concurrently; they are summed in batch order.
pub fn evaluate_lagrangian<T: Scalar, M: LossModel<T> + ?Sized>(
    batches: &[Batch<T>],
    state: &ConsensusState<T>,
    rho: T,
    model: &M,
) -> Result<T> {
    state.check_against(batches)?;
    for v in &state.v {
        check_weights(v)?;
    }
    Ok(lagrangian_unchecked(batches, state, rho, model))
}

pub(crate) fn lagrangian_unchecked<T: Scalar, M: LossModel<T> + ?Sized>(
    batches: &[Batch<T>],
    state: &ConsensusState<T>,
    rho: T,
    model: &M,
) -> T {
    let half_rho = rho / T::lit(2.0);
    let z = &state.z;
    let terms: Vec<T> = batches
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let w = &state.w[i];
            let f = objective_unchecked(b, w, &state.v[i], state.lambda, model);
            let mut coupling = T::zero();
            for ((wi, zi), ai) in w.iter().zip(z).zip(&state.alpha[i]) {
                coupling += *ai * (*wi - *zi);
            }
            f + coupling + half_rho * dist_sq(w, z)
        })
        .collect();
    let mut total = dot(z, z);
    for t in terms {
        total += t;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(xs: &[f64], ys: &[f64]) -> Batch<f64> {
        let cols: Vec<[f64; 1]> = xs.iter().map(|x| [*x]).collect();
        Batch::new(0, Matrix::from_columns(1, &cols).unwrap(), ys.to_vec()).unwrap()
    }

    #[test]
    fn objective_zero_weights_is_zero() {
        let b = batch(&[1.0, 2.0], &[3.0, -1.0]);
        let f = batch_objective(&b, &[0.7], &[0.0, 0.0], 0.3, &LinearSquared).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn objective_exact_fit() {
        let b = batch(&[1.0], &[2.0]);
        let f = batch_objective(&b, &[2.0], &[1.0], 0.5, &LinearSquared).unwrap();
        assert_eq!(f, -0.5);
    }

    #[test]
    fn objective_two_instances() {
        let b = batch(&[1.0, 1.0], &[0.0, 2.0]);
        let f = batch_objective(&b, &[1.0], &[1.0, 1.0], 1.0, &LinearSquared).unwrap();
        // brute force: Σ v (y - wx)² - λ Σ v
        let brute: f64 = [(1.0, 0.0), (1.0, 2.0)]
            .iter()
            .map(|(x, y): &(f64, f64)| (y - 1.0 * x).powi(2))
            .sum::<f64>()
            - 1.0 * 2.0;
        assert_eq!(f, 0.0);
        assert_eq!(f, brute);
    }

    #[test]
    fn objective_rejects_bad_dimensions() {
        let b = batch(&[1.0, 1.0], &[0.0, 2.0]);
        assert!(matches!(
            batch_objective(&b, &[1.0, 2.0], &[1.0, 1.0], 1.0, &LinearSquared),
            Err(DsplError::DimensionMismatch { .. })
        ));
        assert!(batch_objective(&b, &[1.0], &[1.0], 1.0, &LinearSquared).is_err());
        assert!(batch_objective(&b, &[1.0], &[1.0, 1.5], 1.0, &LinearSquared).is_err());
    }

    #[test]
    fn batch_validation() {
        let x = Matrix::from_columns(1, &[[1.0], [2.0]]).unwrap();
        assert!(Batch::new(0, x.clone(), vec![1.0]).is_err());
        assert!(Batch::new(0, x.clone(), vec![1.0, f64::NAN]).is_err());
        assert!(Batch::new(0, Matrix::<f64>::zeros(1, 0), vec![]).is_err());
        assert!(Batch::new(3, x, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn lagrangian_consistent_state_is_z_norm() {
        let b = vec![batch(&[1.0, 2.0], &[1.0, 1.0]), batch(&[3.0], &[0.0])];
        let z = vec![0.5];
        let state = ConsensusState {
            w: vec![z.clone(), z.clone()],
            z: z.clone(),
            alpha: vec![vec![0.0], vec![0.0]],
            v: vec![vec![0.0, 0.0], vec![0.0]],
            lambda: 0.7,
        };
        let l = evaluate_lagrangian(&b, &state, 3.0, &LinearSquared).unwrap();
        assert_eq!(l, 0.25);
    }

    #[test]
    fn lagrangian_hand_example() {
        let b = vec![batch(&[1.0], &[5.0])];
        let state = ConsensusState {
            w: vec![vec![1.0]],
            z: vec![0.0],
            alpha: vec![vec![2.0]],
            v: vec![vec![0.0]],
            lambda: 1.0,
        };
        // 0 + 0 + 2*1 + (2/2)*1
        let l = evaluate_lagrangian(&b, &state, 2.0, &LinearSquared).unwrap();
        assert_eq!(l, 3.0);
    }

    #[test]
    fn hyperparams_validation() {
        let mut h = HyperParams::<f64>::for_features(4);
        assert!(h.validate().is_ok());
        assert_eq!(h.eps_r, 4e-6);
        h.mu = 1.0;
        assert!(h.validate().is_err());
        let mut h = HyperParams::<f64>::for_features(4);
        h.lambda0 = 2.0;
        assert!(h.validate().is_err());
        let mut h = HyperParams::<f64>::for_features(4);
        h.rho = 0.0;
        assert!(h.validate().is_err());
        let mut h = HyperParams::<f64>::for_features(4);
        h.eps_s = 0.0;
        assert!(h.validate().is_err());
        assert!(HyperParams::<f32>::spl_baseline(3).validate().is_ok());
    }

    #[test]
    fn squared_loss_properties() {
        let m = LinearSquared;
        assert_eq!(LossModel::<f64>::loss(&m, 2.0, 2.0), 0.0);
        assert_eq!(LossModel::<f64>::loss(&m, 2.0, -1.0), 9.0);
        assert_eq!(LossModel::<f64>::loss_slope(&m, 2.0, -1.0), -6.0);
    }
}
