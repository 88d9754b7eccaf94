//! Adaptive disturbance observer: a Luenberger-style estimator of the
//! disturbed state paired with a gradient adaptation law.
//!
//! The disturbance admits the linear parameterization
//! `d = -M(rho) C(psi)` where `M(v)` stacks the per-channel row
//! vectors `v_i'` block-diagonally and `C(psi)` stacks the unknown
//! output maps. Replacing `rho` by the internal model's estimate makes
//! the parameterization measurable, and the adaptation state `theta`
//! plays the role of `C(psi)`:
//!
//! ```text
//! x2_hat' = f2 - M(rho_hat) theta + K (x2_hat - x2)
//! theta'  = Lambda M(rho_hat)' P (x2_hat - x2)
//! d_hat   = -M(rho_hat) theta
//! ```
//!
//! `d_hat` converges to the disturbance for any Hurwitz `K` and
//! positive definite `Lambda`; persistence of excitation upgrades the
//! convergence to exponential and drags `theta` to `C(psi)` itself.

use nalgebra::DVector;
use thiserror::Error;

use crate::exosystem::ExoBlocks;
use crate::matkit::{self, Mat, MatError};

/// Estimator state: the state estimate and the adaptation vector.
#[derive(Debug, Clone)]
pub struct ObserverState {
    pub x2_hat: DVector<f64>,
    pub theta: DVector<f64>,
}

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("observer gain K must be Hurwitz")]
    GainNotHurwitz,
    #[error("Lambda must be symmetric positive definite (min eig {0})")]
    LambdaNotPositive(f64),
    #[error("supplied P does not solve K'P + PK = -I (residual {0:.3e})")]
    InconsistentP(f64),
    #[error(transparent)]
    Solver(#[from] MatError),
}

/// Gains of the estimator; `p` always satisfies `k'p + pk = -I`.
#[derive(Debug, Clone)]
pub struct ObserverGains {
    pub k: Mat,
    pub p: Mat,
    pub lambda: Mat,
    lambda_inv: Mat,
}

impl ObserverGains {
    /// Derives `p` from `k` by solving the Lyapunov equation with an
    /// identity right-hand side.
    pub fn new(k: Mat, lambda: Mat) -> Result<Self, ObserverError> {
        let n2 = k.nrows();
        let p = matkit::solve_lyapunov(&k, &Mat::identity(n2, n2)).map_err(|e| match e {
            MatError::NotHurwitz(_) => ObserverError::GainNotHurwitz,
            other => ObserverError::Solver(other),
        })?;
        Self::with_p(k, p, lambda)
    }

    /// Accepts an externally supplied `p`, cross-checking it against
    /// the Lyapunov equation.
    pub fn with_p(k: Mat, p: Mat, lambda: Mat) -> Result<Self, ObserverError> {
        let n2 = k.nrows();
        let resid = (k.transpose() * &p + &p * &k + Mat::identity(n2, n2)).norm();
        if resid > 1e-10 * (n2 as f64).sqrt() {
            return Err(ObserverError::InconsistentP(resid));
        }
        let lmin = matkit::min_eig_sym(&lambda)?;
        if lmin <= 0.0 {
            return Err(ObserverError::LambdaNotPositive(lmin));
        }
        let lambda_inv = lambda
            .clone()
            .try_inverse()
            .ok_or(ObserverError::LambdaNotPositive(lmin))?;
        Ok(ObserverGains {
            k,
            p,
            lambda,
            lambda_inv,
        })
    }

    pub fn lambda_inv(&self) -> &Mat {
        &self.lambda_inv
    }
}

/// Block-diagonal regressor `M(v) = blkdiag(v_1', ..., v_n2')`, with
/// the partition taken from the blocks.
pub fn regressor(blocks: &ExoBlocks, v: &DVector<f64>) -> Result<Mat, ObserverError> {
    if v.len() != blocks.total_dim() {
        return Err(ObserverError::DimensionMismatch(format!(
            "vector has {} entries, blocks expect {}",
            v.len(),
            blocks.total_dim()
        )));
    }
    let n2 = blocks.n_channels();
    let mut m = Mat::zeros(n2, blocks.total_dim());
    for i in 0..n2 {
        for j in blocks.channel_range(i) {
            m[(i, j)] = v[j];
        }
    }
    Ok(m)
}

/// `M(v) * theta` evaluated channelwise, without materializing the
/// regressor matrix.
pub fn regressor_apply(blocks: &ExoBlocks, v: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
    assert_eq!(v.len(), blocks.total_dim(), "regressor vector dimension");
    assert_eq!(theta.len(), blocks.total_dim(), "theta dimension");
    let n2 = blocks.n_channels();
    DVector::from_fn(n2, |i, _| {
        blocks
            .channel_range(i)
            .map(|j| v[j] * theta[j])
            .sum::<f64>()
    })
}

/// Disturbance estimate `-M(rho_hat) theta`.
pub fn d_hat(blocks: &ExoBlocks, rho_hat: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
    -regressor_apply(blocks, rho_hat, theta)
}

/// Right-hand sides of the estimator and adaptation states.
pub fn obs_rhs(
    blocks: &ExoBlocks,
    gains: &ObserverGains,
    state: &ObserverState,
    rho_hat: &DVector<f64>,
    x2: &DVector<f64>,
    f2_val: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), ObserverError> {
    let n2 = blocks.n_channels();
    if state.x2_hat.len() != n2 || x2.len() != n2 || f2_val.len() != n2 {
        return Err(ObserverError::DimensionMismatch(format!(
            "x2-sized inputs must have {n2} entries"
        )));
    }
    if state.theta.len() != blocks.total_dim() || rho_hat.len() != blocks.total_dim() {
        return Err(ObserverError::DimensionMismatch(format!(
            "theta and rho_hat must have {} entries",
            blocks.total_dim()
        )));
    }
    let innovation = &state.x2_hat - x2;
    let x2_hat_dot = f2_val - regressor_apply(blocks, rho_hat, &state.theta) + &gains.k * &innovation;

    // theta' = Lambda M(rho_hat)' P innovation, channelwise:
    // block i of M' w is rho_hat_i * w_i.
    let w = &gains.p * &innovation;
    let mut mt_w = DVector::zeros(blocks.total_dim());
    for i in 0..n2 {
        for j in blocks.channel_range(i) {
            mt_w[j] = rho_hat[j] * w[i];
        }
    }
    let theta_dot = &gains.lambda * mt_w;
    Ok((x2_hat_dot, theta_dot))
}
