//! Recursive estimates of the disturbance derivatives.
//!
//! Feeding the observer outputs back through the `(M, N)` pair gives
//! estimates of successive derivatives without extra dynamics:
//!
//! ```text
//! eps_1   = M rho_hat - N d_hat
//! delta_k = -M(eps_k) theta
//! eps_k+1 = M eps_k - N delta_k
//! ```
//!
//! `eps_k` tracks `rho^(k)` and `delta_k` tracks `d^(k)`; under
//! persistence of excitation both do so exponentially. The chain is
//! memoryless: it is recomputed from the current `(rho_hat, d_hat,
//! theta)` at every sample.

use nalgebra::DVector;
use thiserror::Error;

use crate::exosystem::ExoBlocks;
use crate::observer::regressor_apply;

/// Derivative estimates up to chain depth `q`: `eps[k-1]` estimates
/// `rho^(k)` and `delta[k-1]` estimates `d^(k)`.
#[derive(Debug, Clone)]
pub struct DerivEstimates {
    pub eps: Vec<DVector<f64>>,
    pub delta: Vec<DVector<f64>>,
}

impl DerivEstimates {
    pub fn depth(&self) -> usize {
        self.eps.len()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("chain depth must be at least 1")]
    ZeroDepth,
}

/// Runs the recursion to depth `q >= 1`.
pub fn chain(
    blocks: &ExoBlocks,
    rho_hat: &DVector<f64>,
    d_hat: &DVector<f64>,
    theta: &DVector<f64>,
    q: usize,
) -> Result<DerivEstimates, ChainError> {
    if q == 0 {
        return Err(ChainError::ZeroDepth);
    }
    let rbar = blocks.total_dim();
    let n2 = blocks.n_channels();
    if rho_hat.len() != rbar || theta.len() != rbar {
        return Err(ChainError::DimensionMismatch(format!(
            "rho_hat and theta must have {rbar} entries"
        )));
    }
    if d_hat.len() != n2 {
        return Err(ChainError::DimensionMismatch(format!(
            "d_hat must have {n2} entries"
        )));
    }

    let mut eps = Vec::with_capacity(q);
    let mut delta = Vec::with_capacity(q);
    let mut eps_k = &blocks.m * rho_hat - &blocks.n * d_hat;
    for _ in 0..q {
        let delta_k = -regressor_apply(blocks, &eps_k, theta);
        let eps_next = &blocks.m * &eps_k - &blocks.n * &delta_k;
        eps.push(eps_k);
        delta.push(delta_k);
        eps_k = eps_next;
    }
    Ok(DerivEstimates { eps, delta })
}
