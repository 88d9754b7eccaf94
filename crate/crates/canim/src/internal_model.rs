//! The compensator that reconstructs the exosystem state.
//!
//! The dynamics `eta' = M eta + N f2 - M N x2` feed the measured
//! right-hand side of the disturbed equation (not the raw input) into
//! an otherwise standard filter pair `(M, N)`. The combination
//! `rho_hat = eta - N x2` then tracks the exosystem state `rho`
//! exponentially for any control input: the error `eta_tilde =
//! eta - rho - N x2` obeys the autonomous `eta_tilde' = M eta_tilde`.
//!
//! The compensator state `eta` is a plain vector partitioned per
//! channel by the blocks it was built against; the simulation harness
//! owns it as a segment of the coupled state.

use nalgebra::DVector;
use thiserror::Error;

use crate::exosystem::ExoBlocks;
use crate::matkit::Mat;

#[derive(Debug, Error, PartialEq)]
pub enum ImError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

fn check_dims(blocks: &ExoBlocks, eta: &DVector<f64>, x2: &DVector<f64>) -> Result<(), ImError> {
    if eta.len() != blocks.total_dim() {
        return Err(ImError::DimensionMismatch(format!(
            "eta has {} entries, blocks expect {}",
            eta.len(),
            blocks.total_dim()
        )));
    }
    if x2.len() != blocks.n_channels() {
        return Err(ImError::DimensionMismatch(format!(
            "x2 has {} entries, blocks expect {}",
            x2.len(),
            blocks.n_channels()
        )));
    }
    Ok(())
}

/// Right-hand side `M eta + N f2 - M N x2`.
pub fn im_rhs(
    blocks: &ExoBlocks,
    eta: &DVector<f64>,
    x2: &DVector<f64>,
    f2_val: &DVector<f64>,
) -> Result<DVector<f64>, ImError> {
    check_dims(blocks, eta, x2)?;
    if f2_val.len() != blocks.n_channels() {
        return Err(ImError::DimensionMismatch(format!(
            "f2 has {} entries, blocks expect {}",
            f2_val.len(),
            blocks.n_channels()
        )));
    }
    Ok(&blocks.m * eta + &blocks.n * f2_val - &blocks.mn * x2)
}

/// Exosystem-state estimate `eta - N x2`.
pub fn rho_hat(
    blocks: &ExoBlocks,
    eta: &DVector<f64>,
    x2: &DVector<f64>,
) -> Result<DVector<f64>, ImError> {
    check_dims(blocks, eta, x2)?;
    Ok(eta - &blocks.n * x2)
}

/// Known-frequency disturbance estimate `-psi * rho_hat`. Only valid
/// when `psi` was built from the true frequencies.
pub fn d0_hat(psi: &Mat, rho_hat: &DVector<f64>) -> DVector<f64> {
    assert_eq!(psi.ncols(), rho_hat.len(), "psi and rho_hat disagree");
    -(psi * rho_hat)
}
