//! Adaptive estimation and rejection of trigonometric-polynomial
//! disturbances (a constant offset plus finitely many sinusoids with
//! unknown amplitudes, frequencies, and phases).
//!
//! The crate is organized around a small pipeline:
//!
//! * [`matkit`] — dense small-matrix primitives: Sylvester/Lyapunov
//!   solvers, eigenvalues, companion forms.
//! * [`exosystem`] — ground-truth disturbance model, zeroing
//!   polynomials, and the exosystem matrices used everywhere else.
//! * [`internal_model`] — the compensator that reconstructs the
//!   exosystem state from measured signals.
//! * [`observer`] — state estimator plus parameter adaptation; produces
//!   the disturbance estimate.
//! * [`deriv_chain`] — recursive estimates of disturbance derivatives.
//! * [`freq_id`] — sliding-window least-squares identification of the
//!   disturbance frequencies.
//! * [`plant`] — two-link flexible-joint manipulator testbed and its
//!   tracking controller.
//! * [`sim`] — fixed-step integration of the coupled system, scenario
//!   configuration, trace recording, and convergence metrics.
//! * [`plot`] — self-contained SVG line charts and gnuplot `.dat` dumps.

pub mod deriv_chain;
pub mod exosystem;
#[cfg(test)]
pub(crate) mod testkit;
pub mod freq_id;
pub mod internal_model;
pub mod matkit;
pub mod observer;
pub mod plant;
pub mod plot;
pub mod report;
pub mod sim;
