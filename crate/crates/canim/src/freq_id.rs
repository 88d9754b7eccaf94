//! Online frequency identification from observer outputs.
//!
//! Per channel, the estimated derivative state and its shift
//!
//! ```text
//! upsilon_hat  = (d_hat_i, delta_1i, ..., delta_{r-1,i})
//! upsilon_dot  = (delta_1i, ..., delta_ri)
//! ```
//!
//! feed sliding-window Gram integrals `S = int u u'` and
//! `Y = int u' u''`... more precisely `Y = int upsilon_dot upsilon'`.
//! Whenever `S` is well conditioned, `phi_hat = Y S^-1` recovers the
//! channel's companion matrix, and the eigenvalues of `-phi_hat^2`
//! cluster in conjugate pairs around the squared frequencies. The
//! cluster means, square-rooted, are the frequency estimates.
//!
//! Ill-conditioned windows (transients, insufficient excitation,
//! overmodeling) surface as `NotReady`, not as an error: callers are
//! expected to poll.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::matkit::{self, Mat, MatError};

#[derive(Debug, Error)]
pub enum FreqIdError {
    #[error("identifier not ready: {0}")]
    NotReady(String),
    #[error("timestamps must be strictly increasing (got {0} after {1})")]
    NonMonotoneTime(f64, f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// After optionally removing the zero mode, an odd number of
    /// eigenvalues remains. Usually a wrong constant-term hint or an
    /// unconverged estimate.
    #[error("spectrum has an odd number of oscillatory eigenvalues ({0})")]
    OddSpectrum(usize),
    #[error(transparent)]
    Solver(#[from] MatError),
}

/// Frequency estimates extracted from one channel.
#[derive(Debug, Clone, Serialize)]
pub struct FreqEstimate {
    /// Estimated frequencies, rad/s, sorted ascending.
    pub omega_hat: Vec<f64>,
    /// Whether a near-zero eigenvalue was removed before pairing.
    pub constant_mode_present: bool,
    /// Within-cluster spread `|mu_1 - mu_2|` for each retained pair,
    /// aligned with `omega_hat`.
    pub cluster_gaps: Vec<f64>,
    /// Condition number of the window Gram that produced the
    /// estimate, when known.
    pub condition: Option<f64>,
    /// True when a negative squared-frequency mean had to be clamped
    /// to zero.
    pub clamped: bool,
    /// Largest imaginary part among the cluster means; should sit at
    /// rounding level once the clusters are genuine conjugate pairs.
    pub max_imag: f64,
}

/// Builds the per-channel estimate vectors from the observer output
/// `d_hat_i` and the derivative chain values `delta_1i ... delta_ri`.
///
/// Returns `(upsilon_hat, upsilon_hat_dot)`, which satisfy the shift
/// relation `upsilon_hat_dot[j] = upsilon_hat[j+1]` for `j < r-1` by
/// construction.
pub fn assemble_upsilon_hat(
    d_hat_i: f64,
    deltas_i: &[f64],
) -> Result<(DVector<f64>, DVector<f64>), FreqIdError> {
    let r = deltas_i.len();
    if r == 0 {
        return Err(FreqIdError::DimensionMismatch(
            "need at least one derivative estimate".into(),
        ));
    }
    let mut up = DVector::zeros(r);
    up[0] = d_hat_i;
    for j in 1..r {
        up[j] = deltas_i[j - 1];
    }
    let up_dot = DVector::from_column_slice(deltas_i);
    Ok((up, up_dot))
}

#[derive(Debug, Clone)]
struct Sample {
    t: f64,
    up: DVector<f64>,
    up_dot: DVector<f64>,
}

/// Sliding window of one channel: ring buffer of samples plus two
/// monotone trapezoid accumulators per Gram. The window integral is
/// the difference of the accumulators, so every strip is added exactly
/// once and incremental drift cannot build up.
#[derive(Debug, Clone)]
struct ChannelWindow {
    dim: usize,
    buf: VecDeque<Sample>,
    s_head: Mat,
    s_tail: Mat,
    y_head: Mat,
    y_tail: Mat,
    pushes_since_rebase: usize,
}

impl ChannelWindow {
    fn new(dim: usize) -> Self {
        ChannelWindow {
            dim,
            buf: VecDeque::new(),
            s_head: Mat::zeros(dim, dim),
            s_tail: Mat::zeros(dim, dim),
            y_head: Mat::zeros(dim, dim),
            y_tail: Mat::zeros(dim, dim),
            pushes_since_rebase: 0,
        }
    }

    fn strips(a: &Sample, b: &Sample) -> (Mat, Mat) {
        let h = b.t - a.t;
        let s = (&a.up * a.up.transpose() + &b.up * b.up.transpose()) * (h * 0.5);
        let y = (&a.up_dot * a.up.transpose() + &b.up_dot * b.up.transpose()) * (h * 0.5);
        (s, y)
    }

    fn push(&mut self, sample: Sample, t1: f64) -> Result<(), FreqIdError> {
        if let Some(last) = self.buf.back() {
            if sample.t <= last.t {
                return Err(FreqIdError::NonMonotoneTime(sample.t, last.t));
            }
            let (ds, dy) = Self::strips(last, &sample);
            self.s_head += ds;
            self.y_head += dy;
        }
        self.buf.push_back(sample);
        // Evict strictly older samples, keeping the span at or just
        // above the window length.
        let newest = self.buf.back().unwrap().t;
        while self.buf.len() >= 2 && newest - self.buf[1].t >= t1 - 1e-9 {
            let old = self.buf.pop_front().unwrap();
            let (ds, dy) = Self::strips(&old, &self.buf[0]);
            self.s_tail += ds;
            self.y_tail += dy;
        }
        // Periodic rebase: once large transient samples have left the
        // buffer, their magnitude still sits in both accumulators and
        // the head-minus-tail difference loses precision against it.
        // Recomputing over the live buffer flushes that history at an
        // amortized cost of one extra strip per push.
        self.pushes_since_rebase += 1;
        if self.pushes_since_rebase >= self.buf.len().max(64) {
            let (s, y) = self.grams_from_scratch();
            self.s_head = s;
            self.y_head = y;
            self.s_tail = Mat::zeros(self.dim, self.dim);
            self.y_tail = Mat::zeros(self.dim, self.dim);
            self.pushes_since_rebase = 0;
        }
        Ok(())
    }

    fn span(&self) -> f64 {
        match (self.buf.front(), self.buf.back()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    fn grams(&self) -> (Mat, Mat) {
        (
            &self.s_head - &self.s_tail,
            &self.y_head - &self.y_tail,
        )
    }

    /// Full trapezoidal requadrature over the buffered samples; the
    /// reference the incremental accumulators are tested against.
    fn grams_from_scratch(&self) -> (Mat, Mat) {
        let mut s = Mat::zeros(self.dim, self.dim);
        let mut y = Mat::zeros(self.dim, self.dim);
        for k in 1..self.buf.len() {
            let (ds, dy) = Self::strips(&self.buf[k - 1], &self.buf[k]);
            s += ds;
            y += dy;
        }
        (s, y)
    }
}

/// Sliding-window Gram state for every channel.
#[derive(Debug, Clone)]
pub struct FreqIdWindow {
    t1: f64,
    channels: Vec<ChannelWindow>,
}

impl FreqIdWindow {
    /// `dims` lists the per-channel state dimensions; `t1` is the
    /// window span in seconds.
    pub fn new(dims: &[usize], t1: f64) -> Self {
        FreqIdWindow {
            t1,
            channels: dims.iter().map(|&d| ChannelWindow::new(d)).collect(),
        }
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Appends one `(upsilon_hat, upsilon_hat_dot)` sample per channel
    /// at time `t`, updating the running integrals and evicting
    /// anything older than the window span.
    pub fn update(
        &mut self,
        t: f64,
        samples: &[(DVector<f64>, DVector<f64>)],
    ) -> Result<(), FreqIdError> {
        if samples.len() != self.channels.len() {
            return Err(FreqIdError::DimensionMismatch(format!(
                "{} samples for {} channels",
                samples.len(),
                self.channels.len()
            )));
        }
        for (ch, (up, up_dot)) in self.channels.iter_mut().zip(samples) {
            if up.len() != ch.dim || up_dot.len() != ch.dim {
                return Err(FreqIdError::DimensionMismatch(format!(
                    "sample dim {} for channel dim {}",
                    up.len(),
                    ch.dim
                )));
            }
            ch.push(
                Sample {
                    t,
                    up: up.clone(),
                    up_dot: up_dot.clone(),
                },
                self.t1,
            )?;
        }
        Ok(())
    }

    /// Seconds currently covered by channel `i`'s buffer.
    pub fn span(&self, channel: usize) -> f64 {
        self.channels[channel].span()
    }

    /// Current `(S, Y)` pair of channel `i`.
    pub fn grams(&self, channel: usize) -> (Mat, Mat) {
        self.channels[channel].grams()
    }

    /// From-scratch requadrature of channel `i`, for cross-checking
    /// the incremental state.
    pub fn grams_requadrature(&self, channel: usize) -> (Mat, Mat) {
        self.channels[channel].grams_from_scratch()
    }

    /// `Y S^-1` for channel `i`, guarded by window fill and the
    /// condition ceiling.
    pub fn phi_hat(&self, channel: usize, cond_max: f64) -> Result<Mat, FreqIdError> {
        let ch = &self.channels[channel];
        if ch.span() + 1e-9 < self.t1 {
            return Err(FreqIdError::NotReady(format!(
                "window spans {:.3}s of {:.3}s",
                ch.span(),
                self.t1
            )));
        }
        let (s, y) = ch.grams();
        let cond = matkit::cond_sym(&s)?;
        if !cond.is_finite() || cond > cond_max {
            return Err(FreqIdError::NotReady(format!(
                "gram condition {cond:.3e} exceeds ceiling {cond_max:.3e}"
            )));
        }
        let lu = s.lu();
        let z = lu
            .solve(&y.transpose())
            .ok_or_else(|| FreqIdError::NotReady("gram is numerically singular".into()))?;
        Ok(z.transpose())
    }

    /// Convenience wrapper: identify channel `i` end to end.
    pub fn estimate(
        &self,
        channel: usize,
        cond_max: f64,
        has_constant: bool,
    ) -> Result<FreqEstimate, FreqIdError> {
        let phi = self.phi_hat(channel, cond_max)?;
        let (s, _) = self.channels[channel].grams();
        let mut est = cluster_frequencies(&phi, has_constant)?;
        est.condition = Some(matkit::cond_sym(&s)?);
        Ok(est)
    }
}

/// Extracts frequencies from an identified companion-matrix estimate:
/// eigenvalues of `-phi_hat^2` are clustered into conjugate pairs, the
/// near-zero mode is removed when a constant term is modeled, and each
/// pair's mean is square-rooted.
pub fn cluster_frequencies(phi_hat: &Mat, has_constant: bool) -> Result<FreqEstimate, FreqIdError> {
    assert_eq!(phi_hat.nrows(), phi_hat.ncols(), "phi_hat must be square");
    let minus_phi_sq = -(phi_hat * phi_hat);
    let mut eigs = matkit::eigvals(&minus_phi_sq)?;

    let mut constant_removed = false;
    if has_constant {
        if let Some((idx, _)) = eigs
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.norm().partial_cmp(&b.norm()).unwrap())
        {
            eigs.remove(idx);
            constant_removed = true;
        }
    }
    if eigs.len() % 2 != 0 {
        return Err(FreqIdError::OddSpectrum(eigs.len()));
    }

    // Greedy pairing: repeatedly take the eigenvalue with the smallest
    // real part and match it to the remaining value closest in real
    // part, preferring the conjugate on ties.
    eigs.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    let mut pool = eigs;
    let mut pairs = Vec::with_capacity(pool.len() / 2);
    while let Some(a) = pool.first().copied() {
        pool.remove(0);
        let (j, _) = pool
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| {
                let key = |z: &matkit::ComplexScalar| ((z.re - a.re).abs(), (z.im + a.im).abs());
                key(x).partial_cmp(&key(y)).unwrap()
            })
            .expect("even count guarantees a partner");
        let b = pool.remove(j);
        pairs.push((a, b));
    }

    let mut entries: Vec<(f64, f64, bool, f64)> = pairs
        .iter()
        .map(|(a, b)| {
            let mean = (a + b) * 0.5;
            let gap = (a - b).norm();
            let clamped = mean.re < 0.0;
            let omega = mean.re.max(0.0).sqrt();
            (omega, gap, clamped, mean.im.abs())
        })
        .collect();
    entries.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());

    Ok(FreqEstimate {
        omega_hat: entries.iter().map(|e| e.0).collect(),
        constant_mode_present: constant_removed,
        cluster_gaps: entries.iter().map(|e| e.1).collect(),
        condition: None,
        clamped: entries.iter().any(|e| e.2),
        max_imag: entries.iter().fold(0.0, |m, e| m.max(e.3)),
    })
}
