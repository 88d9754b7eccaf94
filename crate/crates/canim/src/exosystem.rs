//! Ground-truth disturbance model and the exosystem matrices derived
//! from it.
//!
//! Each disturbance channel is a constant offset plus finitely many
//! sinusoids with distinct positive frequencies. Such a signal is
//! annihilated by a polynomial in the differentiation operator (its
//! zeroing polynomial); the companion form of that polynomial drives
//! the vector of the signal's derivatives. Pairing the companion
//! matrix with a designer-chosen Hurwitz matrix through a Sylvester
//! equation yields the coordinate change `rho = -T upsilon` and the
//! output map `psi = gamma * T^-1` that the estimation chain is built
//! on.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matkit::{self, Mat, MatError};

/// One sinusoidal component of a disturbance channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineMode {
    pub amplitude: f64,
    /// rad/s, strictly positive.
    pub frequency: f64,
    /// rad.
    pub phase: f64,
}

/// Ground truth for one disturbance channel:
/// `d_i(t) = offset + sum_j amplitude_j * sin(frequency_j t + phase_j)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub modes: Vec<SineMode>,
}

/// Ground-truth disturbance, one entry per channel of the plant's
/// disturbed equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub channels: Vec<ChannelSpec>,
}

/// Dimension choice for one channel of the internal model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelOrder {
    /// State dimension r_i of the channel's compensator block.
    pub dim: usize,
    /// Whether the realization reserves a state for a constant term.
    pub has_constant: bool,
}

/// Model order for every channel. Minimal order is `2 * (#modes)`
/// plus one when a constant is modeled; anything larger overmodels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOrder {
    pub channels: Vec<ChannelOrder>,
}

#[derive(Debug, Error)]
pub enum ExoError {
    #[error("channel {channel}: duplicate or nonpositive frequency {frequency}")]
    DuplicateFrequency { channel: usize, frequency: f64 },
    #[error("invalid model order: {0}")]
    InvalidOrder(String),
    #[error("channel {channel}: designer spectrum must be Hurwitz, got eigenvalue {value}")]
    SpectrumNotHurwitz { channel: usize, value: f64 },
    #[error("window is shorter than the requested span")]
    WindowTooShort,
    #[error(transparent)]
    Solver(#[from] MatError),
}

impl ChannelSpec {
    /// Degree of the minimal zeroing polynomial.
    pub fn minimal_dim(&self, has_constant: bool) -> usize {
        2 * self.modes.len() + usize::from(has_constant)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.frequency).collect()
    }
}

impl DisturbanceSpec {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Frequencies above ~1e3 rad/s make the expanded zeroing
    /// polynomial badly scaled; surface that as a warning rather than
    /// an error.
    pub fn conditioning_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, ch) in self.channels.iter().enumerate() {
            for m in &ch.modes {
                if m.frequency > 1e3 {
                    out.push(format!(
                        "channel {}: frequency {} rad/s will produce badly conditioned zeroing coefficients",
                        i + 1,
                        m.frequency
                    ));
                }
            }
        }
        out
    }

    fn validate_against(&self, order: &ModelOrder) -> Result<(), ExoError> {
        if self.channels.len() != order.channels.len() {
            return Err(ExoError::InvalidOrder(format!(
                "disturbance has {} channels but order lists {}",
                self.channels.len(),
                order.channels.len()
            )));
        }
        for (i, (ch, ord)) in self.channels.iter().zip(&order.channels).enumerate() {
            if ch.offset != 0.0 && !ord.has_constant {
                return Err(ExoError::InvalidOrder(format!(
                    "channel {}: nonzero offset requires has_constant = true",
                    i + 1
                )));
            }
            let minimal = ch.minimal_dim(ord.has_constant);
            if ord.dim < minimal.max(1) {
                return Err(ExoError::InvalidOrder(format!(
                    "channel {}: dim {} is below the minimal realization {}",
                    i + 1,
                    ord.dim,
                    minimal.max(1)
                )));
            }
        }
        Ok(())
    }
}

impl ModelOrder {
    /// Minimal realization per channel: one state per constant, two
    /// per sinusoid.
    pub fn minimal(spec: &DisturbanceSpec) -> Self {
        ModelOrder {
            channels: spec
                .channels
                .iter()
                .map(|ch| {
                    let has_constant = ch.offset != 0.0 || ch.modes.is_empty();
                    ChannelOrder {
                        dim: ch.minimal_dim(has_constant).max(1),
                        has_constant,
                    }
                })
                .collect(),
        }
    }

    pub fn total_dim(&self) -> usize {
        self.channels.iter().map(|c| c.dim).sum()
    }

    pub fn max_dim(&self) -> usize {
        self.channels.iter().map(|c| c.dim).max().unwrap_or(0)
    }

    pub fn is_minimal_for(&self, spec: &DisturbanceSpec) -> bool {
        self.channels
            .iter()
            .zip(&spec.channels)
            .all(|(ord, ch)| ord.dim == ch.minimal_dim(ord.has_constant).max(1))
    }
}

/// Coefficients `beta` of the minimal zeroing polynomial
/// `l^r - beta[r-1] l^(r-1) - ... - beta[0]`, i.e. the expansion of
/// `prod_j (l^2 + w_j^2)` times an extra factor `l` when a constant
/// term is present.
pub fn zeroing_coeffs(frequencies: &[f64], has_constant: bool) -> Result<Vec<f64>, ExoError> {
    for (j, &w) in frequencies.iter().enumerate() {
        if w <= 0.0 || !w.is_finite() {
            return Err(ExoError::DuplicateFrequency {
                channel: 0,
                frequency: w,
            });
        }
        if frequencies[..j].contains(&w) {
            return Err(ExoError::DuplicateFrequency {
                channel: 0,
                frequency: w,
            });
        }
    }
    let mut poly = expand_zeroing_poly(frequencies, has_constant, 0);
    poly.pop(); // drop the monic leading 1
    Ok(poly.iter().map(|c| -c).collect())
}

/// Full coefficient vector (lowest degree first, monic leading 1 kept)
/// of `l^pad * (l if has_constant) * prod (l^2 + w^2)`.
fn expand_zeroing_poly(frequencies: &[f64], has_constant: bool, pad: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    for &w in frequencies {
        let w2 = w * w;
        let mut next = vec![0.0; poly.len() + 2];
        for (k, &c) in poly.iter().enumerate() {
            next[k + 2] += c;
            next[k] += w2 * c;
        }
        poly = next;
    }
    let shifts = usize::from(has_constant) + pad;
    for _ in 0..shifts {
        poly.insert(0, 0.0);
    }
    poly
}

/// Matrices of one channel of the exosystem and its companion
/// internal-model block.
#[derive(Debug, Clone)]
pub struct ChannelBlocks {
    pub dim: usize,
    pub has_constant: bool,
    /// Companion matrix of the (possibly padded) zeroing polynomial.
    pub phi: Mat,
    /// Output row selecting the signal itself: `[1 0 ... 0]`.
    pub gamma: Mat,
    /// Designer Hurwitz matrix, companion form.
    pub m: Mat,
    /// Input column `e_r`, making `(m, n)` controllable.
    pub n: Mat,
    /// Unique solution of `t*phi - m*t = n*gamma`.
    pub t: Mat,
    /// Output map `gamma * t^-1`, a single row.
    pub psi: Mat,
}

/// Per-channel blocks plus their block-diagonal aggregates.
#[derive(Debug, Clone)]
pub struct ExoBlocks {
    pub channels: Vec<ChannelBlocks>,
    pub phi: Mat,
    pub gamma: Mat,
    pub m: Mat,
    pub n: Mat,
    pub t: Mat,
    /// Block-diagonal stack of the per-channel rows; `n2 x rbar`.
    pub psi: Mat,
    /// Precomputed `m * n` used by the internal-model dynamics.
    pub mn: Mat,
}

impl ExoBlocks {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Total compensator dimension (sum of channel dims).
    pub fn total_dim(&self) -> usize {
        self.m.nrows()
    }

    /// Index range of channel `i` inside a stacked vector.
    pub fn channel_range(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.channels[..i].iter().map(|c| c.dim).sum();
        start..start + self.channels[i].dim
    }

    /// Stacked per-channel output maps `col(psi_1', ..., psi_n2')`,
    /// the target value of the adaptation state.
    pub fn c_psi(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_dim());
        for (i, ch) in self.channels.iter().enumerate() {
            let range = self.channel_range(i);
            for (k, idx) in range.enumerate() {
                out[idx] = ch.psi[(0, k)];
            }
        }
        out
    }
}

/// Builds all exosystem blocks for the given order and designer
/// spectra. An order above the minimal realization pads the zeroing
/// polynomial with extra zero roots, which keeps the Sylvester pairing
/// well posed.
pub fn build_exo_blocks(
    spec: &DisturbanceSpec,
    order: &ModelOrder,
    m_spectra: &[Vec<f64>],
) -> Result<ExoBlocks, ExoError> {
    spec.validate_against(order)?;
    if m_spectra.len() != spec.channels.len() {
        return Err(ExoError::InvalidOrder(format!(
            "m_spectra lists {} channels, expected {}",
            m_spectra.len(),
            spec.channels.len()
        )));
    }

    let mut channels = Vec::with_capacity(spec.channels.len());
    for (i, ((ch, ord), spectrum)) in spec
        .channels
        .iter()
        .zip(&order.channels)
        .zip(m_spectra)
        .enumerate()
    {
        let freqs = ch.frequencies();
        for (j, &w) in freqs.iter().enumerate() {
            if w <= 0.0 || !w.is_finite() || freqs[..j].contains(&w) {
                return Err(ExoError::DuplicateFrequency {
                    channel: i + 1,
                    frequency: w,
                });
            }
        }
        if spectrum.len() != ord.dim {
            return Err(ExoError::InvalidOrder(format!(
                "channel {}: spectrum has {} entries for dim {}",
                i + 1,
                spectrum.len(),
                ord.dim
            )));
        }
        if let Some(&bad) = spectrum.iter().find(|&&v| v >= 0.0 || !v.is_finite()) {
            return Err(ExoError::SpectrumNotHurwitz {
                channel: i + 1,
                value: bad,
            });
        }

        let minimal = ch.minimal_dim(ord.has_constant).max(1);
        let pad = ord.dim - minimal;
        let mut poly = expand_zeroing_poly(&freqs, ord.has_constant, pad);
        poly.pop();
        let beta: Vec<f64> = poly.iter().map(|c| -c).collect();

        let phi = matkit::companion_bottom_row(&beta);
        let mut gamma = Mat::zeros(1, ord.dim);
        gamma[(0, 0)] = 1.0;
        let m = matkit::companion_from_real_spectrum(spectrum);
        let mut n = Mat::zeros(ord.dim, 1);
        n[(ord.dim - 1, 0)] = 1.0;
        let t = matkit::solve_sylvester(&phi, &m, &n, &gamma)?;
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or(MatError::SpectraOverlap)?;
        let psi = &gamma * t_inv;
        channels.push(ChannelBlocks {
            dim: ord.dim,
            has_constant: ord.has_constant,
            phi,
            gamma,
            m,
            n,
            t,
            psi,
        });
    }

    let phi = matkit::blkdiag(&channels.iter().map(|c| c.phi.clone()).collect::<Vec<_>>());
    let gamma = matkit::blkdiag(&channels.iter().map(|c| c.gamma.clone()).collect::<Vec<_>>());
    let m = matkit::blkdiag(&channels.iter().map(|c| c.m.clone()).collect::<Vec<_>>());
    let n = matkit::blkdiag(&channels.iter().map(|c| c.n.clone()).collect::<Vec<_>>());
    let t = matkit::blkdiag(&channels.iter().map(|c| c.t.clone()).collect::<Vec<_>>());
    let psi = matkit::blkdiag(&channels.iter().map(|c| c.psi.clone()).collect::<Vec<_>>());
    let mn = &m * &n;
    Ok(ExoBlocks {
        channels,
        phi,
        gamma,
        m,
        n,
        t,
        psi,
        mn,
    })
}

/// Closed-form evaluation of the ground-truth disturbance and the
/// derived exosystem state, for use as a test and diagnostics oracle.
#[derive(Debug, Clone)]
pub struct TruthModel {
    spec: DisturbanceSpec,
    blocks: ExoBlocks,
}

/// One sample of ground truth at a fixed time.
#[derive(Debug, Clone)]
pub struct TruthSample {
    /// `derivs[k]` is the k-th time derivative of the disturbance
    /// vector; `derivs[0]` is the disturbance itself.
    pub derivs: Vec<DVector<f64>>,
    /// Stacked derivative states, channel by channel.
    pub upsilon: DVector<f64>,
    /// Exosystem state `-T * upsilon`.
    pub rho: DVector<f64>,
}

impl TruthSample {
    pub fn d(&self) -> &DVector<f64> {
        &self.derivs[0]
    }
}

impl TruthModel {
    /// The blocks must be built at minimal order, where the stacked
    /// derivative state is the realization's state.
    pub fn new(spec: DisturbanceSpec, blocks: ExoBlocks) -> Self {
        TruthModel { spec, blocks }
    }

    pub fn blocks(&self) -> &ExoBlocks {
        &self.blocks
    }

    pub fn spec(&self) -> &DisturbanceSpec {
        &self.spec
    }

    /// k-th derivative of channel `i` at time `t`, exact closed form.
    pub fn channel_deriv(&self, i: usize, k: usize, t: f64) -> f64 {
        let ch = &self.spec.channels[i];
        let mut v = if k == 0 { ch.offset } else { 0.0 };
        for m in &ch.modes {
            let w = m.frequency;
            v += m.amplitude * w.powi(k as i32) * (w * t + m.phase + k as f64 * std::f64::consts::FRAC_PI_2).sin();
        }
        v
    }

    /// Evaluates the disturbance, its derivatives up to `k_max`, and
    /// the exosystem state at time `t`.
    pub fn eval(&self, t: f64, k_max: usize) -> TruthSample {
        let n2 = self.spec.channels.len();
        let deriv_depth = k_max.max(self.blocks.channels.iter().map(|c| c.dim).max().unwrap_or(1));
        let derivs: Vec<DVector<f64>> = (0..=deriv_depth)
            .map(|k| DVector::from_fn(n2, |i, _| self.channel_deriv(i, k, t)))
            .collect();

        let rbar = self.blocks.total_dim();
        let mut upsilon = DVector::zeros(rbar);
        for (i, _) in self.blocks.channels.iter().enumerate() {
            for (k, idx) in self.blocks.channel_range(i).enumerate() {
                upsilon[idx] = derivs[k][i];
            }
        }
        let rho = -(&self.blocks.t * &upsilon);
        TruthSample {
            derivs: derivs.into_iter().take(k_max + 1).collect(),
            upsilon,
            rho,
        }
    }

    /// `rho` differentiated `k` times: `-T * upsilon^(k)`.
    pub fn rho_deriv(&self, t: f64, k: usize) -> DVector<f64> {
        let rbar = self.blocks.total_dim();
        let mut upsilon_k = DVector::zeros(rbar);
        for (i, _) in self.blocks.channels.iter().enumerate() {
            let range = self.blocks.channel_range(i);
            for (j, idx) in range.enumerate() {
                upsilon_k[idx] = self.channel_deriv(i, j + k, t);
            }
        }
        -(&self.blocks.t * upsilon_k)
    }
}

/// Outcome of the windowed persistence-of-excitation test.
#[derive(Debug, Clone, Serialize)]
pub struct PeWindowReport {
    /// Smallest eigenvalue of the windowed Gram, minimized over all
    /// window starts.
    pub pe_metric: f64,
    pub satisfied: bool,
}

/// Slides a window of span `window` seconds over the uniformly sampled
/// signal and reports the worst-case smallest Gram eigenvalue, using
/// trapezoidal quadrature.
pub fn is_pe_window(
    samples: &[DVector<f64>],
    dt: f64,
    window: f64,
    alpha: f64,
) -> Result<PeWindowReport, ExoError> {
    let n_win = (window / dt).round() as usize;
    if n_win == 0 || samples.len() < n_win + 1 {
        return Err(ExoError::WindowTooShort);
    }
    let dim = samples[0].len();
    let strip = |k: usize| -> Mat {
        let a = &samples[k];
        let b = &samples[k + 1];
        (a * a.transpose() + b * b.transpose()) * (dt * 0.5)
    };
    let gram_from_scratch = |start: usize| -> Mat {
        let mut g = Mat::zeros(dim, dim);
        for k in start..start + n_win {
            g += strip(k);
        }
        g
    };

    let mut gram = gram_from_scratch(0);
    let mut metric = f64::INFINITY;
    let n_starts = samples.len() - n_win;
    for start in 0..n_starts {
        if start > 0 {
            gram += strip(start + n_win - 1);
            gram -= strip(start - 1);
            // periodic rebase keeps incremental drift below analysis noise
            if start % 4096 == 0 {
                gram = gram_from_scratch(start);
            }
        }
        let lmin = matkit::min_eig_sym(&gram)?;
        metric = metric.min(lmin);
    }
    Ok(PeWindowReport {
        pe_metric: metric,
        satisfied: metric >= alpha,
    })
}
