//! Fixed-step simulation of the coupled plant, internal model,
//! observer, and frequency identifier, plus scenario configuration and
//! trace recording.
//!
//! One scenario is one run description: the ground-truth disturbance,
//! the compensator order and designer matrices, gains, horizon, step,
//! seed, and a mode selecting how much of the pipeline is active.
//! Integration is classical RK4 on one monolithic state vector
//! `[plant(8) | eta | x2_hat | theta]`, so no component sees a
//! one-step-delayed copy of another.

use nalgebra::{DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

use crate::deriv_chain::{self, ChainError};
use crate::exosystem::{
    self, build_exo_blocks, DisturbanceSpec, ExoBlocks, ExoError, ModelOrder, TruthModel,
};
use crate::freq_id::{self, FreqIdError, FreqIdWindow};
use crate::internal_model::{self, ImError};
use crate::matkit::{self, Mat, MatError};
use crate::observer::{self, ObserverError, ObserverGains, ObserverState};
use crate::plant::{self, ControllerGains, PlantError, PlantState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite derivative at t = {0}")]
    NonFiniteDerivative(f64),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("at t = {t}: {source}")]
    At {
        t: f64,
        #[source]
        source: Box<SimError>,
    },
    #[error(transparent)]
    Exo(#[from] ExoError),
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Im(#[from] ImError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    FreqId(#[from] FreqIdError),
}

fn at(t: f64, e: impl Into<SimError>) -> SimError {
    SimError::At {
        t,
        source: Box::new(e.into()),
    }
}

/// What the run exercises. The estimation stack runs in every mode;
/// the modes differ in the control feedforward and in whether the
/// frequency identifier is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Tracking control without disturbance feedforward.
    ObserveOnly,
    /// Like `observe_only`, additionally recording the direct estimate
    /// `-psi rho_hat` available when the frequencies are known.
    KnownFrequency,
    /// Feedforward rejection with the adaptive estimate.
    TrackAndReject,
    /// `track_and_reject` plus the sliding-window frequency
    /// identifier.
    FreqId,
}

impl Mode {
    pub fn uses_feedforward(self) -> bool {
        matches!(self, Mode::TrackAndReject | Mode::FreqId)
    }

    pub fn runs_identifier(self) -> bool {
        matches!(self, Mode::FreqId)
    }
}

/// Which compensator feeds the estimation stack. The two classical
/// variants are diagnostic fixtures: they feed the raw actuator input
/// instead of the measured drift (with or without the measurement
/// correction term) and are expected to leave a persistent estimation
/// error on this plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImKind {
    #[default]
    Canonical,
    /// Input-fed with the measurement correction retained.
    ClassicalInput,
    /// Input-fed without the measurement correction.
    ClassicalInputUncorrected,
}

/// Square-matrix config entry: a scalar multiple of the identity, a
/// diagonal, or full rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatConfig {
    Scalar(f64),
    Diag(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatConfig {
    pub fn build(&self, n: usize, what: &str) -> Result<Mat, SimError> {
        match self {
            MatConfig::Scalar(s) => Ok(Mat::identity(n, n) * *s),
            MatConfig::Diag(d) => {
                if d.len() != n {
                    return Err(SimError::Config(format!(
                        "{what}: diagonal has {} entries, expected {n}",
                        d.len()
                    )));
                }
                Ok(Mat::from_diagonal(&DVector::from_row_slice(d)))
            }
            MatConfig::Full(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(SimError::Config(format!("{what}: expected {n}x{n} rows")));
                }
                Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    /// Hurwitz injection gain K.
    pub k: MatConfig,
    /// Adaptation gain Lambda (symmetric positive definite).
    pub lambda: MatConfig,
    /// Optional explicit P; must solve K'P + PK = -I.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<MatConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub alpha: f64,
    pub ks: MatConfig,
    pub kp1: f64,
    pub kp2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// All states start at zero.
    #[default]
    Zero,
    /// Every state component drawn uniformly from `[-range, range]`,
    /// in the fixed order q, q', xi1, xi2, eta, x2_hat, theta.
    Random { range: f64 },
}

fn default_t1() -> f64 {
    40.0
}
fn default_cond_max() -> f64 {
    1e8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreqIdConfig {
    /// Sliding-window span in seconds.
    #[serde(default = "default_t1")]
    pub t1: f64,
    /// Condition ceiling on the window Gram before inverting.
    #[serde(default = "default_cond_max")]
    pub cond_max: f64,
}

impl Default for FreqIdConfig {
    fn default() -> Self {
        FreqIdConfig {
            t1: default_t1(),
            cond_max: default_cond_max(),
        }
    }
}

fn default_pe_window() -> f64 {
    2.0 * std::f64::consts::PI
}
fn default_pe_alpha() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeConfig {
    /// Gram window span in seconds.
    #[serde(default = "default_pe_window")]
    pub window: f64,
    /// Excitation threshold on the smallest Gram eigenvalue.
    #[serde(default = "default_pe_alpha")]
    pub alpha: f64,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig {
            window: default_pe_window(),
            alpha: default_pe_alpha(),
        }
    }
}

fn default_decimate() -> usize {
    10
}

/// One complete run description. Serialized form is the scenario JSON;
/// unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub mode: Mode,
    pub t_end: f64,
    pub step: f64,
    pub seed: u64,
    /// Every n-th row goes into exported traces; analysis always sees
    /// the full-resolution trace.
    #[serde(default = "default_decimate")]
    pub decimate: usize,
    pub disturbance: DisturbanceSpec,
    pub order: ModelOrder,
    /// Designer spectra per channel; defaults to {-1, ..., -dim}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_spectra: Option<Vec<Vec<f64>>>,
    pub observer: ObserverConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub freq_id: FreqIdConfig,
    #[serde(default)]
    pub pe: PeConfig,
    #[serde(default)]
    pub internal_model: ImKind,
}

impl Scenario {
    /// The manipulator benchmark: unit offset plus 1 rad/s sinusoid on
    /// channel 1, 2 rad/s sinusoid on channel 2, compensator spectra
    /// {-1,-2,-3} and {-1,-1}, K = -10 I, and the backstepping gains
    /// alpha = 1, Ks = I, kp1 = 25, kp2 = 10.
    ///
    /// The adaptation gain is diagonal, balanced per direction to the
    /// excitation the benchmark disturbance actually delivers (the
    /// constant component of channel 1 excites its direction four
    /// orders of magnitude harder than the 0.1-amplitude sinusoids
    /// excite theirs). A scalar gain cannot serve both ends of that
    /// spread: small values crawl in the weak directions and large
    /// ones ring in the strong ones.
    pub fn benchmark(mode: Mode) -> Scenario {
        let disturbance: DisturbanceSpec = serde_json::from_value(serde_json::json!({
            "channels": [
                { "offset": 1.0,
                  "modes": [ { "amplitude": 0.1, "frequency": 1.0, "phase": 0.1 } ] },
                { "offset": 0.0,
                  "modes": [ { "amplitude": 0.2, "frequency": 2.0, "phase": 0.2 } ] }
            ]
        }))
        .expect("benchmark disturbance literal");
        Scenario {
            version: 1,
            mode,
            t_end: 200.0,
            step: 1e-3,
            seed: 42,
            decimate: 10,
            order: ModelOrder::minimal(&disturbance),
            disturbance,
            m_spectra: Some(vec![vec![-1.0, -2.0, -3.0], vec![-1.0, -1.0]]),
            observer: ObserverConfig {
                k: MatConfig::Scalar(-10.0),
                lambda: MatConfig::Diag(vec![3.0e3, 1.8e6, 1.8e6, 1.8e5, 4.5e4]),
                p: None,
            },
            controller: ControllerConfig {
                alpha: 1.0,
                ks: MatConfig::Scalar(1.0),
                kp1: 25.0,
                kp2: 10.0,
            },
            init: InitSpec::Random { range: 2.0 },
            freq_id: FreqIdConfig::default(),
            pe: PeConfig::default(),
            internal_model: ImKind::Canonical,
        }
    }

    fn effective_spectra(&self) -> Vec<Vec<f64>> {
        match &self.m_spectra {
            Some(s) => s.clone(),
            None => self
                .order
                .channels
                .iter()
                .map(|c| (1..=c.dim).map(|k| -(k as f64)).collect())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.version != 1 {
            return Err(SimError::Config(format!(
                "version: unsupported scenario version {}",
                self.version
            )));
        }
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(SimError::Config("step: must be positive".into()));
        }
        if self.t_end < 10.0 * self.step {
            return Err(SimError::Config(
                "t_end: must cover at least ten steps".into(),
            ));
        }
        if self.decimate == 0 {
            return Err(SimError::Config("decimate: must be at least 1".into()));
        }
        if self.disturbance.channels.len() != 2 {
            return Err(SimError::Config(format!(
                "disturbance.channels: the manipulator plant has 2 disturbed channels, got {}",
                self.disturbance.channels.len()
            )));
        }
        if self.freq_id.t1 <= 0.0 || self.freq_id.cond_max <= 1.0 {
            return Err(SimError::Config(
                "freq_id: t1 must be positive and cond_max above 1".into(),
            ));
        }
        if self.pe.window <= 0.0 {
            return Err(SimError::Config("pe.window: must be positive".into()));
        }
        Ok(())
    }
}

/// Everything derived from a scenario before integration starts.
pub struct SimSetup {
    pub scenario: Scenario,
    /// Blocks at the configured (possibly overmodeled) order.
    pub blocks: ExoBlocks,
    /// Ground-truth oracle at minimal order.
    pub truth: TruthModel,
    pub obs_gains: ObserverGains,
    pub ctrl_gains: ControllerGains,
    /// Target value of the adaptation state.
    pub c_psi: DVector<f64>,
    /// Lyapunov matrix of the motor-side error loop.
    pub p_c: Mat,
    /// Weight on the motor-side term of the tracking Lyapunov
    /// function.
    pub c1: f64,
    pub chain_depth: usize,
    /// True frequencies per channel, ascending.
    pub true_freqs: Vec<Vec<f64>>,
}

impl SimSetup {
    pub fn build(scenario: &Scenario) -> Result<SimSetup, SimError> {
        scenario.validate()?;
        let spectra = scenario.effective_spectra();
        let blocks = build_exo_blocks(&scenario.disturbance, &scenario.order, &spectra)?;

        // Minimal-order truth blocks: reuse the configured spectra for
        // channels already at minimal order, default spectra otherwise.
        let minimal = ModelOrder::minimal(&scenario.disturbance);
        let min_spectra: Vec<Vec<f64>> = minimal
            .channels
            .iter()
            .zip(&scenario.order.channels)
            .zip(&spectra)
            .map(|((min_ch, cfg_ch), sp)| {
                if min_ch.dim == cfg_ch.dim {
                    sp.clone()
                } else {
                    (1..=min_ch.dim).map(|k| -(k as f64)).collect()
                }
            })
            .collect();
        let truth_blocks = build_exo_blocks(&scenario.disturbance, &minimal, &min_spectra)?;
        let truth = TruthModel::new(scenario.disturbance.clone(), truth_blocks);

        let n2 = blocks.n_channels();
        let rbar = blocks.total_dim();
        let k = scenario.observer.k.build(n2, "observer.k")?;
        let lambda = scenario.observer.lambda.build(rbar, "observer.lambda")?;
        let obs_gains = match &scenario.observer.p {
            Some(pc) => ObserverGains::with_p(k, pc.build(n2, "observer.p")?, lambda)?,
            None => ObserverGains::new(k, lambda)?,
        };

        let ks = scenario.controller.ks.build(2, "controller.ks")?;
        let ctrl_gains = ControllerGains::new(
            scenario.controller.alpha,
            Matrix2::new(ks[(0, 0)], ks[(0, 1)], ks[(1, 0)], ks[(1, 1)]),
            scenario.controller.kp1,
            scenario.controller.kp2,
        )?;

        let a_c = ctrl_gains.a_c();
        let p_c = matkit::solve_lyapunov(&a_c, &Mat::identity(4, 4))?;
        let ks_min = matkit::min_eig_sym(&Mat::from_fn(2, 2, |i, j| {
            0.5 * (ctrl_gains.ks[(i, j)] + ctrl_gains.ks[(j, i)])
        }))?;
        let c1 = 1.0 / (2.0 * ks_min) + 1.01;

        let chain_depth = if scenario.mode.runs_identifier() {
            scenario.order.max_dim().max(2)
        } else {
            2
        };

        let true_freqs = scenario
            .disturbance
            .channels
            .iter()
            .map(|ch| {
                let mut f = ch.frequencies();
                f.sort_by(|a, b| a.partial_cmp(b).unwrap());
                f
            })
            .collect();

        let c_psi = blocks.c_psi();
        Ok(SimSetup {
            scenario: scenario.clone(),
            blocks,
            truth,
            obs_gains,
            ctrl_gains,
            c_psi,
            p_c,
            c1,
            chain_depth,
            true_freqs,
        })
    }

    /// Zero-padded minimal-order exosystem state used as the `rho`
    /// diagnostic when a channel is overmodeled.
    fn padded_rho(&self, t: f64) -> DVector<f64> {
        let rho_min = self.truth.eval(t, 0).rho;
        let mut out = DVector::zeros(self.blocks.total_dim());
        for i in 0..self.blocks.n_channels() {
            let min_range = self.truth.blocks().channel_range(i);
            let obs_range = self.blocks.channel_range(i);
            for (k, src) in min_range.enumerate() {
                out[obs_range.start + k] = rho_min[src];
            }
        }
        out
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(
    mut rhs: F,
    t: f64,
    state: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, SimError>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, SimError>,
{
    assert!(h > 0.0, "step must be positive");
    let check = |k: &DVector<f64>, stage_t: f64| -> Result<(), SimError> {
        if k.iter().any(|x| !x.is_finite()) {
            Err(SimError::NonFiniteDerivative(stage_t))
        } else {
            Ok(())
        }
    };
    let k1 = rhs(t, state)?;
    check(&k1, t)?;
    let k2 = rhs(t + 0.5 * h, &(state + &k1 * (0.5 * h)))?;
    check(&k2, t + 0.5 * h)?;
    let k3 = rhs(t + 0.5 * h, &(state + &k2 * (0.5 * h)))?;
    check(&k3, t + 0.5 * h)?;
    let k4 = rhs(t + h, &(state + &k3 * h))?;
    check(&k4, t + h)?;
    Ok(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Uniformly sampled record of every signal of interest; stored at
/// full resolution, decimated only on export.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub columns: Vec<String>,
    data: Vec<f64>,
    pub n_rows: usize,
    /// Time between consecutive rows (the integration step).
    pub step: f64,
    /// Export decimation factor the scenario asked for.
    pub decimate: usize,
}

impl SimTrace {
    fn new(columns: Vec<String>, step: f64, decimate: usize) -> Self {
        SimTrace {
            columns,
            data: Vec::new(),
            n_rows: 0,
            step,
            decimate,
        }
    }

    fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.data.extend_from_slice(row);
        self.n_rows += 1;
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.columns.len();
        &self.data[k * w..(k + 1) * w]
    }

    pub fn value(&self, k: usize, name: &str) -> f64 {
        let idx = self
            .col_index(name)
            .unwrap_or_else(|| panic!("no column named {name}"));
        self.row(k)[idx]
    }

    pub fn series(&self, name: &str) -> Vec<f64> {
        let idx = self
            .col_index(name)
            .unwrap_or_else(|| panic!("no column named {name}"));
        (0..self.n_rows).map(|k| self.row(k)[idx]).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.series("t")
    }

    /// Stacks the named columns into one vector per row.
    pub fn vector_series(&self, names: &[&str]) -> Vec<DVector<f64>> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.col_index(n)
                    .unwrap_or_else(|| panic!("no column named {n}"))
            })
            .collect();
        (0..self.n_rows)
            .map(|k| {
                let row = self.row(k);
                DVector::from_fn(idx.len(), |i, _| row[idx[i]])
            })
            .collect()
    }

    /// CSV export: header row plus one decimated line per sample,
    /// 17 significant digits, LF endings.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        let mut line = String::with_capacity(self.columns.len() * 26);
        for k in (0..self.n_rows).step_by(self.decimate) {
            line.clear();
            for (i, v) in self.row(k).iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }
}

/// Trailing-window Gram of one signal, used for the rolling
/// excitation columns. Same accumulator scheme as the frequency
/// identifier's windows.
struct RollingGram {
    window: f64,
    buf: VecDeque<(f64, DVector<f64>)>,
    head: Mat,
    tail: Mat,
    pushes_since_rebase: usize,
}

impl RollingGram {
    fn new(dim: usize, window: f64) -> Self {
        RollingGram {
            window,
            buf: VecDeque::new(),
            head: Mat::zeros(dim, dim),
            tail: Mat::zeros(dim, dim),
            pushes_since_rebase: 0,
        }
    }

    fn strip(a: &(f64, DVector<f64>), b: &(f64, DVector<f64>)) -> Mat {
        (&a.1 * a.1.transpose() + &b.1 * b.1.transpose()) * ((b.0 - a.0) * 0.5)
    }

    fn push(&mut self, t: f64, v: DVector<f64>) {
        if let Some(last) = self.buf.back() {
            let s = Self::strip(last, &(t, v.clone()));
            self.head += s;
        }
        self.buf.push_back((t, v));
        while self.buf.len() >= 2 && t - self.buf[1].0 >= self.window - 1e-9 {
            let old = self.buf.pop_front().unwrap();
            let s = Self::strip(&old, &self.buf[0]);
            self.tail += s;
        }
        // flush accumulated magnitude from old transients, same scheme
        // as the identifier windows
        self.pushes_since_rebase += 1;
        if self.pushes_since_rebase >= self.buf.len().max(64) {
            let dim = self.head.nrows();
            let mut s = Mat::zeros(dim, dim);
            for k in 1..self.buf.len() {
                s += Self::strip(&self.buf[k - 1], &self.buf[k]);
            }
            self.head = s;
            self.tail = Mat::zeros(dim, dim);
            self.pushes_since_rebase = 0;
        }
    }

    /// Smallest Gram eigenvalue once the window is filled.
    fn min_eig(&self) -> Option<f64> {
        let span = self.buf.back()?.0 - self.buf.front()?.0;
        if span + 1e-9 < self.window {
            return None;
        }
        matkit::min_eig_sym(&(&self.head - &self.tail)).ok()
    }
}

/// Runs one scenario to completion and returns the full-resolution
/// trace.
pub fn run_scenario(scenario: &Scenario) -> Result<SimTrace, SimError> {
    let setup = SimSetup::build(scenario)?;
    run_with_setup(&setup)
}

pub fn run_with_setup(setup: &SimSetup) -> Result<SimTrace, SimError> {
    let sc = &setup.scenario;
    let blocks = &setup.blocks;
    let n2 = blocks.n_channels();
    let rbar = blocks.total_dim();
    let dim = 8 + rbar + n2 + rbar;
    let h = sc.step;
    let n_steps = (sc.t_end / h).round() as usize;

    // --- initial state ---
    let mut z = DVector::zeros(dim);
    if let InitSpec::Random { range } = sc.init {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        for i in 0..dim {
            z[i] = rng.gen_range(-range..=range);
        }
    }

    // --- column layout ---
    let mut columns: Vec<String> = vec!["t".into()];
    columns.extend(["q_1", "q_2", "dq_1", "dq_2"].map(String::from));
    columns.extend(["xi1_1", "xi1_2", "xi2_1", "xi2_2"].map(String::from));
    columns.extend(["qd_1", "qd_2"].map(String::from));
    columns.extend(["tau_1", "tau_2"].map(String::from));
    columns.extend(["s_1", "s_2"].map(String::from));
    columns.extend((1..=4).map(|i| format!("xitilde_{i}")));
    columns.extend((1..=rbar).map(|i| format!("rho_{i}")));
    columns.extend((1..=rbar).map(|i| format!("rhohat_{i}")));
    columns.extend(["d_1", "d_2"].map(String::from));
    columns.extend(["dhat_1", "dhat_2"].map(String::from));
    let known_freq = sc.mode == Mode::KnownFrequency;
    if known_freq {
        columns.extend(["d0hat_1", "d0hat_2"].map(String::from));
    }
    columns.extend(["x2hat_1", "x2hat_2"].map(String::from));
    columns.extend((1..=rbar).map(|i| format!("theta_{i}")));
    for k in 1..=setup.chain_depth {
        for i in 1..=n2 {
            columns.push(format!("delta{k}_{i}"));
        }
    }
    let run_id = sc.mode.runs_identifier();
    if run_id {
        for (i, freqs) in setup.true_freqs.iter().enumerate() {
            for j in 1..=freqs.len() {
                columns.push(format!("omegahat_{}_{j}", i + 1));
            }
        }
    }
    columns.extend((1..=n2).map(|i| format!("pe_rhohat_{i}")));
    columns.extend(["v_track", "v_obs"].map(String::from));
    columns.extend(
        ["err_q", "err_dq", "err_x2hat", "err_dhat", "err_theta", "err_rhohat"].map(String::from),
    );
    if known_freq {
        columns.push("err_d0hat".into());
    }
    if setup.chain_depth >= 1 {
        columns.push("err_delta1".into());
    }
    if setup.chain_depth >= 2 {
        columns.push("err_delta2".into());
    }
    if run_id {
        for (i, freqs) in setup.true_freqs.iter().enumerate() {
            for j in 1..=freqs.len() {
                columns.push(format!("err_omega_{}_{j}", i + 1));
            }
        }
    }

    let mut trace = SimTrace::new(columns, h, sc.decimate);

    // --- derived quantities at one state, shared by recording and rhs ---
    let eval_estimates = |t: f64, z: &DVector<f64>| -> Result<Estimates, SimError> {
        let st = PlantState::from_slice(z.as_slice());
        let eta = DVector::from_column_slice(&z.as_slice()[8..8 + rbar]);
        let x2_hat = DVector::from_row_slice(&z.as_slice()[8 + rbar..8 + rbar + n2]);
        let theta = DVector::from_column_slice(&z.as_slice()[8 + rbar + n2..]);
        let xi2 = DVector::from_row_slice(&[st.xi2[0], st.xi2[1]]);
        let rho_hat = internal_model::rho_hat(blocks, &eta, &xi2).map_err(|e| at(t, e))?;
        let d_hat = observer::d_hat(blocks, &rho_hat, &theta);
        let ff = if sc.mode.uses_feedforward() {
            Vector2::new(d_hat[0], d_hat[1])
        } else {
            Vector2::zeros()
        };
        let ctrl = plant::control_step(&st, t, &ff, &setup.ctrl_gains).map_err(|e| at(t, e))?;
        Ok(Estimates {
            st,
            eta,
            x2_hat,
            theta,
            rho_hat,
            d_hat,
            ctrl,
        })
    };

    let rhs = |t: f64, z: &DVector<f64>| -> Result<DVector<f64>, SimError> {
        let e = eval_estimates(t, z)?;
        let d_true = DVector::from_fn(n2, |i, _| setup.truth.channel_deriv(i, 0, t));
        let tau = e.ctrl.tau;
        let plant_dot = plant::plant_rhs(&e.st, &tau, &Vector2::new(d_true[0], d_true[1]))
            .map_err(|er| at(t, er))?;

        // the measured drift of the disturbed equation is the torque
        let f2 = DVector::from_row_slice(&[tau[0], tau[1]]);
        let xi2 = DVector::from_row_slice(&[e.st.xi2[0], e.st.xi2[1]]);
        let eta_dot = match sc.internal_model {
            ImKind::Canonical => {
                internal_model::im_rhs(blocks, &e.eta, &xi2, &f2).map_err(|er| at(t, er))?
            }
            ImKind::ClassicalInput | ImKind::ClassicalInputUncorrected => {
                // actuator input in original coordinates:
                // u0 = tau + (xi1 - q)
                let u0 = DVector::from_row_slice(&[
                    tau[0] + e.st.xi1[0] - e.st.q[0],
                    tau[1] + e.st.xi1[1] - e.st.q[1],
                ]);
                if sc.internal_model == ImKind::ClassicalInput {
                    internal_model::im_rhs(blocks, &e.eta, &xi2, &u0).map_err(|er| at(t, er))?
                } else {
                    &blocks.m * &e.eta + &blocks.n * &u0
                }
            }
        };
        let obs_state = ObserverState {
            x2_hat: e.x2_hat.clone(),
            theta: e.theta.clone(),
        };
        let (x2_hat_dot, theta_dot) =
            observer::obs_rhs(blocks, &setup.obs_gains, &obs_state, &e.rho_hat, &xi2, &f2)
                .map_err(|er| at(t, er))?;

        let mut out = DVector::zeros(dim);
        out[0] = plant_dot.q_dot[0];
        out[1] = plant_dot.q_dot[1];
        out[2] = plant_dot.q_ddot[0];
        out[3] = plant_dot.q_ddot[1];
        out[4] = plant_dot.xi1_dot[0];
        out[5] = plant_dot.xi1_dot[1];
        out[6] = plant_dot.xi2_dot[0];
        out[7] = plant_dot.xi2_dot[1];
        out.rows_mut(8, rbar).copy_from(&eta_dot);
        out.rows_mut(8 + rbar, n2).copy_from(&x2_hat_dot);
        out.rows_mut(8 + rbar + n2, rbar).copy_from(&theta_dot);
        Ok(out)
    };

    // --- identifier and rolling-excitation state ---
    let chan_dims: Vec<usize> = blocks.channels.iter().map(|c| c.dim).collect();
    let mut ident = if run_id {
        Some(FreqIdWindow::new(&chan_dims, sc.freq_id.t1))
    } else {
        None
    };
    let mut pe_grams: Vec<RollingGram> = chan_dims
        .iter()
        .map(|&d| RollingGram::new(d, sc.pe.window))
        .collect();

    let order_minimal = sc.order.is_minimal_for(&sc.disturbance);
    let mut row = vec![0.0f64; trace.columns.len()];

    for k in 0..=n_steps {
        let t = k as f64 * h;
        let e = eval_estimates(t, &z)?;
        let truth_sample = setup.truth.eval(t, setup.chain_depth);
        let d_true = truth_sample.d().clone();
        let rho_true = if order_minimal {
            truth_sample.rho.clone()
        } else {
            setup.padded_rho(t)
        };

        let est = deriv_chain::chain(blocks, &e.rho_hat, &e.d_hat, &e.theta, setup.chain_depth)
            .map_err(|er| at(t, er))?;

        // feed identifier and excitation windows at every step
        if let Some(w) = ident.as_mut() {
            let samples: Vec<(DVector<f64>, DVector<f64>)> = (0..n2)
                .map(|i| {
                    let dims = chan_dims[i];
                    let deltas: Vec<f64> = (0..dims).map(|kk| est.delta[kk][i]).collect();
                    freq_id::assemble_upsilon_hat(e.d_hat[i], &deltas)
                })
                .collect::<Result<_, _>>()
                .map_err(|er| at(t, er))?;
            w.update(t, &samples).map_err(|er| at(t, er))?;
        }
        for (i, g) in pe_grams.iter_mut().enumerate() {
            let range = blocks.channel_range(i);
            g.push(t, e.rho_hat.rows(range.start, range.len()).into_owned());
        }

        // --- assemble the row ---
        let decimated = k % sc.decimate == 0;
        let mut c = 0usize;
        let put = |row: &mut [f64], v: f64, c: &mut usize| {
            row[*c] = v;
            *c += 1;
        };
        put(&mut row, t, &mut c);
        for v in [e.st.q[0], e.st.q[1], e.st.q_dot[0], e.st.q_dot[1]] {
            put(&mut row, v, &mut c);
        }
        for v in [e.st.xi1[0], e.st.xi1[1], e.st.xi2[0], e.st.xi2[1]] {
            put(&mut row, v, &mut c);
        }
        let r = plant::reference(t);
        put(&mut row, r.q_d[0], &mut c);
        put(&mut row, r.q_d[1], &mut c);
        put(&mut row, e.ctrl.tau[0], &mut c);
        put(&mut row, e.ctrl.tau[1], &mut c);
        put(&mut row, e.ctrl.s[0], &mut c);
        put(&mut row, e.ctrl.s[1], &mut c);
        for i in 0..4 {
            put(&mut row, e.ctrl.xi_tilde[i], &mut c);
        }
        for i in 0..rbar {
            put(&mut row, rho_true[i], &mut c);
        }
        for i in 0..rbar {
            put(&mut row, e.rho_hat[i], &mut c);
        }
        put(&mut row, d_true[0], &mut c);
        put(&mut row, d_true[1], &mut c);
        put(&mut row, e.d_hat[0], &mut c);
        put(&mut row, e.d_hat[1], &mut c);
        let mut d0_err = 0.0f64;
        if known_freq {
            let d0 = internal_model::d0_hat(&blocks.psi, &e.rho_hat);
            put(&mut row, d0[0], &mut c);
            put(&mut row, d0[1], &mut c);
            d0_err = (0..n2).fold(0.0f64, |m, i| m.max((d0[i] - d_true[i]).abs()));
        }
        put(&mut row, e.x2_hat[0], &mut c);
        put(&mut row, e.x2_hat[1], &mut c);
        for i in 0..rbar {
            put(&mut row, e.theta[i], &mut c);
        }
        for kk in 0..setup.chain_depth {
            for i in 0..n2 {
                put(&mut row, est.delta[kk][i], &mut c);
            }
        }
        if let Some(w) = ident.as_ref() {
            for (i, freqs) in setup.true_freqs.iter().enumerate() {
                let est_freqs = if decimated {
                    w.estimate(i, sc.freq_id.cond_max, blocks.channels[i].has_constant)
                        .ok()
                } else {
                    None
                };
                for j in 0..freqs.len() {
                    let v = est_freqs
                        .as_ref()
                        .and_then(|fe| fe.omega_hat.get(j).copied())
                        .unwrap_or(f64::NAN);
                    put(&mut row, v, &mut c);
                }
            }
        }
        for g in &pe_grams {
            let v = if decimated {
                g.min_eig().unwrap_or(f64::NAN)
            } else {
                f64::NAN
            };
            put(&mut row, v, &mut c);
        }

        // Lyapunov diagnostics
        let s_vec = e.ctrl.s;
        let terms = plant::manipulator_terms(&e.st.q, &e.st.q_dot);
        let xt = e.ctrl.xi_tilde;
        let xt_v = DVector::from_row_slice(&[xt[0], xt[1], xt[2], xt[3]]);
        let v_track = 0.5 * (s_vec.transpose() * terms.h * s_vec)[0]
            + setup.c1 * (xt_v.transpose() * &setup.p_c * &xt_v)[0];
        put(&mut row, v_track, &mut c);
        let x2_err = DVector::from_fn(n2, |i, _| e.x2_hat[i] - z[6 + i]);
        let th_err = &e.theta - &setup.c_psi;
        let v_obs = (x2_err.transpose() * &setup.obs_gains.p * &x2_err)[0]
            + (th_err.transpose() * setup.obs_gains.lambda_inv() * &th_err)[0];
        put(&mut row, v_obs, &mut c);

        // error norms (sup over components)
        let inf = |v: &DVector<f64>| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        put(&mut row, (e.st.q - r.q_d).abs().max(), &mut c);
        put(&mut row, (e.st.q_dot - r.q_d1).abs().max(), &mut c);
        put(&mut row, inf(&x2_err), &mut c);
        let d_err = DVector::from_fn(n2, |i, _| e.d_hat[i] - d_true[i]);
        put(&mut row, inf(&d_err), &mut c);
        put(&mut row, inf(&th_err), &mut c);
        let rho_err = &e.rho_hat - &rho_true;
        put(&mut row, inf(&rho_err), &mut c);
        if known_freq {
            put(&mut row, d0_err, &mut c);
        }
        if setup.chain_depth >= 1 {
            let e1 = (0..n2).fold(0.0f64, |m, i| {
                m.max((est.delta[0][i] - truth_sample.derivs[1][i]).abs())
            });
            put(&mut row, e1, &mut c);
        }
        if setup.chain_depth >= 2 {
            let e2 = (0..n2).fold(0.0f64, |m, i| {
                m.max((est.delta[1][i] - truth_sample.derivs[2][i]).abs())
            });
            put(&mut row, e2, &mut c);
        }
        if let Some(w) = ident.as_ref() {
            for (i, freqs) in setup.true_freqs.iter().enumerate() {
                let est_freqs = if decimated {
                    w.estimate(i, sc.freq_id.cond_max, blocks.channels[i].has_constant)
                        .ok()
                } else {
                    None
                };
                for (j, &wtrue) in freqs.iter().enumerate() {
                    let v = est_freqs
                        .as_ref()
                        .and_then(|fe| fe.omega_hat.get(j).copied())
                        .map(|we| (we - wtrue).abs())
                        .unwrap_or(f64::NAN);
                    put(&mut row, v, &mut c);
                }
            }
        }
        debug_assert_eq!(c, trace.columns.len());
        trace.push_row(&row);

        if k < n_steps {
            z = rk4_step(&rhs, t, &z, h)?;
        }
    }

    Ok(trace)
}

struct Estimates {
    st: PlantState,
    eta: DVector<f64>,
    x2_hat: DVector<f64>,
    theta: DVector<f64>,
    rho_hat: DVector<f64>,
    d_hat: DVector<f64>,
    ctrl: plant::ControlOutput,
}

/// Persistence-of-excitation summary of the recorded exosystem-state
/// estimate, per channel, computed over the trailing half of the run.
pub fn pe_of_rho_hat(
    trace: &SimTrace,
    setup: &SimSetup,
) -> Result<Vec<exosystem::PeWindowReport>, SimError> {
    let sc = &setup.scenario;
    let names: Vec<String> = (1..=setup.blocks.total_dim())
        .map(|i| format!("rhohat_{i}"))
        .collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let all = trace.vector_series(&name_refs);
    let start = all.len() / 2;
    let mut out = Vec::new();
    for i in 0..setup.blocks.n_channels() {
        let range = setup.blocks.channel_range(i);
        let samples: Vec<DVector<f64>> = all[start..]
            .iter()
            .map(|v| v.rows(range.start, range.len()).into_owned())
            .collect();
        out.push(exosystem::is_pe_window(
            &samples,
            trace.step,
            sc.pe.window,
            sc.pe.alpha,
        )?);
    }
    Ok(out)
}
