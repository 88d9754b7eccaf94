//! Acceptance suite: one test per quantitative claim the artifact
//! makes. Each test prints a PASS line with its measured numbers
//! (visible under `cargo test --test acceptance -- --nocapture`).

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use canim::exosystem::{zeroing_coeffs, ChannelOrder, ModelOrder};
use canim::freq_id::assemble_upsilon_hat;
use canim::matkit::{self, Mat};
use canim::observer::regressor;
use canim::report::analyze;
use canim::sim::{run_with_setup, ImKind, MatConfig, Mode, Scenario, SimSetup};

fn pass(criterion: &str, details: &str) {
    println!("[acceptance] {criterion}: PASS — {details}");
}

#[test]
fn criterion_01_sylvester_lyapunov_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_resid = 0.0f64;
    let mut min_det = f64::INFINITY;
    for _ in 0..100 {
        // random oscillator frequencies keep phi's spectrum on the
        // imaginary axis, disjoint from any Hurwitz spectrum
        let n_modes = rng.gen_range(1..=3usize);
        let has_constant = rng.gen_bool(0.5);
        let mut freqs: Vec<f64> = Vec::new();
        while freqs.len() < n_modes {
            let w = rng.gen_range(0.3..8.0);
            if freqs.iter().all(|&v: &f64| (v - w).abs() > 0.05) {
                freqs.push(w);
            }
        }
        let beta = zeroing_coeffs(&freqs, has_constant).unwrap();
        let r = beta.len();
        let phi = matkit::companion_bottom_row(&beta);
        let spectrum: Vec<f64> = (0..r).map(|_| -rng.gen_range(0.3..6.0)).collect();
        let m = matkit::companion_from_real_spectrum(&spectrum);
        let mut n = Mat::zeros(r, 1);
        n[(r - 1, 0)] = 1.0;
        let mut gamma = Mat::zeros(1, r);
        gamma[(0, 0)] = 1.0;

        let t = matkit::solve_sylvester(&phi, &m, &n, &gamma).unwrap();
        let resid = (&t * &phi - &m * &t - &n * &gamma).norm();
        let bound = 1e-10 * (&n * &gamma).norm().max(1.0);
        assert!(resid <= bound, "residual {resid:.3e} exceeds {bound:.3e} at r = {r}");
        worst_resid = worst_resid.max(resid);
        assert!(
            t.clone().try_inverse().is_some(),
            "solution not invertible at r = {r}"
        );
        min_det = min_det.min(t.determinant().abs());
    }

    // nonsingularity with margin is asserted on the benchmark blocks
    let bench = SimSetup::build(&Scenario::benchmark(Mode::TrackAndReject)).unwrap();
    for ch in &bench.blocks.channels {
        let det = ch.t.determinant().abs();
        assert!(det > 1e-12, "benchmark block determinant {det:.3e}");
    }

    let p = matkit::solve_lyapunov(&(Mat::identity(2, 2) * -10.0), &Mat::identity(2, 2)).unwrap();
    let ref_err = (p - Mat::identity(2, 2) * 0.05).norm();
    assert!(ref_err <= 1e-13, "reference pair reproduced to {ref_err:.3e}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "runtime {elapsed:.2}s exceeds 1s");
    pass(
        "criterion 1 (sylvester/lyapunov exactness)",
        &format!("worst residual {worst_resid:.2e}, min |det T| {min_det:.2e}, reference pair error {ref_err:.1e}, {elapsed:.2}s"),
    );
}

#[test]
fn criterion_02_internal_model_autonomy() {
    let start = Instant::now();
    let mut sc = Scenario::benchmark(Mode::ObserveOnly);
    sc.t_end = 20.0;
    let setup = SimSetup::build(&sc).unwrap();
    let trace = run_with_setup(&setup).unwrap();

    let rbar = setup.blocks.total_dim();
    let rho_names: Vec<String> = (1..=rbar).map(|i| format!("rho_{i}")).collect();
    let rhohat_names: Vec<String> = (1..=rbar).map(|i| format!("rhohat_{i}")).collect();
    let rho = trace.vector_series(&rho_names.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    let rho_hat =
        trace.vector_series(&rhohat_names.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    let eta0: DVector<f64> = &rho_hat[0] - &rho[0];

    let h = trace.step;
    let mut worst = 0.0f64;
    for k in 0..trace.n_rows {
        let t = k as f64 * h;
        let propagated = matkit::expm(&(&setup.blocks.m * t)) * &eta0;
        let err = ((&rho_hat[k] - &rho[k]) - propagated).norm();
        let bound = 1e-6 + 5.0 * h.powi(4) * t;
        assert!(
            err <= bound,
            "autonomy violated at t = {t}: {err:.3e} > {bound:.3e}"
        );
        worst = worst.max(err);
    }

    let rep = analyze(&trace, 0.1).unwrap();
    let slope = rep.get("err_rhohat").fitted_log_slope.expect("slope fit");
    assert!(
        (-1.2..=-0.8).contains(&slope),
        "decay slope {slope:.3} outside 20% of -1"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed:.1}s exceeds 30s");
    pass(
        "criterion 2 (internal-model autonomy)",
        &format!("max deviation from matrix-exponential flow {worst:.2e}, decay slope {slope:.3}, {elapsed:.1}s"),
    );
}

#[test]
fn criterion_03_known_frequency_estimator() {
    let start = Instant::now();
    let mut sc = Scenario::benchmark(Mode::KnownFrequency);
    sc.t_end = 60.0;
    let trace = canim::sim::run_scenario(&sc).unwrap();
    let rep = analyze(&trace, 0.1).unwrap();
    let sig = rep.get("err_d0hat");
    assert!(
        sig.final_window_error < 1e-6,
        "final-window error {:.3e}",
        sig.final_window_error
    );
    let slope = sig.fitted_log_slope.expect("slope fit");
    assert!(slope < 0.0, "slope {slope:.3} not negative");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed:.1}s exceeds 30s");
    pass(
        "criterion 3 (known-frequency estimator)",
        &format!(
            "final-window error {:.2e}, slope {slope:.3}, {elapsed:.1}s",
            sig.final_window_error
        ),
    );
}

#[test]
fn criterion_04_adaptive_observer_under_pe() {
    let start = Instant::now();
    let sc = Scenario::benchmark(Mode::TrackAndReject);
    assert_eq!(sc.t_end, 200.0);
    let setup = SimSetup::build(&sc).unwrap();
    let trace = run_with_setup(&setup).unwrap();
    let rep = analyze(&trace, 0.1).unwrap();

    let x2 = rep.get("err_x2hat");
    let dh = rep.get("err_dhat");
    let th = rep.get("err_theta");
    assert!(x2.final_window_error < 1e-3, "x2hat error {:.3e}", x2.final_window_error);
    assert!(dh.final_window_error < 1e-2, "dhat error {:.3e}", dh.final_window_error);
    assert!(th.final_window_error < 1e-2, "theta error {:.3e}", th.final_window_error);
    for (name, sig) in [("x2hat", x2), ("dhat", dh), ("theta", th)] {
        let slope = sig.fitted_log_slope.unwrap_or(0.0);
        assert!(slope < -0.05, "{name} slope {slope:.3} not decisively negative");
    }

    // excitation of the estimated exosystem state confirms the regime
    let pe = canim::sim::pe_of_rho_hat(&trace, &setup).unwrap();
    assert!(pe.iter().all(|p| p.satisfied), "expected both channels excited");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 60s");
    pass(
        "criterion 4 (adaptive observer under excitation)",
        &format!(
            "final errors: x2hat {:.2e}, dhat {:.2e}, theta {:.2e}; slopes {:.2}/{:.2}/{:.2}; {elapsed:.1}s",
            x2.final_window_error,
            dh.final_window_error,
            th.final_window_error,
            x2.fitted_log_slope.unwrap(),
            dh.fitted_log_slope.unwrap(),
            th.fitted_log_slope.unwrap()
        ),
    );
}

fn overmodeled_scenario() -> Scenario {
    let mut sc = Scenario::benchmark(Mode::TrackAndReject);
    sc.order = ModelOrder {
        channels: vec![
            ChannelOrder { dim: 3, has_constant: true },
            ChannelOrder { dim: 4, has_constant: false },
        ],
    };
    sc.m_spectra = Some(vec![vec![-1.0, -2.0, -3.0], vec![-1.0, -2.0, -3.0, -4.0]]);
    sc.observer.lambda = MatConfig::Diag(vec![3e3, 1.8e6, 1.8e6, 1e6, 1e6, 1e6, 1e6]);
    sc
}

#[test]
fn criterion_05_no_pe_asymptotic_convergence() {
    let start = Instant::now();
    let sc = overmodeled_scenario();
    let setup = SimSetup::build(&sc).unwrap();
    let trace = run_with_setup(&setup).unwrap();
    let rep = analyze(&trace, 0.1).unwrap();

    let dh = rep.get("err_dhat");
    assert!(dh.final_window_error < 1e-2, "dhat error {:.3e}", dh.final_window_error);
    // deliberately no assertion on theta: the overmodeled channel has
    // no persistence of excitation and the parameters need not settle.
    let theta_final = rep.get("err_theta").final_window_error;

    let pe = canim::sim::pe_of_rho_hat(&trace, &setup).unwrap();
    assert!(
        pe[1].pe_metric < 1e-4,
        "overmodeled channel should have lost excitation, metric {:.3e}",
        pe[1].pe_metric
    );

    let elapsed = start.elapsed().as_secs_f64();
    pass(
        "criterion 5 (asymptotic convergence without excitation)",
        &format!(
            "dhat final {:.2e} while theta sits at {theta_final:.2e}; channel-2 excitation metric {:.2e}; {elapsed:.1}s",
            dh.final_window_error, pe[1].pe_metric
        ),
    );
}

#[test]
fn criterion_06_derivative_chain() {
    let start = Instant::now();
    let sc = Scenario::benchmark(Mode::TrackAndReject);
    let trace = canim::sim::run_scenario(&sc).unwrap();
    let rep = analyze(&trace, 0.1).unwrap();

    // scale each bound by the largest true derivative magnitude
    let max_d1 = sc
        .disturbance
        .channels
        .iter()
        .flat_map(|ch| ch.modes.iter().map(|m| m.amplitude.abs() * m.frequency))
        .fold(0.0f64, f64::max);
    let max_d2 = sc
        .disturbance
        .channels
        .iter()
        .flat_map(|ch| ch.modes.iter().map(|m| m.amplitude.abs() * m.frequency * m.frequency))
        .fold(0.0f64, f64::max);

    let e1 = rep.get("err_delta1").final_window_error;
    let e2 = rep.get("err_delta2").final_window_error;
    assert!(e1 / max_d1 < 1e-2, "delta1 relative error {:.3e}", e1 / max_d1);
    assert!(e2 / max_d2 < 1e-2, "delta2 relative error {:.3e}", e2 / max_d2);

    let elapsed = start.elapsed().as_secs_f64();
    pass(
        "criterion 6 (derivative chain)",
        &format!(
            "relative final errors: first derivative {:.2e}, second {:.2e}; {elapsed:.1}s",
            e1 / max_d1,
            e2 / max_d2
        ),
    );
}

#[test]
fn criterion_07_frequency_identification() {
    let start = Instant::now();
    let sc = Scenario::benchmark(Mode::FreqId);
    let setup = SimSetup::build(&sc).unwrap();
    let trace = run_with_setup(&setup).unwrap();

    // estimates are computed at export resolution; all of them past
    // t = 150 must exist and sit within 1e-2 of the true frequencies
    let times = trace.times();
    let mut worst = [0.0f64; 2];
    for (ch, truth) in [(1usize, 1.0f64), (2usize, 2.0f64)] {
        let col = format!("omegahat_{ch}_1");
        let vals = trace.series(&col);
        for k in (0..trace.n_rows).step_by(trace.decimate) {
            if times[k] >= 150.0 {
                let v = vals[k];
                assert!(v.is_finite(), "estimate missing at t = {}", times[k]);
                let err = (v - truth).abs();
                assert!(err < 1e-2, "channel {ch} error {err:.3e} at t = {}", times[k]);
                worst[ch - 1] = worst[ch - 1].max(err);
            }
        }
    }

    // replay the tail of the run into a fresh window to inspect the
    // cluster structure the estimates came from
    let dims = [3usize, 2usize];
    let mut w = canim::freq_id::FreqIdWindow::new(&dims, sc.freq_id.t1);
    for k in 0..trace.n_rows {
        let t = times[k];
        if t < 155.0 {
            continue;
        }
        let samples: Vec<(DVector<f64>, DVector<f64>)> = (0..2)
            .map(|i| {
                let deltas: Vec<f64> = (1..=dims[i])
                    .map(|kk| trace.value(k, &format!("delta{kk}_{}", i + 1)))
                    .collect();
                assemble_upsilon_hat(trace.value(k, &format!("dhat_{}", i + 1)), &deltas).unwrap()
            })
            .collect();
        w.update(t, &samples).unwrap();
    }
    // cluster radius from the true spectra: half the smallest squared
    // frequency (no distinct pairs to separate here)
    for (i, (true_omega2, delta)) in [(1.0f64, 0.5f64), (4.0, 2.0)].iter().enumerate() {
        let est = w
            .estimate(i, sc.freq_id.cond_max, i == 0)
            .expect("identifier ready at end of run");
        assert_eq!(est.omega_hat.len(), 1, "one cluster per channel");
        assert_eq!(est.constant_mode_present, i == 0, "zero mode on channel 1 only");
        let mean = est.omega_hat[0] * est.omega_hat[0];
        let half_gap = est.cluster_gaps[0] * 0.5;
        // exactly two members, both inside the disk around the true
        // squared frequency
        assert!(
            (mean - true_omega2).abs() + half_gap < *delta,
            "cluster {i} not contained in its disk: mean {mean:.4}, spread {half_gap:.2e}"
        );
        assert!(est.max_imag <= 1e-9, "cluster mean has imaginary part {:.2e}", est.max_imag);
        assert!(!est.clamped);
    }

    let elapsed = start.elapsed().as_secs_f64();
    pass(
        "criterion 7 (frequency identification)",
        &format!(
            "worst late errors: channel 1 {:.2e}, channel 2 {:.2e}; clusters tight and real; {elapsed:.1}s",
            worst[0], worst[1]
        ),
    );
}

#[test]
fn criterion_08_tracking_and_rejection() {
    let start = Instant::now();
    let mut worst_q = 0.0f64;
    let mut worst_dq = 0.0f64;
    for seed in 1..=20u64 {
        let mut sc = Scenario::benchmark(Mode::TrackAndReject);
        sc.seed = seed;
        let trace = canim::sim::run_scenario(&sc).unwrap();
        let rep = analyze(&trace, 0.1).unwrap();
        let q = rep.get("err_q").final_window_error;
        let dq = rep.get("err_dq").final_window_error;
        assert!(q < 1e-2, "seed {seed}: position error {q:.3e} rad");
        assert!(dq < 1e-2, "seed {seed}: velocity error {dq:.3e} rad/s");
        worst_q = worst_q.max(q);
        worst_dq = worst_dq.max(dq);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "runtime {elapsed:.1}s exceeds 5 minutes");
    pass(
        "criterion 8 (tracking and rejection, 20 seeds)",
        &format!("worst final-window errors: position {worst_q:.2e} rad, velocity {worst_dq:.2e} rad/s; {elapsed:.1}s"),
    );
}

#[test]
fn criterion_09_classical_compensator_fails() {
    let start = Instant::now();
    let mut sc = Scenario::benchmark(Mode::TrackAndReject);
    sc.internal_model = ImKind::ClassicalInput;
    let trace = canim::sim::run_scenario(&sc).unwrap();
    let rep = analyze(&trace, 0.1).unwrap();
    let rh = rep.get("err_rhohat").final_window_error;
    assert!(
        rh > 0.1,
        "classical compensator unexpectedly reconstructed the exosystem state: {rh:.3e}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    pass(
        "criterion 9 (classical compensator leaves a persistent error)",
        &format!("final-window exosystem-state error {rh:.2e} > 0.1; {elapsed:.1}s"),
    );
}

#[test]
fn criterion_10_algebraic_identity_suite() {
    let start = Instant::now();
    let sc = Scenario::benchmark(Mode::TrackAndReject);
    let setup = SimSetup::build(&sc).unwrap();
    let blocks = &setup.blocks;
    let c_psi = blocks.c_psi();
    let mut rng = ChaCha8Rng::seed_from_u64(707);

    let mut worst_psi = 0.0f64;
    for _ in 0..1000 {
        let v = DVector::from_fn(blocks.total_dim(), |_, _| rng.gen_range(-10.0..10.0));
        let lhs = &blocks.psi * &v;
        let rhs = regressor(blocks, &v).unwrap() * &c_psi;
        let err = (lhs - rhs).norm();
        assert!(err <= 1e-12, "output-map identity violated: {err:.3e}");
        worst_psi = worst_psi.max(err);
    }

    let mut worst_shift = 0.0f64;
    for _ in 0..1000 {
        let r = rng.gen_range(1..=4usize);
        let deltas: Vec<f64> = (0..r).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let d0 = rng.gen_range(-10.0..10.0);
        let (up, up_dot) = assemble_upsilon_hat(d0, &deltas).unwrap();
        for j in 0..r - 1 {
            let err = (up_dot[j] - up[j + 1]).abs();
            assert!(err <= 1e-12, "shift relation violated: {err:.3e}");
            worst_shift = worst_shift.max(err);
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "runtime {elapsed:.2}s exceeds 1s");
    pass(
        "criterion 10 (algebraic identity suite)",
        &format!("worst output-map residual {worst_psi:.2e}, worst shift residual {worst_shift:.2e}, {elapsed:.2}s"),
    );
}
