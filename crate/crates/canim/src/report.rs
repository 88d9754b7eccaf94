//! Convergence metrics extracted from a trace, and the JSON report
//! emitted next to it.

use serde::Serialize;
use std::collections::BTreeMap;

use crate::exosystem::{ExoError, PeWindowReport};
use crate::sim::{Scenario, SimError, SimTrace};

/// Values below this are treated as numerical noise and excluded from
/// log-slope fits.
pub const NOISE_FLOOR: f64 = 1e-9;

/// Default threshold used for the `settled_at` diagnostic.
pub const SETTLE_THRESHOLD: f64 = 1e-2;

/// Convergence summary of one error signal.
#[derive(Debug, Clone, Serialize)]
pub struct SignalReport {
    /// Sup of the signal over the trailing window.
    pub final_window_error: f64,
    /// Least-squares slope of `ln |e|` over the mid-run fit window,
    /// ignoring samples at the noise floor; `None` when too few
    /// samples qualify.
    pub fitted_log_slope: Option<f64>,
    /// First time after which the signal never exceeds
    /// [`SETTLE_THRESHOLD`]; `None` means never.
    pub settled_at: Option<f64>,
}

/// Per-signal convergence reports keyed by trace column name.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub window_fraction: f64,
    pub signals: BTreeMap<String, SignalReport>,
}

impl ConvergenceReport {
    pub fn get(&self, name: &str) -> &SignalReport {
        self.signals
            .get(name)
            .unwrap_or_else(|| panic!("no signal named {name} in report"))
    }
}

/// Least-squares slope of `ln(values)` against time, using only
/// samples above `floor`. Returns `None` with fewer than two usable
/// samples.
pub fn fit_log_slope(times: &[f64], values: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v.is_finite() && v > floor)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < f64::EPSILON * (1.0 + sxx.abs()) {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Summarizes one sampled error signal.
pub fn analyze_series(times: &[f64], values: &[f64], window_fraction: f64) -> SignalReport {
    let n = values.len();
    let tail = ((n as f64) * window_fraction).ceil() as usize;
    let tail_start = n.saturating_sub(tail.max(1));
    let final_window_error = values[tail_start..]
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, &v| m.max(v.abs()));

    // mid-run fit window [0.2, 0.8] of the horizon
    let t_end = *times.last().unwrap_or(&0.0);
    let fit: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(&t, _)| t >= 0.2 * t_end && t <= 0.8 * t_end)
        .map(|(&t, &v)| (t, v))
        .collect();
    let fit_t: Vec<f64> = fit.iter().map(|p| p.0).collect();
    let fit_v: Vec<f64> = fit.iter().map(|p| p.1.abs()).collect();
    let fitted_log_slope = fit_log_slope(&fit_t, &fit_v, NOISE_FLOOR);

    // earliest time after which the signal stays below threshold
    let mut settled_at = None;
    for k in (0..n).rev() {
        let v = values[k];
        if v.is_finite() && v.abs() > SETTLE_THRESHOLD {
            break;
        }
        settled_at = Some(times[k]);
    }

    SignalReport {
        final_window_error,
        fitted_log_slope,
        settled_at,
    }
}

/// Summarizes every `err_*` column of the trace.
pub fn analyze(trace: &SimTrace, window_fraction: f64) -> Result<ConvergenceReport, SimError> {
    if trace.n_rows == 0 {
        return Err(SimError::EmptyTrace);
    }
    assert!(
        window_fraction > 0.0 && window_fraction < 0.5,
        "window_fraction must sit in (0, 0.5)"
    );
    let times = trace.times();
    let mut signals = BTreeMap::new();
    for name in trace.columns.iter().filter(|c| c.starts_with("err_")) {
        let values = trace.series(name);
        signals.insert(name.clone(), analyze_series(&times, &values, window_fraction));
    }
    Ok(ConvergenceReport {
        window_fraction,
        signals,
    })
}

/// Per-channel frequency summary included in the run report.
#[derive(Debug, Clone, Serialize)]
pub struct FreqReportEntry {
    pub channel: usize,
    pub omega_true: Vec<f64>,
    pub omega_hat_final: Vec<Option<f64>>,
}

/// The JSON document written next to each trace. Field order is the
/// struct order, so byte-identical runs produce byte-identical
/// reports.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub trace_sha256: String,
    pub trace_rows_exported: usize,
    pub metrics: ConvergenceReport,
    /// `None` when the run is too short to fill an excitation window.
    pub pe_rho_hat: Vec<Option<PeWindowReport>>,
    pub frequencies: Vec<FreqReportEntry>,
}

/// Builds the full report for a finished run.
pub fn build_report(
    scenario: &Scenario,
    setup: &crate::sim::SimSetup,
    trace: &SimTrace,
) -> Result<RunReport, SimError> {
    let csv = trace.csv_bytes();
    let digest = {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(&csv);
        format!("{:x}", h.finalize())
    };
    let metrics = analyze(trace, 0.1)?;
    let n2 = setup.blocks.n_channels();
    let pe = match crate::sim::pe_of_rho_hat(trace, setup) {
        Ok(v) => v.into_iter().map(Some).collect(),
        Err(SimError::Exo(ExoError::WindowTooShort)) => vec![None; n2],
        Err(e) => return Err(e),
    };

    let mut frequencies = Vec::new();
    for (i, freqs) in setup.true_freqs.iter().enumerate() {
        if freqs.is_empty() {
            continue;
        }
        let mut finals = Vec::new();
        for j in 0..freqs.len() {
            let col = format!("omegahat_{}_{}", i + 1, j + 1);
            let value = trace.col_index(&col).and_then(|_| {
                trace
                    .series(&col)
                    .iter()
                    .rev()
                    .find(|v| v.is_finite())
                    .copied()
            });
            finals.push(value);
        }
        frequencies.push(FreqReportEntry {
            channel: i + 1,
            omega_true: freqs.clone(),
            omega_hat_final: finals,
        });
    }

    Ok(RunReport {
        scenario: scenario.clone(),
        seed: scenario.seed,
        trace_sha256: digest,
        trace_rows_exported: trace.n_rows.div_ceil(trace.decimate),
        metrics,
        pe_rho_hat: pe,
        frequencies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_exponential() {
        let times: Vec<f64> = (0..500).map(|k| k as f64 * 0.01).collect();
        let values: Vec<f64> = times.iter().map(|t| (-2.0 * t).exp()).collect();
        let slope = fit_log_slope(&times, &values, NOISE_FLOOR).unwrap();
        assert!((slope + 2.0).abs() < 0.01, "slope {slope}");
    }

    #[test]
    fn slope_of_constant_and_growing_signals() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let constant: Vec<f64> = times.iter().map(|_| 0.5).collect();
        let slope = fit_log_slope(&times, &constant, NOISE_FLOOR).unwrap();
        assert!(slope.abs() < 1e-12);

        let growing: Vec<f64> = times.iter().map(|t| (0.5 * t).exp()).collect();
        let rep = analyze_series(&times, &growing, 0.2);
        assert!(rep.fitted_log_slope.unwrap() > 0.0);
        assert!(rep.settled_at.is_none());
    }

    #[test]
    fn settle_detection() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let values: Vec<f64> = (0..100)
            .map(|k| if k < 40 { 1.0 } else { 1e-4 })
            .collect();
        let rep = analyze_series(&times, &values, 0.1);
        assert_eq!(rep.settled_at, Some(40.0));
        assert!(rep.final_window_error <= 1e-4);
    }

    #[test]
    fn floor_excludes_noise_samples() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.5).collect();
        // decays to the floor halfway through, then flat noise
        let values: Vec<f64> = times
            .iter()
            .map(|&t| ((-1.0 * t).exp()).max(1e-12))
            .collect();
        let slope = fit_log_slope(&times, &values, NOISE_FLOOR).unwrap();
        assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
    }
}
