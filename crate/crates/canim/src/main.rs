//! Command-line front end: load a scenario, run it, and emit the
//! trace, report, and optional charts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use canim::plant;
use canim::plot::{self, Series};
use canim::report::build_report;
use canim::sim::{run_with_setup, Scenario, SimSetup, SimTrace};

#[derive(Parser)]
#[command(
    name = "canim",
    version,
    about = "Adaptive disturbance observer testbed: estimation, rejection, and frequency identification on a flexible-joint manipulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimation stack without disturbance feedforward.
    /// Keeps a `known_frequency` mode from the config; otherwise
    /// forces `observe_only`.
    Observe(RunArgs),
    /// Closed-loop tracking with adaptive rejection. Keeps a
    /// `freq_id` mode from the config; otherwise forces
    /// `track_and_reject`.
    Track(RunArgs),
    /// Tracking plus the online frequency identifier.
    FreqId(RunArgs),
    /// Run the scenario exactly as configured.
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to $CANIM_OUT_DIR, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a scenario key, e.g. --set t_end=100 or
    /// --set observer.lambda=500. Applied after the subcommand's mode
    /// selection, so --set mode=... always wins. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write SVG charts and gnuplot-style .dat files.
    #[arg(long)]
    plot: bool,
}

enum CliError {
    /// Bad configuration: exit code 2, message names the offender.
    Config(String),
    /// Failure during simulation or output: exit code 1.
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, forced) = match &cli.command {
        Command::Observe(a) => (a, Some(ModeFamily::Observe)),
        Command::Track(a) => (a, Some(ModeFamily::Track)),
        Command::FreqId(a) => (a, Some(ModeFamily::FreqId)),
        Command::Report(a) => (a, None),
    };
    match run(args, forced) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

enum ModeFamily {
    Observe,
    Track,
    FreqId,
}

fn run(args: &RunArgs, family: Option<ModeFamily>) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        CliError::Config(format!("config: cannot read {}: {e}", args.config.display()))
    })?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config: invalid JSON: {e}")))?;

    if let Some(family) = family {
        let current = value.get("mode").and_then(|m| m.as_str()).unwrap_or("");
        let target = match family {
            ModeFamily::Observe if current == "known_frequency" => "known_frequency",
            ModeFamily::Observe => "observe_only",
            ModeFamily::Track if current == "freq_id" => "freq_id",
            ModeFamily::Track => "track_and_reject",
            ModeFamily::FreqId => "freq_id",
        };
        value["mode"] = serde_json::Value::String(target.into());
    }

    for ov in &args.overrides {
        apply_override(&mut value, ov)?;
    }

    let scenario: Scenario = serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("config: {e}")))?;
    scenario
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    for warning in scenario.disturbance.conditioning_warnings() {
        eprintln!("warning: {warning}");
    }

    let setup = SimSetup::build(&scenario).map_err(|e| CliError::Config(e.to_string()))?;
    let trace = run_with_setup(&setup).map_err(|e| CliError::Runtime(e.to_string()))?;
    let report = build_report(&scenario, &setup, &trace)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let out_dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os("CANIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;

    let trace_path = out_dir.join("trace.csv");
    fs::write(&trace_path, trace.csv_bytes())
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", trace_path.display())))?;

    let report_path = out_dir.join("report.json");
    let mut report_bytes =
        serde_json::to_vec_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    report_bytes.push(b'\n');
    fs::write(&report_path, report_bytes)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", report_path.display())))?;

    if args.plot {
        write_figures(&out_dir, &setup, &trace).map_err(|e| CliError::Runtime(e.to_string()))?;
    }

    println!(
        "wrote {} and {}{}",
        trace_path.display(),
        report_path.display(),
        if args.plot {
            format!(" plus figures in {}", out_dir.display())
        } else {
            String::new()
        }
    );
    Ok(())
}

/// Sets `key=value` inside the scenario JSON; `key` uses dots for
/// nesting. The value is parsed as JSON when possible, else taken as a
/// string.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {spec}: expected KEY=VALUE")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("--set {key}: {} is not an object", parts[..i].join(".")))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

/// Writes the standard set of error charts (and `.dat` twins): state
/// estimate, disturbance estimate, parameter, frequency, position, and
/// velocity errors, plus the direct known-frequency estimate when the
/// mode records one.
type Figure = (String, String, Vec<(String, Vec<f64>)>);

fn write_figures(out_dir: &Path, setup: &SimSetup, trace: &SimTrace) -> std::io::Result<()> {
    // figures and .dat files follow the export decimation, like the CSV
    let pick = |full: Vec<f64>| -> Vec<f64> {
        full.into_iter().step_by(trace.decimate).collect()
    };
    let times = pick(trace.times());
    let mut figures: Vec<Figure> = Vec::new();

    let diff = |a: &str, b: &str| -> Vec<f64> {
        trace
            .series(a)
            .iter()
            .zip(trace.series(b))
            .map(|(x, y)| x - y)
            .step_by(trace.decimate)
            .collect()
    };

    figures.push((
        "x2hat_error".into(),
        "state estimation error".into(),
        (1..=2)
            .map(|i| {
                (
                    format!("x2hat_{i} - xi2_{i}"),
                    diff(&format!("x2hat_{i}"), &format!("xi2_{i}")),
                )
            })
            .collect(),
    ));
    figures.push((
        "dhat_error".into(),
        "disturbance estimation error".into(),
        (1..=2)
            .map(|i| {
                (
                    format!("dhat_{i} - d_{i}"),
                    diff(&format!("dhat_{i}"), &format!("d_{i}")),
                )
            })
            .collect(),
    ));
    let c_psi = &setup.c_psi;
    figures.push((
        "theta_error".into(),
        "parameter estimation error".into(),
        (1..=setup.blocks.total_dim())
            .map(|i| {
                let vals: Vec<f64> = trace
                    .series(&format!("theta_{i}"))
                    .iter()
                    .map(|v| v - c_psi[i - 1])
                    .step_by(trace.decimate)
                    .collect();
                (format!("theta_{i} - target"), vals)
            })
            .collect(),
    ));
    if trace.col_index("omegahat_1_1").is_some() {
        let mut curves = Vec::new();
        for (i, freqs) in setup.true_freqs.iter().enumerate() {
            for (j, &w) in freqs.iter().enumerate() {
                let col = format!("omegahat_{}_{}", i + 1, j + 1);
                let vals: Vec<f64> = trace
                    .series(&col)
                    .iter()
                    .map(|v| v - w)
                    .step_by(trace.decimate)
                    .collect();
                curves.push((format!("{col} - {w}"), vals));
            }
        }
        figures.push(("omega_error".into(), "frequency estimation error".into(), curves));
    }
    if trace.col_index("d0hat_1").is_some() {
        figures.push((
            "d0hat_error".into(),
            "known-frequency estimate error".into(),
            (1..=2)
                .map(|i| {
                    (
                        format!("d0hat_{i} - d_{i}"),
                        diff(&format!("d0hat_{i}"), &format!("d_{i}")),
                    )
                })
                .collect(),
        ));
    }
    figures.push((
        "position_error".into(),
        "position tracking error".into(),
        (1..=2)
            .map(|i| {
                (
                    format!("q_{i} - qd_{i}"),
                    diff(&format!("q_{i}"), &format!("qd_{i}")),
                )
            })
            .collect(),
    ));
    let qd1: Vec<[f64; 2]> = times
        .iter()
        .map(|&t| {
            let r = plant::reference(t);
            [r.q_d1[0], r.q_d1[1]]
        })
        .collect();
    figures.push((
        "velocity_error".into(),
        "velocity tracking error".into(),
        (1..=2)
            .map(|i| {
                let vals: Vec<f64> = pick(trace.series(&format!("dq_{i}")))
                    .iter()
                    .zip(&qd1)
                    .map(|(v, r)| v - r[i - 1])
                    .collect();
                (format!("dq_{i} - qd'_{i}"), vals)
            })
            .collect(),
    ));

    for (stem, title, curves) in &figures {
        let series: Vec<Series<'_>> = curves
            .iter()
            .map(|(label, vals)| Series {
                label: label.clone(),
                x: &times,
                y: vals,
            })
            .collect();
        let svg_path = out_dir.join(format!("{stem}.svg"));
        let mut f = std::io::BufWriter::new(fs::File::create(&svg_path)?);
        plot::line_chart(&mut f, title, "t [s]", title, &series)?;
        f.flush()?;
        let dat_path = out_dir.join(format!("{stem}.dat"));
        let mut f = std::io::BufWriter::new(fs::File::create(&dat_path)?);
        plot::write_dat(&mut f, "t", &series)?;
        f.flush()?;
    }
    Ok(())
}
