// regenerate the shipped scenario files from the in-code builders
use canim::exosystem::ModelOrder;
use canim::sim::{InitSpec, MatConfig, Mode, Scenario};

fn dump(sc: &Scenario, path: &str) {
    let mut text = serde_json::to_string_pretty(sc).unwrap();
    text.push('\n');
    std::fs::write(path, text).unwrap();
    println!("wrote {path}");
}

fn main() {
    std::fs::create_dir_all("scenarios").unwrap();

    // full benchmark: tracking + rejection + frequency identification
    let sc = Scenario::benchmark(Mode::FreqId);
    dump(&sc, "scenarios/benchmark.json");

    // estimation-only view of the same setup
    let mut sc = Scenario::benchmark(Mode::ObserveOnly);
    sc.t_end = 60.0;
    dump(&sc, "scenarios/benchmark_observe.json");

    // known-frequency direct estimate
    let mut sc = Scenario::benchmark(Mode::KnownFrequency);
    sc.t_end = 60.0;
    dump(&sc, "scenarios/benchmark_known_freq.json");

    // channel 2 deliberately overmodeled: asymptotic-only regime
    let mut sc = Scenario::benchmark(Mode::TrackAndReject);
    sc.order = ModelOrder {
        channels: vec![
            canim::exosystem::ChannelOrder { dim: 3, has_constant: true },
            canim::exosystem::ChannelOrder { dim: 4, has_constant: false },
        ],
    };
    sc.m_spectra = Some(vec![vec![-1.0, -2.0, -3.0], vec![-1.0, -2.0, -3.0, -4.0]]);
    sc.observer.lambda = MatConfig::Diag(vec![3e3, 1.8e6, 1.8e6, 1e6, 1e6, 1e6, 1e6]);
    dump(&sc, "scenarios/benchmark_overmodeled.json");

    // zero disturbance sanity scenario
    let mut sc = Scenario::benchmark(Mode::ObserveOnly);
    sc.disturbance = serde_json::from_value(serde_json::json!({
        "channels": [ { "offset": 0.0, "modes": [] }, { "offset": 0.0, "modes": [] } ]
    }))
    .unwrap();
    sc.order = ModelOrder::minimal(&sc.disturbance);
    sc.m_spectra = Some(vec![vec![-1.0], vec![-1.0]]);
    sc.observer.lambda = MatConfig::Scalar(500.0);
    sc.init = InitSpec::Zero;
    sc.t_end = 30.0;
    dump(&sc, "scenarios/zero.json");
}
