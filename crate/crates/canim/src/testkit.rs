//! Shared fixtures for the unit tests: the disturbance and designer
//! matrices of the manipulator benchmark.

use crate::exosystem::{
    build_exo_blocks, ChannelSpec, DisturbanceSpec, ExoBlocks, ModelOrder, SineMode, TruthModel,
};

/// Channel 1 carries a unit offset plus a 1 rad/s sinusoid, channel 2
/// a 2 rad/s sinusoid; amplitudes and phases 0.1*i.
pub(crate) fn bench_spec() -> DisturbanceSpec {
    DisturbanceSpec {
        channels: vec![
            ChannelSpec {
                offset: 1.0,
                modes: vec![SineMode {
                    amplitude: 0.1,
                    frequency: 1.0,
                    phase: 0.1,
                }],
            },
            ChannelSpec {
                offset: 0.0,
                modes: vec![SineMode {
                    amplitude: 0.2,
                    frequency: 2.0,
                    phase: 0.2,
                }],
            },
        ],
    }
}

/// Minimal-order blocks with the benchmark designer spectra
/// ({-1,-2,-3} and {-1,-1}).
pub(crate) fn bench_blocks() -> ExoBlocks {
    let spec = bench_spec();
    let order = ModelOrder::minimal(&spec);
    build_exo_blocks(&spec, &order, &[vec![-1.0, -2.0, -3.0], vec![-1.0, -1.0]]).unwrap()
}

pub(crate) fn bench_truth() -> TruthModel {
    TruthModel::new(bench_spec(), bench_blocks())
}
