//! Shared fixtures for the benchmarks in `benches/`.

use qlink_core::fock::{tms_state, TruncatedState};
use qlink_core::scenario::preset;
use qlink_core::{Scenario, Simulator};

/// A bundled preset with its fringe scan shortened to `trials` per phase.
pub fn short_preset(name: &str, trials: u64) -> Scenario {
    let mut s = preset(name).expect("bundled preset");
    s.protocol.n_trials_per_theta = trials;
    s
}

pub fn simulator(name: &str, trials: u64) -> Simulator {
    Simulator::new(&short_preset(name, trials)).expect("valid preset")
}

/// Two independent two-mode squeezed sources, four modes in all.
pub fn two_sources(chi: f64, cutoff: usize) -> TruncatedState {
    let s = tms_state(chi, cutoff).expect("valid source");
    s.tensor(&s).expect("same cutoff")
}
