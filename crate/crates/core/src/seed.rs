//! Seed derivation.
//!
//! A single master seed is expanded into independent per-subsystem seeds with
//! the splitmix64 finalizer: `derive(master, stream, index)` mixes the stream tag
//! and index into the master state and returns one splitmix64 output.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// One splitmix64 step applied to `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Named seed streams used by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    InitialField = 1,
    TrainingScenario = 2,
    HoldoutScenario = 3,
    Evolution = 4,
    Surrogate = 5,
}

pub fn derive(master: u64, stream: Stream, index: u64) -> u64 {
    let s = splitmix64(master ^ splitmix64(stream as u64));
    splitmix64(s ^ splitmix64(index.wrapping_mul(GOLDEN)))
}
