//! Derivation of independent per-trial seeds from one master seed.
//!
//! `derive(master, index)` runs the SplitMix64 output function over
//! `master + (index + 1) * GAMMA`. Distinct indices give statistically
//! independent 64-bit keys, and the mapping is stable across platforms and
//! releases. Nested derivations (`derive(derive(m, point), trial)`) give a
//! separate key per grid point and trial.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)))
}
