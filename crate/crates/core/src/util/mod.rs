//! Small numerical utilities shared by the math modules.

pub mod fit;
pub mod gauss;
pub mod integrate;
pub mod jet;

/// Deterministic sub-seed derivation (splitmix64 finalizer).
///
/// Parallel surveys seed each trial independently from `(seed, index)` so
/// results do not depend on thread scheduling.
pub fn subseed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
