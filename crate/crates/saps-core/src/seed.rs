//! Deterministic seed derivation.
//!
//! Experiment runs need independent RNG streams that depend only on stable
//! identifiers (grid seed, class index, sequence index, frame index), never
//! on execution order, so parallel and sequential runs agree bit for bit.

/// SplitMix64 finalizer: a cheap, well-mixed 64-bit permutation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Folds identifier parts into one seed. Order-sensitive: `mix(&[a, b])`
/// and `mix(&[b, a])` differ.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x51ab_5e57_0000_0001;
    for (i, &part) in parts.iter().enumerate() {
        state = splitmix64(state ^ part.wrapping_add(splitmix64(i as u64)));
    }
    splitmix64(state)
}
