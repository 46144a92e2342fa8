//! Deterministic seed derivation.
//!
//! Every randomized component in this crate takes an explicit seed. When one
//! seeded computation spawns many (search trials, per-epoch shuffles,
//! per-tensor initializations), child seeds are derived with a splitmix64
//! step so the derivation is stable across platforms and releases, unlike
//! `std`'s `DefaultHasher`.

/// Derives a child seed from a parent seed and a stream index.
///
/// The same `(seed, stream)` pair always yields the same child seed, and
/// nearby streams are decorrelated.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
