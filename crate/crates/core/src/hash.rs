//! Stable 64-bit FNV-1a, used wherever a hash must not change across
//! platforms or toolchains (seed derivation, feature hashing).

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Per-item seed: the global seed xor the hash of the item's id.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    seed ^ fnv1a(id.as_bytes())
}
