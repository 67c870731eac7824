//! Seeded hashing primitives shared by the codebook and the feature hasher.
//!
//! Two functions define every pseudo-random choice in the engine:
//!
//! * [`murmur3_32`]: MurmurHash3 x86_32, bit-compatible with the reference
//!   implementation (and therefore with scikit-learn's `murmurhash3_32`).
//!   Integer keys are hashed as their 8-byte little-endian encoding.
//! * [`derive_seed`]: the `(k + 1)`-th output of a SplitMix64 generator whose
//!   state starts at `base`. Used to split one 64-bit seed into independent
//!   per-chunk (and per-epoch) seeds.
//!
//! Test vectors:
//!
//! | call                         | value                |
//! |------------------------------|----------------------|
//! | `derive_seed(0, 0)`          | `0xe220a8397b1dcdaf` |
//! | `derive_seed(0, 1)`          | `0x6e789e6aa1b965f4` |
//! | `derive_seed(42, 0)`         | `0xbdd732262feb6e95` |
//! | `murmur3_32(b"hello", 0)`    | `613153351`          |
//! | `hash_u64(1, 0)`             | `1392991556`         |
//!
//! Reducing a 32-bit hash modulo a bucket count introduces a bias of at most
//! `B / 2^32`, which is negligible for the bucket counts used here.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// MurmurHash3 x86_32.
pub fn murmur3_32(data: &[u8], seed: u32) -> u32 {
    const C1: u32 = 0xcc9e_2d51;
    const C2: u32 = 0x1b87_3593;

    let mut h = seed;
    let mut blocks = data.chunks_exact(4);
    for block in &mut blocks {
        let mut k = u32::from_le_bytes([block[0], block[1], block[2], block[3]]);
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h ^= k;
        h = h.rotate_left(13).wrapping_mul(5).wrapping_add(0xe654_6b64);
    }

    let tail = blocks.remainder();
    if !tail.is_empty() {
        let mut k = 0u32;
        for (i, &byte) in tail.iter().enumerate() {
            k |= u32::from(byte) << (8 * i);
        }
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h ^= k;
    }

    h ^= data.len() as u32;
    fmix32(h)
}

#[inline]
fn fmix32(mut h: u32) -> u32 {
    h ^= h >> 16;
    h = h.wrapping_mul(0x85eb_ca6b);
    h ^= h >> 13;
    h = h.wrapping_mul(0xc2b2_ae35);
    h ^= h >> 16;
    h
}

/// SplitMix64 output mixer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits `base` into an independent seed for stream `index`.
#[inline]
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Folds a 64-bit seed into the 32-bit seed MurmurHash3 accepts.
#[inline]
pub fn fold_seed(seed: u64) -> u32 {
    (seed ^ (seed >> 32)) as u32
}

/// Hashes an integer key (as 8 little-endian bytes) under a 64-bit seed.
#[inline]
pub fn hash_u64(key: u64, seed: u64) -> u32 {
    murmur3_32(&key.to_le_bytes(), fold_seed(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn murmur_reference_vectors() {
        assert_eq!(murmur3_32(b"", 0), 0);
        assert_eq!(murmur3_32(b"", 1), 0x514e_28b7);
        assert_eq!(murmur3_32(b"hello", 0), 613_153_351);
        // tails of length 1..=3
        assert_eq!(murmur3_32(b"a", 0), 0x3c25_69b2);
        assert_eq!(murmur3_32(b"ab", 0), 0x9bbf_d75f);
        assert_eq!(murmur3_32(b"abc", 0), 0xb3dd_93fa);
    }

    #[test]
    fn integer_keys_match_sklearn() {
        let expected = [1_669_671_676u32, 1_392_991_556, 3_323_962_100, 2_738_575_283];
        for (key, want) in expected.iter().enumerate() {
            assert_eq!(hash_u64(key as u64, 0), *want);
        }
        assert_eq!(murmur3_32(&1u64.to_le_bytes(), 42), 2_582_647_965);
    }

    #[test]
    fn splitmix_vectors() {
        assert_eq!(derive_seed(0, 0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(derive_seed(0, 1), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(derive_seed(0, 2), 0x06c4_5d18_8009_454f);
        assert_eq!(derive_seed(42, 0), 0xbdd7_3226_2feb_6e95);
        assert_eq!(derive_seed(42, 1), 0x28ef_e333_b266_f103);
    }
}
