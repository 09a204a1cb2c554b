//! Seed derivation.
//!
//! Strings are hashed with 64-bit FNV-1a. Seeds are combined by xoring each
//! part into the running state and passing it through the SplitMix64
//! finalizer. Both functions are fixed; changing them changes every
//! simulated result.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn fnv1a64(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix64(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |h, &p| splitmix64(h ^ p))
}

/// Per-utterance stream seed; independent of processing order.
pub fn stream_seed(master_seed: u64, speaker_id: &str, utterance_id: &str) -> u64 {
    mix64(&[master_seed, fnv1a64(speaker_id), fnv1a64(utterance_id)])
}

const CONFUSION_SALT: u64 = 0x636f_6e66_7573_696f; // "confusio"

pub fn confusion_seed(master_seed: u64, speaker_id: &str) -> u64 {
    mix64(&[master_seed, fnv1a64(speaker_id), CONFUSION_SALT])
}
