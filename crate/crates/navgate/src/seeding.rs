//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha generator keyed by a seed
//! derived here, so identical configurations replay bit-identically. The
//! stdlib hasher is randomized per process and must not be used for this.

/// SplitMix64 finalizer; decorrelates nearby seed values.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Combine a base seed with a stream tag.
pub(crate) fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Combine a base seed with a stream tag and an index within the stream.
pub(crate) fn mix3(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(mix(seed, tag) ^ splitmix64(index.wrapping_add(0x51ed_270b)))
}

/// FNV-1a over a string, for keying streams by preset or layer names.
pub(crate) fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in s.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// Stream tags. Arbitrary distinct constants; never reuse one for a new stream.
pub(crate) const TAG_ROOM: u64 = 0x01;
pub(crate) const TAG_RESET: u64 = 0x02;
pub(crate) const TAG_TYPE_EMBEDDING: u64 = 0x03;
pub(crate) const TAG_SCENE_PROJECTION: u64 = 0x04;
pub(crate) const TAG_POLICY_INIT: u64 = 0x05;
pub(crate) const TAG_JUDGE_INIT: u64 = 0x06;
pub(crate) const TAG_WORKER: u64 = 0x07;
pub(crate) const TAG_EPISODE: u64 = 0x08;
pub(crate) const TAG_EVAL: u64 = 0x09;
