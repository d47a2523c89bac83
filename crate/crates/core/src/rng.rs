//! Stateless, counter-based random numbers.
//!
//! A [`StreamKey`] is derived from a 64-bit seed by folding in labels
//! (expert index, tensor name, ...). The value at position `i` of a stream
//! is a pure function of the key and `i`, so draws never depend on the
//! order in which entries are visited or on how work is split across
//! threads.

/// SplitMix64 output function (Steele, Lea and Flood), a bijective mixer
/// on 64-bit words.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(mix64(seed ^ 0x6a09_e667_f3bc_c908))
    }

    /// Child stream for an integer label.
    pub fn split(self, label: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(label.wrapping_add(GOLDEN_GAMMA))))
    }

    /// Child stream for a string label (FNV-1a folded into the key).
    pub fn split_str(self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in label.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // length disambiguates prefixes that collide after hashing
        self.split(h ^ (label.len() as u64).rotate_left(32))
    }

    #[inline]
    pub fn u64_at(self, counter: u64) -> u64 {
        mix64(self.0.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn unit_at(self, counter: u64) -> f64 {
        (self.u64_at(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
