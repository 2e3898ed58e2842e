//! Small stable hashes used for sampling decisions, index fingerprints, and
//! container checksums. These are part of the on-disk and sampling contracts,
//! so they must never change between builds.

/// SplitMix64 finalizer. Full-period scrambling of a 64-bit value.
pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable keyed hash of a 64-bit value. Pure function of (seed, value).
pub(crate) fn mix64(seed: u64, value: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ value)
}

/// FNV-1a over a byte slice; used as the container checksum trailer.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Accumulates u64 words into a single fingerprint.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fingerprinter {
    state: u64,
}

impl Fingerprinter {
    pub(crate) fn new() -> Self {
        Fingerprinter { state: 0x7472_6573_6865_7221 }
    }

    pub(crate) fn push(&mut self, value: u64) {
        self.state = splitmix64(self.state ^ value);
    }

    pub(crate) fn finish(self) -> u64 {
        splitmix64(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix64_is_seed_and_value_sensitive() {
        assert_eq!(mix64(1, 2), mix64(1, 2));
        assert_ne!(mix64(1, 2), mix64(1, 3));
        assert_ne!(mix64(1, 2), mix64(2, 2));
    }

    #[test]
    fn fnv_detects_single_byte_change() {
        let a = b"hello world".to_vec();
        let mut b = a.clone();
        b[3] ^= 0x40;
        assert_ne!(fnv1a64(&a), fnv1a64(&b));
    }
}
