//! Seed derivation so each stage and each cluster gets an independent,
//! reproducible random stream from one user-facing seed.

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, stream: u64) -> u64 {
    mix64(base ^ mix64(stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(derive(7, 0), derive(7, 1));
        assert_eq!(derive(7, 3), derive(7, 3));
    }
}
