//! Named sub-seeds derived from one root seed, so each pipeline stage can be
//! reproduced on its own.

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for stage `name` ("data", "init", "shuffle", ...).
pub fn derive(root: u64, name: &str) -> u64 {
    splitmix(root ^ fnv1a(name.bytes()))
}

/// Derives an indexed seed, e.g. one per generated sequence.
pub fn derive_indexed(root: u64, name: &str, index: u64) -> u64 {
    splitmix(derive(root, name) ^ splitmix(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(std::iter::empty()), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a".iter().copied()), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn stage_seeds_differ() {
        assert_ne!(derive(7, "data"), derive(7, "init"));
        assert_eq!(derive(7, "data"), derive(7, "data"));
        assert_ne!(derive_indexed(7, "seq", 0), derive_indexed(7, "seq", 1));
    }
}
