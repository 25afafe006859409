//! Small shared helpers.

/// Mix a list of integers into one seed with splitmix64 steps, so nested
/// loops (step, sample, view) get decorrelated deterministic streams.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9e3779b97f4a7c15;
    for &p in parts {
        state ^= p.wrapping_add(0x9e3779b97f4a7c15);
        state = splitmix64(state);
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_deterministic_and_order_sensitive() {
        assert_eq!(mix_seed(&[1, 2, 3]), mix_seed(&[1, 2, 3]));
        assert_ne!(mix_seed(&[1, 2, 3]), mix_seed(&[3, 2, 1]));
        assert_ne!(mix_seed(&[0]), mix_seed(&[1]));
    }
}
