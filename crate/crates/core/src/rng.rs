//! Seedable, splittable random streams.
//!
//! Every stochastic operation takes an explicit `&mut RngStream`. Streams are
//! derived from a root seed and a name, so that e.g. the data stream and the
//! permutation stream of a run can be varied independently.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

// FNV-1a, then a splitmix64 finalizer.
fn mix(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        RngStream {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream identified by `(seed, name)`.
    pub fn named(seed: u64, name: &str) -> Self {
        Self::from_seed(mix(seed, name))
    }

    /// Derives an independent child stream; advances `self` by one draw.
    pub fn split(&mut self, name: &str) -> RngStream {
        let base = self.inner.next_u64();
        Self::named(base, name)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_separate_streams() {
        let mut a = RngStream::named(7, "data");
        let mut b = RngStream::named(7, "sampling");
        let mut c = RngStream::named(7, "data");
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_eq!(x, c.next_u64());
    }

    #[test]
    fn split_is_deterministic() {
        let mut a = RngStream::from_seed(3);
        let mut b = RngStream::from_seed(3);
        assert_eq!(a.split("x").next_u64(), b.split("x").next_u64());
        assert_ne!(a.split("x").next_u64(), a.split("x").next_u64());
    }
}
