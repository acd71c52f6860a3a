//! Uniform big-integer sampling on top of any `rand` generator.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::integer::Order;
use rug::Integer;

/// Uniform sample from `[0, bound)` by rejection on the bit length of `bound`.
pub fn below<R: RngCore + ?Sized>(bound: &Integer, rng: &mut R) -> Integer {
    assert!(*bound > 0, "empty sampling range");
    let bits = bound.significant_bits();
    let bytes = (bits as usize).div_ceil(8);
    let excess = (bytes * 8) as u32 - bits;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xffu8 >> excess;
        let candidate = Integer::from_digits(&buf, Order::MsfBe);
        if candidate < *bound {
            return candidate;
        }
    }
}

/// Uniform sample from `[1, bound)`.
pub fn nonzero_below<R: RngCore + ?Sized>(bound: &Integer, rng: &mut R) -> Integer {
    loop {
        let r = below(bound, rng);
        if r != 0 {
            return r;
        }
    }
}

/// Uniform sample of exactly `bits` bits (top bit set).
pub fn exact_bits<R: RngCore + ?Sized>(bits: u32, rng: &mut R) -> Integer {
    let bytes = (bits as usize).div_ceil(8);
    let excess = (bytes * 8) as u32 - bits;
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    buf[0] &= 0xffu8 >> excess;
    buf[0] |= 0x80u8 >> excess;
    Integer::from_digits(&buf, Order::MsfBe)
}

/// Derives an independent child stream. Used to give each concurrent session
/// its own generator.
pub fn fork<R: RngCore + ?Sized>(rng: &mut R) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(rng.gen())
}

/// A generator seeded from the operating system.
pub fn os_seeded() -> ChaCha20Rng {
    ChaCha20Rng::from_entropy()
}
