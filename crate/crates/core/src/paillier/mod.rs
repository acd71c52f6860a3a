//! Paillier public-key encryption with generator `g = N + 1`.
//!
//! Plaintexts live in `Z_N`; a negative quantity `-x` is carried as the residue
//! `N - x`. Every protocol in this crate keeps its true magnitudes far below
//! `N`, so residues never wrap ambiguously.

mod keyfile;
mod source;

pub use keyfile::{KeyKind, KEY_MAGIC, KEY_VERSION};
pub use source::{Encryptor, PoolCounts, RandomnessPool};

use rand::RngCore;
use rug::integer::IsPrime;
use rug::ops::RemRounding;
use rug::{Complete, Integer};

use crate::error::{Error, Result};
use crate::random;

/// Smallest modulus size accepted by [`keygen`].
pub const MIN_KEY_BITS: u32 = 512;

const MILLER_RABIN_ROUNDS: u32 = 64;

/// A Paillier ciphertext, an element of `Z*_{N^2}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ciphertext(Integer);

impl Ciphertext {
    /// Wraps a raw value without checking it against any key.
    pub fn from_raw(value: Integer) -> Self {
        Ciphertext(value)
    }

    pub fn value(&self) -> &Integer {
        &self.0
    }

    pub fn into_inner(self) -> Integer {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    n: Integer,
    g: Integer,
    n_squared: Integer,
    bits: u32,
}

impl PublicKey {
    /// Builds the key for modulus `n`; the key size is the bit length of `n`.
    pub fn from_modulus(n: Integer) -> Result<Self> {
        if n <= 1 || n.is_even() {
            return Err(Error::Config("modulus must be odd and greater than one".into()));
        }
        let bits = n.significant_bits();
        let g = (&n + 1u32).complete();
        let n_squared = n.square_ref().complete();
        Ok(PublicKey { n, g, n_squared, bits })
    }

    pub fn n(&self) -> &Integer {
        &self.n
    }

    pub fn g(&self) -> &Integer {
        &self.g
    }

    pub fn n_squared(&self) -> &Integer {
        &self.n_squared
    }

    /// Key size `K` in bits.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Fixed wire width of one ciphertext: `ceil(2K / 8)` bytes.
    pub fn ciphertext_width(&self) -> usize {
        (2 * self.bits as usize).div_ceil(8)
    }

    /// Fixed wire width of one plaintext: `ceil(K / 8)` bytes.
    pub fn plaintext_width(&self) -> usize {
        (self.bits as usize).div_ceil(8)
    }

    /// Residue encoding of a signed quantity.
    pub fn encode(&self, value: i64) -> Integer {
        let v = Integer::from(value);
        if value < 0 {
            v + &self.n
        } else {
            v
        }
    }

    /// Maps a residue back to a signed value if it lies within `bound` of zero.
    pub fn decode_signed(&self, residue: &Integer, bound: &Integer) -> Option<Integer> {
        if residue < bound {
            Some(residue.clone())
        } else {
            let neg = (&self.n - residue).complete();
            (neg <= *bound).then(|| -neg)
        }
    }

    /// `r^N mod N^2` for a fresh unit `r`; multiplying by it re-randomizes.
    pub fn nonce<R: RngCore + ?Sized>(&self, rng: &mut R) -> Integer {
        loop {
            let r = random::nonzero_below(&self.n, rng);
            if r.gcd_ref(&self.n).complete() == 1 {
                return r.pow_mod(&self.n, &self.n_squared).expect("positive exponent");
            }
        }
    }

    /// Encrypts `m`, which must lie in `[0, N)`.
    pub fn encrypt<R: RngCore + ?Sized>(&self, m: &Integer, rng: &mut R) -> Result<Ciphertext> {
        self.check_plaintext(m)?;
        let nonce = self.nonce(rng);
        Ok(self.encrypt_with_nonce(m, &nonce))
    }

    /// Encrypts any integer after reducing it modulo `N`.
    pub fn encrypt_residue<R: RngCore + ?Sized>(&self, m: &Integer, rng: &mut R) -> Ciphertext {
        let m = m.clone().rem_euc(&self.n);
        let nonce = self.nonce(rng);
        self.encrypt_with_nonce(&m, &nonce)
    }

    /// `(1 + mN) * nonce mod N^2`, with `m` already reduced.
    pub fn encrypt_with_nonce(&self, m: &Integer, nonce: &Integer) -> Ciphertext {
        let mut c = (m * &self.n).complete() + 1u32;
        c *= nonce;
        c %= &self.n_squared;
        Ciphertext(c)
    }

    /// Deterministic encryption with unit randomness; only for public constants
    /// that are immediately combined with a randomized ciphertext.
    pub fn trivial(&self, m: &Integer) -> Ciphertext {
        let m = m.clone().rem_euc(&self.n);
        Ciphertext(((m * &self.n) + 1u32) % &self.n_squared)
    }

    pub fn check_plaintext(&self, m: &Integer) -> Result<()> {
        if *m < 0 || *m >= self.n {
            return Err(Error::Range(format!("plaintext must lie in [0, N), got {} bits", m.significant_bits())));
        }
        Ok(())
    }

    /// Range and unit check on a raw ciphertext.
    pub fn validate(&self, c: &Ciphertext) -> Result<()> {
        if c.0 <= 0 || c.0 >= self.n_squared {
            return Err(Error::MalformedCiphertext("value outside (0, N^2)".into()));
        }
        if c.0.gcd_ref(&self.n).complete() != 1 {
            return Err(Error::MalformedCiphertext("value shares a factor with N".into()));
        }
        Ok(())
    }

    /// `E(a + b)`.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        Ciphertext((&a.0 * &b.0).complete() % &self.n_squared)
    }

    /// `E(-a)`, computed as the inverse in `Z*_{N^2}`; same plaintext as `a^(N-1)`.
    pub fn neg(&self, a: &Ciphertext) -> Ciphertext {
        Ciphertext(a.0.invert_ref(&self.n_squared).map(Integer::from).unwrap_or_else(|| {
            // Not a unit: fall back to the exponent form so the caller still gets a
            // well-defined value and decryption reports the malformed input.
            a.0.pow_mod_ref(&(&self.n - 1u32).complete(), &self.n_squared).map(Integer::from).unwrap()
        }))
    }

    /// `E(a - b)`.
    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        self.add(a, &self.neg(b))
    }

    /// `E(a * s)` for a plaintext scalar `s`, as `a^s mod N^2`.
    pub fn scalar_mul(&self, a: &Ciphertext, s: &Integer) -> Ciphertext {
        let s = s.clone().rem_euc(&self.n);
        Ciphertext(a.0.pow_mod_ref(&s, &self.n_squared).map(Integer::from).expect("non-negative exponent"))
    }

    /// `E(a + m)` for a plaintext `m`.
    pub fn add_plain(&self, a: &Ciphertext, m: &Integer) -> Ciphertext {
        self.add(a, &self.trivial(m))
    }

    /// Same plaintext, fresh randomness.
    pub fn rerandomize<R: RngCore + ?Sized>(&self, a: &Ciphertext, rng: &mut R) -> Ciphertext {
        let nonce = self.nonce(rng);
        self.rerandomize_with(a, &nonce)
    }

    pub fn rerandomize_with(&self, a: &Ciphertext, nonce: &Integer) -> Ciphertext {
        Ciphertext((&a.0 * nonce).complete() % &self.n_squared)
    }
}

#[derive(Clone, Debug)]
struct Crt {
    p: Integer,
    q: Integer,
    p_squared: Integer,
    q_squared: Integer,
    p_minus_1: Integer,
    q_minus_1: Integer,
    h_p: Integer,
    h_q: Integer,
    p_inv_q: Integer,
    // exponents for r^N modulo p^2 and q^2
    nonce_exp_p: Integer,
    nonce_exp_q: Integer,
    p_squared_inv_q_squared: Integer,
}

impl Crt {
    fn new(p: Integer, q: Integer, n: &Integer) -> Option<Self> {
        let p_squared = p.square_ref().complete();
        let q_squared = q.square_ref().complete();
        let p_minus_1 = (&p - 1u32).complete();
        let q_minus_1 = (&q - 1u32).complete();
        let g = (n + 1u32).complete();
        let h = |prime: &Integer, prime_sq: &Integer, prime_minus_1: &Integer| -> Option<Integer> {
            let x = g.pow_mod_ref(prime_minus_1, prime_sq).map(Integer::from)?;
            let l = (x - 1u32) / prime;
            l.invert(prime).ok()
        };
        let h_p = h(&p, &p_squared, &p_minus_1)?;
        let h_q = h(&q, &q_squared, &q_minus_1)?;
        let p_inv_q = p.invert_ref(&q).map(Integer::from)?;
        let nonce_exp_p = n.clone() % (&p * &p_minus_1).complete();
        let nonce_exp_q = n.clone() % (&q * &q_minus_1).complete();
        let p_squared_inv_q_squared = p_squared.invert_ref(&q_squared).map(Integer::from)?;
        Some(Crt {
            p,
            q,
            p_squared,
            q_squared,
            p_minus_1,
            q_minus_1,
            h_p,
            h_q,
            p_inv_q,
            nonce_exp_p,
            nonce_exp_q,
            p_squared_inv_q_squared,
        })
    }

    fn decrypt(&self, c: &Integer) -> Integer {
        let half = |prime: &Integer, prime_sq: &Integer, prime_minus_1: &Integer, h: &Integer| {
            let x = c.pow_mod_ref(prime_minus_1, prime_sq).map(Integer::from).unwrap();
            let l = (x - 1u32) / prime;
            (l * h) % prime
        };
        let m_p = half(&self.p, &self.p_squared, &self.p_minus_1, &self.h_p);
        let m_q = half(&self.q, &self.q_squared, &self.q_minus_1, &self.h_q);
        // Garner recombination: m = m_p + p * ((m_q - m_p) * p^-1 mod q)
        let t = ((m_q - &m_p) * &self.p_inv_q).rem_euc(&self.q);
        m_p + t * &self.p
    }

    fn nonce(&self, r: &Integer, n_squared: &Integer) -> Integer {
        let a = r.pow_mod_ref(&self.nonce_exp_p, &self.p_squared).map(Integer::from).unwrap();
        let b = r.pow_mod_ref(&self.nonce_exp_q, &self.q_squared).map(Integer::from).unwrap();
        let t = ((b - &a) * &self.p_squared_inv_q_squared).rem_euc(&self.q_squared);
        (a + t * &self.p_squared) % n_squared
    }
}

/// Secret key `(lambda, mu)` with cached CRT parameters when the factors are
/// recoverable from `lambda`.
#[derive(Clone, Debug)]
pub struct SecretKey {
    lambda: Integer,
    mu: Integer,
    pk: PublicKey,
    crt: Option<Crt>,
}

impl SecretKey {
    /// Rebuilds a key from its stored fields, validating `mu = lambda^-1 mod N`.
    pub fn from_parts(lambda: Integer, mu: Integer, n: Integer) -> Result<Self> {
        let pk = PublicKey::from_modulus(n)?;
        let check = (&lambda * &mu).complete().rem_euc(pk.n());
        if check != 1 {
            return Err(Error::Format("secret key fields are inconsistent".into()));
        }
        let crt = recover_factors(&lambda, pk.n()).and_then(|(p, q)| Crt::new(p, q, pk.n()));
        Ok(SecretKey { lambda, mu, pk, crt })
    }

    fn from_primes(p: Integer, q: Integer) -> Result<Self> {
        let n = (&p * &q).complete();
        let pk = PublicKey::from_modulus(n)?;
        let lambda = (&p - 1u32).complete().lcm(&(&q - 1u32).complete());
        let mu = lambda
            .invert_ref(pk.n())
            .map(Integer::from)
            .ok_or_else(|| Error::Config("lambda not invertible modulo N".into()))?;
        let crt = Crt::new(p, q, pk.n());
        Ok(SecretKey { lambda, mu, pk, crt })
    }

    pub fn lambda(&self) -> &Integer {
        &self.lambda
    }

    pub fn mu(&self) -> &Integer {
        &self.mu
    }

    pub fn n(&self) -> &Integer {
        self.pk.n()
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    /// Whether CRT-accelerated decryption and nonce generation are available.
    pub fn has_crt(&self) -> bool {
        self.crt.is_some()
    }

    /// The unique `m` in `[0, N)` with `E(m) = c`.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<Integer> {
        self.pk.validate(c)?;
        Ok(match &self.crt {
            Some(crt) => crt.decrypt(&c.0),
            None => self.decrypt_unchecked_direct(&c.0),
        })
    }

    /// Textbook `L(c^lambda mod N^2) * mu mod N`.
    pub fn decrypt_direct(&self, c: &Ciphertext) -> Result<Integer> {
        self.pk.validate(c)?;
        Ok(self.decrypt_unchecked_direct(&c.0))
    }

    fn decrypt_unchecked_direct(&self, c: &Integer) -> Integer {
        let x = c.pow_mod_ref(&self.lambda, self.pk.n_squared()).map(Integer::from).unwrap();
        let l = (x - 1u32) / self.pk.n();
        (l * &self.mu) % self.pk.n()
    }

    /// `r^N mod N^2` using the factorization when available.
    pub fn nonce<R: RngCore + ?Sized>(&self, rng: &mut R) -> Integer {
        match &self.crt {
            Some(crt) => loop {
                let r = random::nonzero_below(self.pk.n(), rng);
                if r.gcd_ref(self.pk.n()).complete() == 1 {
                    return crt.nonce(&r, self.pk.n_squared());
                }
            },
            None => self.pk.nonce(rng),
        }
    }
}

/// Recovers `(p, q)` from `lambda = lcm(p-1, q-1)` by trying small values of
/// `gcd(p-1, q-1)`. Keys from [`keygen`] always have that gcd equal to 2.
fn recover_factors(lambda: &Integer, n: &Integer) -> Option<(Integer, Integer)> {
    for g in 1u32..=64 {
        let phi = (lambda * g).complete();
        if phi >= *n {
            break;
        }
        // p + q = N - phi + 1
        let s = (n - &phi).complete() + 1u32;
        let disc = s.square_ref().complete() - (n * 4u32).complete();
        if disc < 0 || !disc.is_perfect_square() {
            continue;
        }
        let root = disc.sqrt();
        let p = (&s + &root).complete() / 2u32;
        let q = (s - root) / 2u32;
        if (&p * &q).complete() == *n && q > 1 {
            return Some((p, q));
        }
    }
    None
}

fn random_prime<R: RngCore + ?Sized>(bits: u32, rng: &mut R) -> Integer {
    loop {
        let mut candidate = random::exact_bits(bits, rng);
        // top two bits set so the product has exactly 2*bits bits
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if candidate.is_probably_prime(MILLER_RABIN_ROUNDS) != IsPrime::No {
            return candidate;
        }
    }
}

/// Generates a key pair with a `bits`-bit modulus `N = p * q`.
///
/// `p` and `q` are distinct `bits/2`-bit primes with `gcd(p-1, q-1) = 2`, which
/// lets a stored `(lambda, mu, N)` secret key recover its factors for CRT.
pub fn keygen<R: RngCore + ?Sized>(bits: u32, rng: &mut R) -> Result<(PublicKey, SecretKey)> {
    if bits < MIN_KEY_BITS {
        return Err(Error::Config(format!("key size {bits} is below the {MIN_KEY_BITS}-bit minimum")));
    }
    if bits % 2 != 0 {
        return Err(Error::Config(format!("key size {bits} must be even")));
    }
    let half = bits / 2;
    loop {
        let p = random_prime(half, rng);
        let q = random_prime(half, rng);
        if p == q {
            continue;
        }
        let g = (&p - 1u32).complete().gcd(&(&q - 1u32).complete());
        if g != 2 {
            continue;
        }
        let sk = SecretKey::from_primes(p, q)?;
        debug_assert_eq!(sk.pk.bits, bits);
        return Ok((sk.pk.clone(), sk));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::OnceLock;

    fn keys() -> &'static (PublicKey, SecretKey) {
        static KEYS: OnceLock<(PublicKey, SecretKey)> = OnceLock::new();
        KEYS.get_or_init(|| keygen(512, &mut ChaCha20Rng::seed_from_u64(11)).unwrap())
    }

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(99)
    }

    #[test]
    fn keygen_structure() {
        let (pk, sk) = keys();
        assert_eq!(pk.bits(), 512);
        assert_eq!(pk.n().significant_bits(), 512);
        assert_eq!(*pk.g(), (pk.n() + 1u32).complete());
        let crt = sk.crt.as_ref().unwrap();
        assert_ne!(crt.p, crt.q);
        assert_eq!(crt.p.significant_bits(), 256);
        assert_eq!(crt.q.significant_bits(), 256);
        assert_eq!((&crt.p * &crt.q).complete(), *pk.n());
    }

    #[test]
    fn keygen_rejects_small_and_odd_sizes() {
        let mut r = rng();
        assert!(matches!(keygen(256, &mut r), Err(Error::Config(_))));
        assert!(matches!(keygen(511, &mut r), Err(Error::Config(_))));
    }

    #[test]
    fn keygen_is_randomized() {
        let mut r = rng();
        let (a, _) = keygen(512, &mut r).unwrap();
        let (b, _) = keygen(512, &mut r).unwrap();
        assert_ne!(a.n(), b.n());
    }

    #[test]
    fn round_trip_boundaries() {
        let (pk, sk) = keys();
        let mut r = rng();
        for m in [Integer::from(0), Integer::from(7), Integer::from(42), (pk.n() - 1u32).complete()] {
            let c = pk.encrypt(&m, &mut r).unwrap();
            assert_eq!(sk.decrypt(&c).unwrap(), m);
        }
    }

    #[test]
    fn encrypt_rejects_out_of_range() {
        let (pk, _) = keys();
        let mut r = rng();
        assert!(matches!(pk.encrypt(pk.n(), &mut r), Err(Error::Range(_))));
        assert!(matches!(pk.encrypt(&Integer::from(-1), &mut r), Err(Error::Range(_))));
    }

    #[test]
    fn encryption_is_probabilistic() {
        let (pk, _) = keys();
        let mut r = rng();
        let a = pk.encrypt(&Integer::ZERO, &mut r).unwrap();
        let b = pk.encrypt(&Integer::ZERO, &mut r).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn decrypt_rejects_non_units() {
        let (pk, sk) = keys();
        let crt = sk.crt.as_ref().unwrap();
        let bad = Ciphertext::from_raw(crt.p.clone());
        assert!(matches!(sk.decrypt(&bad), Err(Error::MalformedCiphertext(_))));
        let zero = Ciphertext::from_raw(Integer::ZERO);
        assert!(matches!(sk.decrypt(&zero), Err(Error::MalformedCiphertext(_))));
        let big = Ciphertext::from_raw(pk.n_squared().clone());
        assert!(matches!(sk.decrypt(&big), Err(Error::MalformedCiphertext(_))));
    }

    #[test]
    fn homomorphic_identities() {
        let (pk, sk) = keys();
        let mut r = rng();
        let e = |v: i64, r: &mut ChaCha20Rng| pk.encrypt(&Integer::from(v), r).unwrap();
        assert_eq!(sk.decrypt(&pk.add(&e(3, &mut r), &e(4, &mut r))).unwrap(), 7);
        assert_eq!(sk.decrypt(&pk.add(&e(59, &mut r), &e(1, &mut r))).unwrap(), 60);
        assert_eq!(sk.decrypt(&pk.scalar_mul(&e(3, &mut r), &Integer::from(5))).unwrap(), 15);
        assert_eq!(sk.decrypt(&pk.scalar_mul(&e(9, &mut r), &Integer::from(1))).unwrap(), 9);
        assert_eq!(sk.decrypt(&pk.add(&e(9, &mut r), &e(0, &mut r))).unwrap(), 9);
        let minus_one = (pk.n() - 1u32).complete();
        assert_eq!(sk.decrypt(&pk.scalar_mul(&e(5, &mut r), &minus_one)).unwrap(), (pk.n() - 5u32).complete());
        assert_eq!(sk.decrypt(&pk.neg(&e(5, &mut r))).unwrap(), (pk.n() - 5u32).complete());
        assert_eq!(sk.decrypt(&pk.sub(&e(5, &mut r), &e(8, &mut r))).unwrap(), pk.encode(-3));
        assert_eq!(sk.decrypt(&pk.add_plain(&e(5, &mut r), &Integer::from(8))).unwrap(), 13);
    }

    #[test]
    fn rerandomize_changes_value_not_plaintext() {
        let (pk, sk) = keys();
        let mut r = rng();
        let c = pk.encrypt(&Integer::from(5), &mut r).unwrap();
        let d = pk.rerandomize(&c, &mut r);
        assert_ne!(c, d);
        assert_eq!(sk.decrypt(&d).unwrap(), 5);
    }

    #[test]
    fn crt_decryption_matches_textbook_formula() {
        let (pk, sk) = keys();
        let mut r = rng();
        for _ in 0..100 {
            let m = random::below(pk.n(), &mut r);
            let c = pk.encrypt(&m, &mut r).unwrap();
            assert_eq!(sk.decrypt(&c).unwrap(), sk.decrypt_direct(&c).unwrap());
        }
    }

    #[test]
    fn crt_nonce_is_an_encryption_of_zero() {
        let (pk, sk) = keys();
        let mut r = rng();
        for _ in 0..20 {
            let z = Ciphertext::from_raw(sk.nonce(&mut r));
            assert_eq!(sk.decrypt(&z).unwrap(), 0);
            let c = pk.encrypt_with_nonce(&Integer::from(77), z.value());
            assert_eq!(sk.decrypt(&c).unwrap(), 77);
        }
    }

    #[test]
    fn factors_recovered_from_stored_fields() {
        let (_, sk) = keys();
        let rebuilt = SecretKey::from_parts(sk.lambda().clone(), sk.mu().clone(), sk.n().clone()).unwrap();
        assert!(rebuilt.has_crt());
        assert_eq!(rebuilt.crt.as_ref().unwrap().p, sk.crt.as_ref().unwrap().p);
    }

    #[test]
    fn signed_decoding() {
        let (pk, _) = keys();
        let bound = Integer::from(1000);
        assert_eq!(pk.decode_signed(&pk.encode(-2), &bound), Some(Integer::from(-2)));
        assert_eq!(pk.decode_signed(&Integer::from(12), &bound), Some(Integer::from(12)));
        assert_eq!(pk.decode_signed(&(pk.n() / 2u32).complete(), &bound), None);
    }
}
