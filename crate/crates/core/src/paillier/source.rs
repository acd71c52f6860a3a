use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::RngCore;
use rug::ops::RemRounding;
use rug::Integer;

use super::{Ciphertext, PublicKey, SecretKey};
use crate::random;

/// Number of precomputed items per pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PoolCounts {
    /// `E(0)` values, i.e. bare `r^N` randomizers.
    pub zeros: usize,
    /// `E(1)` values.
    pub ones: usize,
    /// `(r, E(r))` pairs for uniform masks `r` in `[1, N)`.
    pub masks: usize,
}

impl std::ops::Add for PoolCounts {
    type Output = PoolCounts;
    fn add(self, o: PoolCounts) -> PoolCounts {
        PoolCounts { zeros: self.zeros + o.zeros, ones: self.ones + o.ones, masks: self.masks + o.masks }
    }
}

/// Offline-phase stock of encryptions of 0, 1 and random masks.
///
/// Popping is thread-safe. When a pool runs dry the encryptor falls back to
/// online computation and the shortfall is counted in [`RandomnessPool::misses`].
#[derive(Debug, Default)]
pub struct RandomnessPool {
    zeros: Mutex<Vec<Integer>>,
    ones: Mutex<Vec<Ciphertext>>,
    masks: Mutex<Vec<(Integer, Ciphertext)>>,
    misses: AtomicU64,
}

impl RandomnessPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Precomputes `counts` items with `source` (which should not itself draw
    /// from this pool).
    pub fn fill<R: RngCore + ?Sized>(&self, source: &Encryptor, counts: PoolCounts, rng: &mut R) {
        let pk = source.pk();
        let zeros: Vec<Integer> = (0..counts.zeros).map(|_| source.fresh_nonce(rng)).collect();
        let ones: Vec<Ciphertext> =
            (0..counts.ones).map(|_| pk.encrypt_with_nonce(&Integer::from(1), &source.fresh_nonce(rng))).collect();
        let masks: Vec<(Integer, Ciphertext)> = (0..counts.masks)
            .map(|_| {
                let r = random::nonzero_below(pk.n(), rng);
                let c = pk.encrypt_with_nonce(&r, &source.fresh_nonce(rng));
                (r, c)
            })
            .collect();
        self.zeros.lock().unwrap().extend(zeros);
        self.ones.lock().unwrap().extend(ones);
        self.masks.lock().unwrap().extend(masks);
    }

    pub fn remaining(&self) -> PoolCounts {
        PoolCounts {
            zeros: self.zeros.lock().unwrap().len(),
            ones: self.ones.lock().unwrap().len(),
            masks: self.masks.lock().unwrap().len(),
        }
    }

    /// How many times a request had to be served by online computation.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    fn pop_zero(&self) -> Option<Integer> {
        self.zeros.lock().unwrap().pop()
    }

    fn pop_one(&self) -> Option<Ciphertext> {
        self.ones.lock().unwrap().pop()
    }

    fn pop_mask(&self) -> Option<(Integer, Ciphertext)> {
        self.masks.lock().unwrap().pop()
    }
}

/// Encryption front-end shared by both protocol parties.
///
/// Holds the public key, optionally the secret key (the key holder uses it for
/// CRT-accelerated randomizers) and optionally a precomputed pool.
#[derive(Clone, Debug)]
pub struct Encryptor {
    pk: Arc<PublicKey>,
    sk: Option<Arc<SecretKey>>,
    pool: Option<Arc<RandomnessPool>>,
}

impl Encryptor {
    pub fn public(pk: Arc<PublicKey>) -> Self {
        Encryptor { pk, sk: None, pool: None }
    }

    pub fn with_secret(sk: Arc<SecretKey>) -> Self {
        Encryptor { pk: Arc::new(sk.public_key().clone()), sk: Some(sk), pool: None }
    }

    pub fn with_pool(mut self, pool: Arc<RandomnessPool>) -> Self {
        self.pool = Some(pool);
        self
    }

    pub fn without_pool(&self) -> Self {
        Encryptor { pk: self.pk.clone(), sk: self.sk.clone(), pool: None }
    }

    pub fn pk(&self) -> &PublicKey {
        &self.pk
    }

    pub fn pk_arc(&self) -> &Arc<PublicKey> {
        &self.pk
    }

    pub fn pool(&self) -> Option<&Arc<RandomnessPool>> {
        self.pool.as_ref()
    }

    fn fresh_nonce<R: RngCore + ?Sized>(&self, rng: &mut R) -> Integer {
        match &self.sk {
            Some(sk) => sk.nonce(rng),
            None => self.pk.nonce(rng),
        }
    }

    fn miss(&self) {
        if let Some(pool) = &self.pool {
            pool.misses.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// A randomizer `r^N mod N^2`.
    pub fn nonce<R: RngCore + ?Sized>(&self, rng: &mut R) -> Integer {
        if let Some(z) = self.pool.as_ref().and_then(|p| p.pop_zero()) {
            return z;
        }
        self.miss();
        self.fresh_nonce(rng)
    }

    /// Encrypts `m mod N`.
    pub fn encrypt<R: RngCore + ?Sized>(&self, m: &Integer, rng: &mut R) -> Ciphertext {
        let m = m.clone().rem_euc(self.pk.n());
        let nonce = self.nonce(rng);
        self.pk.encrypt_with_nonce(&m, &nonce)
    }

    pub fn encrypt_u64<R: RngCore + ?Sized>(&self, m: u64, rng: &mut R) -> Ciphertext {
        self.encrypt(&Integer::from(m), rng)
    }

    pub fn zero<R: RngCore + ?Sized>(&self, rng: &mut R) -> Ciphertext {
        Ciphertext(self.nonce(rng))
    }

    pub fn encrypt_bit<R: RngCore + ?Sized>(&self, bit: bool, rng: &mut R) -> Ciphertext {
        if !bit {
            return self.zero(rng);
        }
        if let Some(c) = self.pool.as_ref().and_then(|p| p.pop_one()) {
            return c;
        }
        self.miss();
        self.pk.encrypt_with_nonce(&Integer::from(1), &self.fresh_nonce(rng))
    }

    /// A uniform mask `r` in `[1, N)` together with `E(r)`.
    pub fn mask<R: RngCore + ?Sized>(&self, rng: &mut R) -> (Integer, Ciphertext) {
        if let Some(m) = self.pool.as_ref().and_then(|p| p.pop_mask()) {
            return m;
        }
        self.miss();
        let r = random::nonzero_below(self.pk.n(), rng);
        let c = self.pk.encrypt_with_nonce(&r, &self.fresh_nonce(rng));
        (r, c)
    }

    pub fn rerandomize<R: RngCore + ?Sized>(&self, c: &Ciphertext, rng: &mut R) -> Ciphertext {
        let nonce = self.nonce(rng);
        self.pk.rerandomize_with(c, &nonce)
    }
}
