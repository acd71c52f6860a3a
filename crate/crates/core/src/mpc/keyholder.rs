use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use rug::Integer;

use super::payload::{Reader, Writer};
use super::{ids, Observer, Silent};
use crate::error::{Error, Result};
use crate::paillier::{Ciphertext, Encryptor, RandomnessPool, SecretKey};
use crate::random;
use crate::transport::{plaintext_codec, Channel, CiphertextCodec, Frame};

/// Outcome of offering a frame to a role-specific handler.
pub enum Dispatch {
    /// Not a role message; answer it as a sub-protocol request.
    Pass,
    /// Send this reply (or error) now.
    Reply(Result<Vec<u8>>),
    /// The handler took the frame and will reply later.
    Deferred,
}

/// P2: holds the secret key and answers one message at a time.
///
/// Keeps no per-session state; every reply is a function of the request, the
/// key and fresh randomness. The only plaintexts it computes on are masked
/// values, so it learns nothing beyond the bits the protocols disclose by
/// design (the comparison bit of a min/max session and the position of a zero
/// in a permuted vector).
pub struct KeyHolder {
    sk: Arc<SecretKey>,
    enc: Encryptor,
    codec: CiphertextCodec,
    rng: Mutex<ChaCha20Rng>,
    observer: Arc<dyn Observer>,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for KeyHolder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyHolder").field("bits", &self.sk.public_key().bits()).field("parallel", &self.pool.is_some()).finish()
    }
}

impl KeyHolder {
    pub fn new(sk: Arc<SecretKey>) -> Self {
        let enc = Encryptor::with_secret(sk.clone());
        let codec = CiphertextCodec::for_key(enc.pk());
        KeyHolder { sk, enc, codec, rng: Mutex::new(random::os_seeded()), observer: Arc::new(Silent), pool: None }
    }

    pub fn with_rng(mut self, rng: ChaCha20Rng) -> Self {
        self.rng = Mutex::new(rng);
        self
    }

    pub fn with_observer(mut self, observer: Arc<dyn Observer>) -> Self {
        self.observer = observer;
        self
    }

    pub fn with_pool(mut self, pool: Arc<RandomnessPool>) -> Self {
        self.enc = self.enc.with_pool(pool);
        self
    }

    /// Answers requests concurrently on a private thread pool. The pool is
    /// separate from rayon's global pool so that P1 work blocked on replies
    /// can never starve the responder.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.pool = parallel.then(|| {
            let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).max(2);
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .thread_name(|i| format!("ppknn-p2-{i}"))
                .build()
                .expect("build responder pool")
        });
        self
    }

    pub fn secret_key(&self) -> &Arc<SecretKey> {
        &self.sk
    }

    pub fn encryptor(&self) -> &Encryptor {
        &self.enc
    }

    pub fn handles(protocol_id: u16) -> bool {
        ids::ALL.contains(&protocol_id)
    }

    fn fork_rng(&self) -> ChaCha20Rng {
        random::fork(&mut *self.rng.lock().unwrap())
    }

    /// Independent generators for `n` items.
    fn fork_rngs(&self, n: usize) -> Vec<ChaCha20Rng> {
        let mut master = self.rng.lock().unwrap();
        (0..n).map(|_| random::fork(&mut *master)).collect()
    }

    fn decrypt_all(&self, cts: &[Ciphertext]) -> Result<Vec<Integer>> {
        if self.pool.is_some() {
            cts.par_iter().map(|c| self.sk.decrypt(c)).collect()
        } else {
            cts.iter().map(|c| self.sk.decrypt(c)).collect()
        }
    }

    fn encrypt_all(&self, values: &[Integer]) -> Vec<Ciphertext> {
        let rngs = self.fork_rngs(values.len());
        if self.pool.is_some() {
            values.par_iter().zip(rngs).map(|(v, mut r)| self.enc.encrypt(v, &mut r)).collect()
        } else {
            values.iter().zip(rngs).map(|(v, mut r)| self.enc.encrypt(v, &mut r)).collect()
        }
    }

    /// Computes the reply to one request.
    pub fn respond(&self, protocol_id: u16, payload: &[u8]) -> Result<Vec<u8>> {
        match protocol_id {
            id if ids::MULTIPLY.contains(&id) => self.multiply(id, payload),
            ids::SBD_PARITY => self.parity(payload),
            ids::SBD_VERIFY => self.unmask(payload),
            ids::SMIN_CMP | ids::SMAX_CMP => self.compare(protocol_id, payload),
            ids::SF => self.frequency(payload),
            ids::ONE_HOT => self.one_hot(payload),
            other => Err(Error::Protocol(format!("unknown protocol id {other:#06x}"))),
        }
    }

    /// `(a+r_a, b+r_b)` pairs in, `E((a+r_a)(b+r_b))` out.
    fn multiply(&self, id: u16, payload: &[u8]) -> Result<Vec<u8>> {
        let mut r = Reader::new(&self.codec, payload);
        let cts = r.rest()?;
        if cts.len() % 2 != 0 {
            return Err(Error::Protocol("multiplication batch has an odd number of operands".into()));
        }
        let plain = self.decrypt_all(&cts)?;
        self.observer.decrypted(id, &plain);
        let n = self.sk.n();
        let h: Vec<Integer> = plain.chunks(2).map(|p| Integer::from(&p[0] * &p[1]) % n).collect();
        self.observer.products(id, &h);
        Ok(Writer::new(&self.codec).cts(&self.encrypt_all(&h))?.finish())
    }

    fn parity(&self, payload: &[u8]) -> Result<Vec<u8>> {
        let cts = Reader::new(&self.codec, payload).rest()?;
        let plain = self.decrypt_all(&cts)?;
        self.observer.decrypted(ids::SBD_PARITY, &plain);
        let bits: Vec<Integer> = plain.iter().map(|y| Integer::from(y.is_odd())).collect();
        Ok(Writer::new(&self.codec).cts(&self.encrypt_all(&bits))?.finish())
    }

    /// Decrypts masked values and returns them in the clear.
    fn unmask(&self, payload: &[u8]) -> Result<Vec<u8>> {
        let cts = Reader::new(&self.codec, payload).rest()?;
        let plain = self.decrypt_all(&cts)?;
        self.observer.decrypted(ids::SBD_VERIFY, &plain);
        let width = plaintext_codec(self.enc.pk());
        let mut out = Vec::with_capacity(plain.len() * width.width());
        for p in &plain {
            width.put(&mut out, p)?;
        }
        Ok(out)
    }

    /// Min/max comparison step: `l | s | Gamma' (l) | L' (l) | delta (s)` in,
    /// `M' (l) | E(alpha) | delta' (s)` out.
    fn compare(&self, id: u16, payload: &[u8]) -> Result<Vec<u8>> {
        let mut r = Reader::new(&self.codec, payload);
        let l = r.count()?;
        let s = r.count()?;
        let gamma = r.cts(l)?;
        let masked = r.cts(l)?;
        let delta = r.cts(s)?;
        r.finish()?;
        let m = self.decrypt_all(&masked)?;
        self.observer.decrypted(id, &m);
        let ones = m.iter().filter(|x| **x == 1).count();
        if ones > 1 {
            return Err(Error::Collision(ones));
        }
        let alpha = ones == 1;
        self.observer.alpha(id, alpha);
        let mut rng = self.fork_rng();
        let (m_out, delta_out): (Vec<Ciphertext>, Vec<Ciphertext>) = if alpha {
            (
                gamma.iter().map(|g| self.enc.rerandomize(g, &mut rng)).collect(),
                delta.iter().map(|d| self.enc.rerandomize(d, &mut rng)).collect(),
            )
        } else {
            ((0..l).map(|_| self.enc.zero(&mut rng)).collect(), (0..s).map(|_| self.enc.zero(&mut rng)).collect())
        };
        let e_alpha = self.enc.encrypt_bit(alpha, &mut rng);
        Ok(Writer::new(&self.codec).cts(&m_out)?.cts([&e_alpha])?.cts(&delta_out)?.finish())
    }

    /// Frequency step: `w | Z (k rows of w)` in, `U (k rows of w)` out, with
    /// `U_ij = E(1)` exactly where `Z_ij` decrypts to zero.
    fn frequency(&self, payload: &[u8]) -> Result<Vec<u8>> {
        let mut r = Reader::new(&self.codec, payload);
        let w = r.count()?;
        let z = r.rest()?;
        if w == 0 || z.len() % w != 0 {
            return Err(Error::Protocol(format!("{} entries do not form rows of {w}", z.len())));
        }
        let plain = self.decrypt_all(&z)?;
        self.observer.decrypted(ids::SF, &plain);
        for (i, row) in plain.chunks(w).enumerate() {
            let zeros = row.iter().filter(|x| **x == 0).count();
            if zeros != 1 {
                return Err(Error::Protocol(format!(
                    "domain violation: frequency row {i} has {zeros} zero entries, expected exactly one"
                )));
            }
        }
        let bits: Vec<Integer> = plain.iter().map(|x| Integer::from(*x == 0)).collect();
        Ok(Writer::new(&self.codec).cts(&self.encrypt_all(&bits))?.finish())
    }

    /// One-hot step: `beta (n)` in, `U' (n)` with `E(1)` at the single zero.
    fn one_hot(&self, payload: &[u8]) -> Result<Vec<u8>> {
        let beta = Reader::new(&self.codec, payload).rest()?;
        let plain = self.decrypt_all(&beta)?;
        self.observer.decrypted(ids::ONE_HOT, &plain);
        let zeros = plain.iter().filter(|x| **x == 0).count();
        if zeros != 1 {
            return Err(Error::Protocol(format!("selection vector has {zeros} zero entries, expected exactly one")));
        }
        let bits: Vec<Integer> = plain.iter().map(|x| Integer::from(*x == 0)).collect();
        Ok(Writer::new(&self.codec).cts(&self.encrypt_all(&bits))?.finish())
    }

    /// Answers one frame on `ch`, turning failures into error frames.
    pub fn answer(&self, ch: &Channel, frame: &Frame) -> Result<()> {
        match self.respond(frame.protocol_id, &frame.payload) {
            Ok(reply) => ch.reply(frame, frame.protocol_id, reply),
            Err(e) => {
                log::warn!("session {} request {:#06x} failed: {e}", frame.session_id, frame.protocol_id);
                ch.reply_error(frame, &e.to_string())
            }
        }
    }

    /// Serves sub-protocol requests until the peer closes the channel.
    pub fn serve(self: &Arc<Self>, ch: &Channel) -> Result<()> {
        self.serve_with(ch, |_, _| Dispatch::Pass)
    }

    /// Like [`KeyHolder::serve`], but offers every frame to `extra` first.
    /// Used by roles that speak additional protocol ids.
    pub fn serve_with<F>(self: &Arc<Self>, ch: &Channel, extra: F) -> Result<()>
    where
        F: Fn(&Channel, &Frame) -> Dispatch,
    {
        loop {
            let frame = match ch.accept() {
                Ok(f) => f,
                Err(Error::ChannelClosed) => return Ok(()),
                Err(e) => return Err(e),
            };
            match extra(ch, &frame) {
                Dispatch::Reply(Ok(reply)) => {
                    ch.reply(&frame, frame.protocol_id, reply)?;
                    continue;
                }
                Dispatch::Reply(Err(e)) => {
                    ch.reply_error(&frame, &e.to_string())?;
                    continue;
                }
                Dispatch::Deferred => continue,
                Dispatch::Pass => {}
            }
            match &self.pool {
                Some(pool) => {
                    let me = self.clone();
                    let ch = ch.clone();
                    pool.spawn(move || {
                        let _ = me.answer(&ch, &frame);
                    });
                }
                None => self.answer(ch, &frame)?,
            }
        }
    }

    /// Runs [`KeyHolder::serve`] on a background thread.
    pub fn spawn(self: Arc<Self>, ch: Channel) -> std::thread::JoinHandle<Result<()>> {
        std::thread::Builder::new()
            .name("ppknn-keyholder".into())
            .spawn(move || self.serve(&ch))
            .expect("spawn key holder")
    }
}
