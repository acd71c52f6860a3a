use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use rug::ops::RemRounding;
use rug::Integer;

use super::payload::{Reader, Writer};
use super::types::{tournament_schedule, EncBitVec, Permutation, RankedValue, SecretBundle};
use super::{ids, OpStats};
use crate::error::{Error, Result};
use crate::paillier::{Ciphertext, Encryptor, PublicKey};
use crate::random;
use crate::transport::{plaintext_codec, Channel, CiphertextCodec, Session};

/// Which extremum a comparison session selects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    fn ids(self) -> (u16, u16) {
        match self {
            Extremum::Min => (ids::SMIN_MUL, ids::SMIN_CMP),
            Extremum::Max => (ids::SMAX_MUL, ids::SMAX_CMP),
        }
    }
}

/// Fixed choices for a white-box comparison run: the coin `F` and both
/// permutations. Masks stay random.
#[derive(Clone, Debug)]
pub struct SminPins {
    /// `true` selects the functionality `u > v`, `false` selects `v > u`.
    pub u_greater_v: bool,
    pub pi1: Permutation,
    pub pi2: Permutation,
}

/// Every intermediate vector of one comparison session, as seen by P1.
#[derive(Clone, Debug)]
pub struct SminTrace {
    pub u_greater_v: bool,
    pub products: Vec<Ciphertext>,
    pub t: Vec<Ciphertext>,
    pub h: Vec<Ciphertext>,
    pub phi: Vec<Ciphertext>,
    pub w: Vec<Ciphertext>,
    pub gamma: Vec<Ciphertext>,
    pub l: Vec<Ciphertext>,
    pub gamma_permuted: Vec<Ciphertext>,
    pub l_permuted: Vec<Ciphertext>,
    pub lambda: Vec<Ciphertext>,
    pub alpha: Ciphertext,
}

/// P1: holds ciphertexts and the public key, drives every sub-protocol.
///
/// Each call opens a fresh session on the given channel. With `parallel` set,
/// independent sessions (tournament pairs, multiplication chunks) run
/// concurrently on rayon's global pool, each with a generator forked from
/// this one in a fixed order, so results do not depend on the mode.
pub struct Evaluator {
    enc: Encryptor,
    codec: CiphertextCodec,
    rng: ChaCha20Rng,
    parallel: bool,
    stats: Arc<OpStats>,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator").field("bits", &self.enc.pk().bits()).field("parallel", &self.parallel).finish()
    }
}

/// Smallest number of multiplications worth a separate session in parallel mode.
const MIN_CHUNK: usize = 8;

impl Evaluator {
    pub fn new(enc: Encryptor, rng: ChaCha20Rng) -> Self {
        let codec = CiphertextCodec::for_key(enc.pk());
        Evaluator { enc, codec, rng, parallel: false, stats: Arc::new(OpStats::default()) }
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Shares `stats` instead of fresh counters.
    pub fn with_stats(mut self, stats: Arc<OpStats>) -> Self {
        self.stats = stats;
        self
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel
    }

    /// A child evaluator with an independent generator and shared counters.
    pub fn fork(&mut self) -> Evaluator {
        Evaluator {
            enc: self.enc.clone(),
            codec: self.codec,
            rng: ChaCha20Rng::from_seed(self.rng.gen()),
            parallel: self.parallel,
            stats: self.stats.clone(),
        }
    }

    fn forks(&mut self, n: usize) -> Vec<Evaluator> {
        (0..n).map(|_| self.fork()).collect()
    }

    pub fn pk(&self) -> &PublicKey {
        self.enc.pk()
    }

    pub fn encryptor(&self) -> &Encryptor {
        &self.enc
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn stats(&self) -> &Arc<OpStats> {
        &self.stats
    }

    pub fn encrypt(&mut self, m: &Integer) -> Ciphertext {
        self.enc.encrypt(m, &mut self.rng)
    }

    pub fn encrypt_u64(&mut self, m: u64) -> Ciphertext {
        self.enc.encrypt_u64(m, &mut self.rng)
    }

    /// `[z]` for a plaintext `z < 2^l`, MSB first.
    pub fn encrypt_bits(&mut self, z: u64, l: usize) -> EncBitVec {
        EncBitVec((0..l).rev().map(|i| self.enc.encrypt_bit(i < 64 && (z >> i) & 1 == 1, &mut self.rng)).collect())
    }

    fn session(&self, ch: &Channel) -> Session {
        OpStats::bump(&self.stats.sessions, 1);
        ch.open_session()
    }

    fn exchange(&self, s: &mut Session, id: u16, payload: Vec<u8>) -> Result<Vec<u8>> {
        s.request(id, payload)
    }

    fn nonzero(&mut self) -> Integer {
        random::nonzero_below(self.enc.pk().n(), &mut self.rng)
    }

    /// `E(-(x * s))` as the inverse of `x^s`.
    fn neg_scaled(&self, x: &Ciphertext, s: &Integer) -> Ciphertext {
        let pk = self.enc.pk();
        pk.neg(&pk.scalar_mul(x, s))
    }

    // ---------------------------------------------------------------- SM

    /// Secure multiplication of each pair inside an open session: one
    /// message each way for the whole batch.
    fn multiply_in(
        &mut self,
        s: &mut Session,
        id: u16,
        pairs: &[(&Ciphertext, &Ciphertext)],
        pinned: Option<&[(Integer, Integer)]>,
    ) -> Result<Vec<Ciphertext>> {
        let pk = self.enc.pk().clone();
        let mut masks = Vec::with_capacity(pairs.len());
        let mut out = Vec::with_capacity(2 * pairs.len());
        for (i, (a, b)) in pairs.iter().enumerate() {
            let ((ra, era), (rb, erb)) = match pinned {
                Some(p) => ((p[i].0.clone(), self.encrypt(&p[i].0)), (p[i].1.clone(), self.encrypt(&p[i].1))),
                None => (self.enc.mask(&mut self.rng), self.enc.mask(&mut self.rng)),
            };
            out.push(pk.add(a, &era));
            out.push(pk.add(b, &erb));
            masks.push((ra, rb));
        }
        let reply = self.exchange(s, id, Writer::new(&self.codec).cts(&out)?.finish())?;
        let h = self.codec.decode_exact(&reply, pairs.len())?;
        OpStats::bump(&self.stats.multiplications, pairs.len() as u64);
        let n = pk.n().clone();
        let mut products = Vec::with_capacity(pairs.len());
        for ((hp, (a, b)), (ra, rb)) in h.iter().zip(pairs).zip(&masks) {
            // E(ab) = h' * E(a)^(N - r_b) * E(b)^(N - r_a) * E(-r_a r_b)
            let correction = (-(Integer::from(ra * rb))).rem_euc(&n);
            let mut acc = pk.add(hp, &self.neg_scaled(a, rb));
            acc = pk.add(&acc, &self.neg_scaled(b, ra));
            acc = pk.add(&acc, &self.encrypt(&correction));
            products.push(acc);
        }
        Ok(products)
    }

    /// `E(a * b)`.
    pub fn sm(&mut self, ch: &Channel, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let mut s = self.session(ch);
        Ok(self.multiply_in(&mut s, ids::SM, &[(a, b)], None)?.remove(0))
    }

    /// `E(a * b)` with caller-chosen masks `r_a`, `r_b`.
    pub fn sm_with_masks(
        &mut self,
        ch: &Channel,
        a: &Ciphertext,
        b: &Ciphertext,
        r_a: &Integer,
        r_b: &Integer,
    ) -> Result<Ciphertext> {
        let mut s = self.session(ch);
        Ok(self.multiply_in(&mut s, ids::SM, &[(a, b)], Some(&[(r_a.clone(), r_b.clone())]))?.remove(0))
    }

    /// Many independent products. One session, or several concurrent ones in
    /// parallel mode.
    pub fn sm_batch(&mut self, ch: &Channel, pairs: &[(Ciphertext, Ciphertext)]) -> Result<Vec<Ciphertext>> {
        self.multiply_batch(ch, ids::SM, pairs)
    }

    fn multiply_batch(&mut self, ch: &Channel, id: u16, pairs: &[(Ciphertext, Ciphertext)]) -> Result<Vec<Ciphertext>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let chunk = if self.parallel {
            pairs.len().div_ceil(2 * rayon::current_num_threads()).max(MIN_CHUNK)
        } else {
            pairs.len()
        };
        let chunks: Vec<&[(Ciphertext, Ciphertext)]> = pairs.chunks(chunk).collect();
        let forks = self.forks(chunks.len());
        let run = |(mut ev, part): (Evaluator, &[(Ciphertext, Ciphertext)])| -> Result<Vec<Ciphertext>> {
            let refs: Vec<(&Ciphertext, &Ciphertext)> = part.iter().map(|(a, b)| (a, b)).collect();
            let mut s = ev.session(ch);
            ev.multiply_in(&mut s, id, &refs, None)
        };
        let parts: Vec<Result<Vec<Ciphertext>>> = if self.parallel && chunks.len() > 1 {
            forks.into_par_iter().zip(chunks).map(run).collect()
        } else {
            forks.into_iter().zip(chunks).map(run).collect()
        };
        let mut out = Vec::with_capacity(pairs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    // -------------------------------------------------------------- SSED

    /// `E(|x - y|^2)`: `m` multiplications in a single round trip.
    pub fn ssed(&mut self, ch: &Channel, x: &[Ciphertext], y: &[Ciphertext]) -> Result<Ciphertext> {
        if x.len() != y.len() {
            return Err(Error::Contract(format!("vectors of length {} and {}", x.len(), y.len())));
        }
        if x.is_empty() {
            return Err(Error::Contract("empty vectors".into()));
        }
        let pk = self.enc.pk().clone();
        let diffs: Vec<Ciphertext> = x.iter().zip(y).map(|(a, b)| pk.sub(a, b)).collect();
        let pairs: Vec<(&Ciphertext, &Ciphertext)> = diffs.iter().map(|d| (d, d)).collect();
        let mut s = self.session(ch);
        let squares = self.multiply_in(&mut s, ids::SSED, &pairs, None)?;
        OpStats::bump(&self.stats.ssed, 1);
        Ok(squares.iter().skip(1).fold(squares[0].clone(), |acc, sq| pk.add(&acc, sq)))
    }

    // --------------------------------------------------------------- SBD

    fn check_bit_length(&self, l: usize) -> Result<()> {
        // Masks are drawn below N - 2^l; keep l well clear of the modulus.
        if l == 0 || l as u32 + 2 >= self.enc.pk().bits() / 2 {
            return Err(Error::Config(format!("bit length {l} outside 1..K/2-2")));
        }
        Ok(())
    }

    /// `[z]` for `0 <= z < 2^l`, MSB first.
    pub fn sbd(&mut self, ch: &Channel, z: &Ciphertext, l: usize) -> Result<EncBitVec> {
        Ok(self.sbd_many(ch, std::slice::from_ref(z), l)?.remove(0))
    }

    /// Decomposes several values in lockstep: `l + 1` round trips in total.
    ///
    /// Each round P1 masks the remaining value `t` additively with `r` drawn
    /// below `N - 2^l` (so `t + r` never wraps for in-range inputs), P2
    /// returns the encrypted parity of `t + r`, and P1 corrects by the parity
    /// of `r` and peels the bit off: `t <- (t - bit) / 2`. A final round
    /// checks that nothing remains, which fails for any `z >= 2^l`.
    pub fn sbd_many(&mut self, ch: &Channel, zs: &[Ciphertext], l: usize) -> Result<Vec<EncBitVec>> {
        self.check_bit_length(l)?;
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let pk = self.enc.pk().clone();
        let n = pk.n().clone();
        let mask_bound = Integer::from(&n - (Integer::from(1) << l as u32));
        let inv2 = Integer::from(&n + 1u32) >> 1u32;
        let one = pk.trivial(&Integer::from(1));
        let mut s = self.session(ch);
        let mut t: Vec<Ciphertext> = zs.to_vec();
        let mut lsb_first: Vec<Vec<Ciphertext>> = vec![Vec::with_capacity(l); zs.len()];
        for _ in 0..l {
            let mut masks = Vec::with_capacity(t.len());
            let mut masked = Vec::with_capacity(t.len());
            for ti in &t {
                let r = random::below(&mask_bound, &mut self.rng);
                masked.push(pk.add(ti, &self.encrypt(&r)));
                masks.push(r.is_odd());
            }
            let reply = self.exchange(&mut s, ids::SBD_PARITY, Writer::new(&self.codec).cts(&masked)?.finish())?;
            let parities = self.codec.decode_exact(&reply, t.len())?;
            for ((ti, p), (odd, bits)) in t.iter_mut().zip(parities).zip(masks.into_iter().zip(&mut lsb_first)) {
                let bit = if odd { pk.sub(&one, &p) } else { p };
                *ti = pk.scalar_mul(&pk.sub(ti, &bit), &inv2);
                bits.push(bit);
            }
        }
        let masks: Vec<(Integer, Ciphertext)> = t.iter().map(|_| self.enc.mask(&mut self.rng)).collect();
        let masked: Vec<Ciphertext> = t.iter().zip(&masks).map(|(ti, (_, er))| pk.add(ti, er)).collect();
        let reply = self.exchange(&mut s, ids::SBD_VERIFY, Writer::new(&self.codec).cts(&masked)?.finish())?;
        let plain = plaintext_codec(&pk).split(&reply)?;
        if plain.len() != t.len() {
            return Err(Error::Protocol(format!("expected {} verification values, got {}", t.len(), plain.len())));
        }
        if plain.iter().zip(&masks).any(|(y, (r, _))| y != r) {
            return Err(Error::DomainOverflow { bits: l as u32 });
        }
        OpStats::bump(&self.stats.sbd, zs.len() as u64);
        Ok(lsb_first
            .into_iter()
            .map(|mut b| {
                b.reverse();
                EncBitVec(b)
            })
            .collect())
    }

    // -------------------------------------------------------------- SBOR

    fn or_from_and(&self, o1: &Ciphertext, o2: &Ciphertext, and: &Ciphertext) -> Ciphertext {
        let pk = self.enc.pk();
        pk.sub(&pk.add(o1, o2), and)
    }

    /// `E(o1 OR o2)` for bits, as `o1 + o2 - o1 o2`.
    pub fn sbor(&mut self, ch: &Channel, o1: &Ciphertext, o2: &Ciphertext) -> Result<Ciphertext> {
        let mut s = self.session(ch);
        let and = self.multiply_in(&mut s, ids::SBOR, &[(o1, o2)], None)?.remove(0);
        OpStats::bump(&self.stats.sbor, 1);
        Ok(self.or_from_and(o1, o2, &and))
    }

    /// Elementwise OR over many independent bit pairs.
    pub fn sbor_batch(&mut self, ch: &Channel, pairs: &[(Ciphertext, Ciphertext)]) -> Result<Vec<Ciphertext>> {
        let ands = self.multiply_batch(ch, ids::SBOR, pairs)?;
        OpStats::bump(&self.stats.sbor, pairs.len() as u64);
        Ok(pairs.iter().zip(&ands).map(|((a, b), and)| self.or_from_and(a, b, and)).collect())
    }

    // ------------------------------------------------------ SMIN / SMAX

    /// `([min(u, v)], bundle of the minimum)`. On `u == v` either bundle may
    /// come back, depending on the hidden coin.
    pub fn smin(&mut self, ch: &Channel, u: &RankedValue, v: &RankedValue) -> Result<RankedValue> {
        Ok(self.compare(ch, Extremum::Min, u, v, None)?.0)
    }

    /// `([max(u, v)], bundle of the maximum)`, with the same tie rule.
    pub fn smax(&mut self, ch: &Channel, u: &RankedValue, v: &RankedValue) -> Result<RankedValue> {
        Ok(self.compare(ch, Extremum::Max, u, v, None)?.0)
    }

    /// A comparison session that also returns every intermediate vector,
    /// optionally with the coin and permutations fixed.
    pub fn compare_traced(
        &mut self,
        ch: &Channel,
        which: Extremum,
        u: &RankedValue,
        v: &RankedValue,
        pins: Option<&SminPins>,
    ) -> Result<(RankedValue, SminTrace)> {
        self.compare(ch, which, u, v, pins)
    }

    fn compare(
        &mut self,
        ch: &Channel,
        which: Extremum,
        u: &RankedValue,
        v: &RankedValue,
        pins: Option<&SminPins>,
    ) -> Result<(RankedValue, SminTrace)> {
        let l = u.value.len();
        let arity = u.bundle.len();
        if l == 0 || v.value.len() != l {
            return Err(Error::Contract(format!("bit lengths {} and {}", l, v.value.len())));
        }
        if v.bundle.len() != arity {
            return Err(Error::Contract(format!("bundle sizes {} and {}", arity, v.bundle.len())));
        }
        if let Some(p) = pins {
            if p.pi1.len() != l || p.pi2.len() != l {
                return Err(Error::Contract("pinned permutations must have length l".into()));
            }
        }
        let pk = self.enc.pk().clone();
        let (mul_id, cmp_id) = which.ids();
        let u_greater_v = pins.map_or_else(|| self.rng.gen::<bool>(), |p| p.u_greater_v);
        let (ub, vb) = (u.value.bits(), v.value.bits());

        let mut s = self.session(ch);
        let pairs: Vec<(&Ciphertext, &Ciphertext)> = ub.iter().zip(vb).collect();
        let products = self.multiply_in(&mut s, mul_id, &pairs, None)?;

        // The operand whose bit W flags: the larger one under F for min, the
        // smaller one for max. Gamma, delta and the final combination do not
        // change between the two.
        let w_from_u = u_greater_v == (which == Extremum::Min);
        let minus_one = pk.trivial(&Integer::from(-1));
        let mut t = Vec::with_capacity(l);
        let mut h: Vec<Ciphertext> = Vec::with_capacity(l);
        let mut phi = Vec::with_capacity(l);
        let mut w = Vec::with_capacity(l);
        let mut gamma = Vec::with_capacity(l);
        let mut big_l = Vec::with_capacity(l);
        let mut r_hat = Vec::with_capacity(l);
        for i in 0..l {
            let prod_inv = pk.neg(&products[i]);
            // u xor v = u + v - 2uv
            let ti = pk.add(&pk.add(&ub[i], &vb[i]), &pk.add(&prod_inv, &prod_inv));
            let hi = match h.last() {
                None => ti.clone(),
                Some(prev) => {
                    let r = self.nonzero();
                    pk.add(&pk.scalar_mul(prev, &r), &ti)
                }
            };
            let phi_i = pk.add(&minus_one, &hi);
            let wi = pk.add(if w_from_u { &ub[i] } else { &vb[i] }, &prod_inv);
            let (rh, erh) = self.enc.mask(&mut self.rng);
            let diff = if u_greater_v { pk.sub(&vb[i], &ub[i]) } else { pk.sub(&ub[i], &vb[i]) };
            let gi = pk.add(&diff, &erh);
            let r_prime = self.nonzero();
            let li = pk.add(&wi, &pk.scalar_mul(&phi_i, &r_prime));
            t.push(ti);
            h.push(hi);
            phi.push(phi_i);
            w.push(wi);
            gamma.push(gi);
            big_l.push(li);
            r_hat.push(rh);
        }
        let mut r_bar = Vec::with_capacity(arity);
        let mut delta = Vec::with_capacity(arity);
        for j in 0..arity {
            let (su, sv) = (&u.bundle.0[j], &v.bundle.0[j]);
            let (rb, erb) = self.enc.mask(&mut self.rng);
            let diff = if u_greater_v { pk.sub(sv, su) } else { pk.sub(su, sv) };
            delta.push(pk.add(&diff, &erb));
            r_bar.push(rb);
        }
        let (pi1, pi2) = match pins {
            Some(p) => (p.pi1.clone(), p.pi2.clone()),
            None => (Permutation::random(l, &mut self.rng), Permutation::random(l, &mut self.rng)),
        };
        let gamma_permuted = pi1.apply(&gamma);
        let l_permuted = pi2.apply(&big_l);

        let request = Writer::new(&self.codec)
            .count(l)
            .count(arity)
            .cts(&gamma_permuted)?
            .cts(&l_permuted)?
            .cts(&delta)?
            .finish();
        let reply = self.exchange(&mut s, cmp_id, request)?;
        let mut r = Reader::new(&self.codec, &reply);
        let m_prime = r.cts(l)?;
        let e_alpha = r.cts(1)?.remove(0);
        let delta_prime = r.cts(arity)?;
        r.finish()?;

        let m_tilde = pi1.invert(&m_prime);
        let lambda: Vec<Ciphertext> =
            m_tilde.iter().zip(&r_hat).map(|(m, rh)| pk.add(m, &self.neg_scaled(&e_alpha, rh))).collect();
        let theta: Vec<Ciphertext> =
            delta_prime.iter().zip(&r_bar).map(|(d, rb)| pk.add(d, &self.neg_scaled(&e_alpha, rb))).collect();
        let (base_bits, base_bundle) = if u_greater_v { (ub, &u.bundle) } else { (vb, &v.bundle) };
        let bits: Vec<Ciphertext> = base_bits.iter().zip(&lambda).map(|(b, x)| pk.add(b, x)).collect();
        let bundle: Vec<Ciphertext> = base_bundle.0.iter().zip(&theta).map(|(b, x)| pk.add(b, x)).collect();

        match which {
            Extremum::Min => OpStats::bump(&self.stats.smin, 1),
            Extremum::Max => OpStats::bump(&self.stats.smax, 1),
        }
        let trace = SminTrace {
            u_greater_v,
            products,
            t,
            h,
            phi,
            w,
            gamma,
            l: big_l,
            gamma_permuted,
            l_permuted,
            lambda,
            alpha: e_alpha,
        };
        Ok((RankedValue::new(EncBitVec(bits), SecretBundle(bundle)), trace))
    }

    /// Global minimum of `items` and its bundle, by a pairwise tournament of
    /// `n - 1` sessions.
    pub fn smin_n(&mut self, ch: &Channel, items: Vec<RankedValue>) -> Result<RankedValue> {
        self.tournament(ch, Extremum::Min, items)
    }

    /// Global maximum of `items` and its bundle.
    pub fn smax_w(&mut self, ch: &Channel, items: Vec<RankedValue>) -> Result<RankedValue> {
        self.tournament(ch, Extremum::Max, items)
    }

    /// Runs the tournament for either extremum.
    pub fn tournament(&mut self, ch: &Channel, which: Extremum, items: Vec<RankedValue>) -> Result<RankedValue> {
        let Some(first) = items.first() else {
            return Err(Error::Contract("tournament over zero items".into()));
        };
        let (l, arity) = (first.value.len(), first.bundle.len());
        if items.iter().any(|x| x.value.len() != l || x.bundle.len() != arity) {
            return Err(Error::Contract("tournament items differ in bit length or bundle size".into()));
        }
        let mut slots: Vec<Option<RankedValue>> = items.into_iter().map(Some).collect();
        for round in tournament_schedule(slots.len()) {
            let forks = self.forks(round.len());
            let jobs: Vec<(usize, RankedValue, RankedValue, Evaluator)> = round
                .iter()
                .zip(forks)
                .map(|(&(a, b), ev)| (a, slots[a].take().expect("live slot"), slots[b].take().expect("live slot"), ev))
                .collect();
            let run = |(a, u, v, mut ev): (usize, RankedValue, RankedValue, Evaluator)| {
                ev.compare(ch, which, &u, &v, None).map(|(winner, _)| (a, winner))
            };
            let results: Vec<Result<(usize, RankedValue)>> = if self.parallel && jobs.len() > 1 {
                jobs.into_par_iter().map(run).collect()
            } else {
                jobs.into_iter().map(run).collect()
            };
            for r in results {
                let (a, winner) = r?;
                slots[a] = Some(winner);
            }
        }
        Ok(slots.swap_remove(0).expect("winner in first slot"))
    }

    // ---------------------------------------------------------------- SF

    /// `E(f(c_j))` for each label: how often it occurs among `neighbors`.
    pub fn sf(&mut self, ch: &Channel, labels: &[Ciphertext], neighbors: &[Ciphertext]) -> Result<Vec<Ciphertext>> {
        let (w, k) = (labels.len(), neighbors.len());
        if w == 0 || k == 0 {
            return Err(Error::Contract("frequency over an empty label or neighbor list".into()));
        }
        let pk = self.enc.pk().clone();
        let mut perms = Vec::with_capacity(k);
        let mut z = Vec::with_capacity(k * w);
        for c_prime in neighbors {
            let t = pk.neg(c_prime);
            let row: Vec<Ciphertext> = labels
                .iter()
                .map(|c| {
                    let r = self.nonzero();
                    pk.scalar_mul(&pk.add(c, &t), &r)
                })
                .collect();
            let pi = Permutation::random(w, &mut self.rng);
            z.extend(pi.apply(&row));
            perms.push(pi);
        }
        let mut s = self.session(ch);
        let reply = self.exchange(&mut s, ids::SF, Writer::new(&self.codec).count(w).cts(&z)?.finish())?;
        let u = self.codec.decode_exact(&reply, k * w)?;
        let mut freq: Vec<Option<Ciphertext>> = vec![None; w];
        for (row, pi) in u.chunks(w).zip(&perms) {
            for (acc, v) in freq.iter_mut().zip(pi.invert(row)) {
                *acc = Some(match acc.take() {
                    None => v,
                    Some(prev) => pk.add(&prev, &v),
                });
            }
        }
        OpStats::bump(&self.stats.sf, 1);
        Ok(freq.into_iter().map(|f| f.expect("k >= 1")).collect())
    }

    // ----------------------------------------------------------- one-hot

    /// Oblivious one-hot vector for an encrypted index `I` in `1..=n`:
    /// `V_i = E(1)` iff `i == I`, without either party learning `I`.
    ///
    /// P1 sends `pi(E(r_i (i - I)))` under a fresh permutation; P2 marks the
    /// single zero; P1 undoes the permutation.
    pub fn one_hot(&mut self, ch: &Channel, index: &Ciphertext, n: usize) -> Result<Vec<Ciphertext>> {
        if n == 0 {
            return Err(Error::Contract("one-hot vector of length zero".into()));
        }
        let pk = self.enc.pk().clone();
        let delta = pk.neg(index);
        let mut tau = Vec::with_capacity(n);
        for i in 1..=n as u64 {
            let ei = self.encrypt_u64(i);
            let r = self.nonzero();
            tau.push(pk.scalar_mul(&pk.add(&ei, &delta), &r));
        }
        let pi = Permutation::random(n, &mut self.rng);
        let beta = pi.apply(&tau);
        let mut s = self.session(ch);
        let reply = self.exchange(&mut s, ids::ONE_HOT, Writer::new(&self.codec).cts(&beta)?.finish())?;
        let u_prime = self.codec.decode_exact(&reply, n)?;
        OpStats::bump(&self.stats.one_hot, 1);
        Ok(pi.invert(&u_prime))
    }
}
