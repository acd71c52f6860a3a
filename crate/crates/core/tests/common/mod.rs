//! Shared fixtures and plaintext oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rug::Integer;

use ppknn::dataset::PlainTable;
use ppknn::mpc::{Evaluator, KeyHolder, Observer, RankedValue, SecretBundle};
use ppknn::paillier::{keygen, Ciphertext, Encryptor, SecretKey};
use ppknn::ppknn::{owner_encrypt_db, EngineOptions, LocalDeployment};
use ppknn::random;
use ppknn::transport::Channel;

pub fn sq_dist(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64).sum()
}

/// Every label multiset the k nearest records can have, one per admissible
/// way of breaking ties at the k-th distance. Each entry is a per-class count
/// vector indexed like `classes`.
fn neighbor_histograms(rows: &[Vec<u64>], q: &[u64], k: usize, classes: &[u64]) -> Vec<Vec<usize>> {
    let m = q.len();
    let mut d: Vec<(u64, u64)> = rows.iter().map(|r| (sq_dist(&r[..m], q), r[m])).collect();
    d.sort();
    let dk = d[k - 1].0;
    let class_idx = |c: u64| classes.iter().position(|&x| x == c).unwrap();
    let mut base = vec![0usize; classes.len()];
    let mut tied = vec![0usize; classes.len()];
    for &(dist, c) in &d {
        if dist < dk {
            base[class_idx(c)] += 1;
        } else if dist == dk {
            tied[class_idx(c)] += 1;
        }
    }
    let need = k - base.iter().sum::<usize>();
    let mut out = Vec::new();
    let mut pick = vec![0usize; classes.len()];
    fn rec(j: usize, left: usize, tied: &[usize], pick: &mut Vec<usize>, base: &[usize], out: &mut Vec<Vec<usize>>) {
        if j == tied.len() {
            if left == 0 {
                out.push(base.iter().zip(pick.iter()).map(|(a, b)| a + b).collect());
            }
            return;
        }
        for t in 0..=tied[j].min(left) {
            pick[j] = t;
            rec(j + 1, left - t, tied, pick, base, out);
        }
        pick[j] = 0;
    }
    rec(0, need, &tied, &mut pick, &base, &mut out);
    out
}

/// Labels a plaintext k-NN majority vote may return for `q`, over all tie
/// resolutions of both the k-th distance and the vote. Rows end in the label.
pub fn knn_valid_labels(rows: &[Vec<u64>], q: &[u64], k: usize) -> BTreeSet<u64> {
    let m = q.len();
    let classes: Vec<u64> = rows.iter().map(|r| r[m]).collect::<BTreeSet<_>>().into_iter().collect();
    let mut valid = BTreeSet::new();
    for hist in neighbor_histograms(rows, q, k, &classes) {
        let top = *hist.iter().max().unwrap();
        valid.extend(classes.iter().zip(&hist).filter(|(_, &h)| h == top).map(|(&c, _)| c));
    }
    valid
}

/// Label multisets (sorted) admissible as the k nearest neighbors' labels.
pub fn knn_valid_label_sets(rows: &[Vec<u64>], q: &[u64], k: usize) -> BTreeSet<Vec<u64>> {
    let m = q.len();
    let classes: Vec<u64> = rows.iter().map(|r| r[m]).collect::<BTreeSet<_>>().into_iter().collect();
    neighbor_histograms(rows, q, k, &classes)
        .into_iter()
        .map(|h| classes.iter().zip(&h).flat_map(|(&c, &n)| std::iter::repeat(c).take(n)).collect())
        .collect()
}

/// Records what the key holder decrypts and which comparison bits it sees.
#[derive(Default)]
pub struct Recorder {
    pub decrypted: Mutex<Vec<(u16, Vec<Integer>)>>,
    pub alphas: Mutex<Vec<bool>>,
    pub products: Mutex<Vec<Integer>>,
}

impl Observer for Recorder {
    fn decrypted(&self, protocol_id: u16, values: &[Integer]) {
        self.decrypted.lock().unwrap().push((protocol_id, values.to_vec()));
    }
    fn products(&self, _protocol_id: u16, h: &[Integer]) {
        self.products.lock().unwrap().extend_from_slice(h);
    }
    fn alpha(&self, _protocol_id: u16, alpha: bool) {
        self.alphas.lock().unwrap().push(alpha);
    }
}

/// An evaluator wired to a key holder over a loopback channel.
pub struct Pair {
    pub sk: Arc<SecretKey>,
    pub ev: Evaluator,
    pub ch: Channel,
    pub rec: Arc<Recorder>,
}

pub fn pair(bits: u32, seed: u64) -> Pair {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (pk, sk) = keygen(bits, &mut rng).unwrap();
    let sk = Arc::new(sk);
    let rec = Arc::new(Recorder::default());
    let (ch, far) = Channel::loopback_pair(bits).unwrap();
    Arc::new(KeyHolder::new(sk.clone()).with_rng(random::fork(&mut rng)).with_observer(rec.clone())).spawn(far);
    let ev = Evaluator::new(Encryptor::public(Arc::new(pk)), random::fork(&mut rng));
    Pair { sk, ev, ch, rec }
}

impl Pair {
    pub fn dec(&self, c: &Ciphertext) -> Integer {
        self.sk.decrypt(c).unwrap()
    }

    pub fn decs(&self, cs: &[Ciphertext]) -> Vec<Integer> {
        cs.iter().map(|c| self.dec(c)).collect()
    }

    pub fn ranked(&mut self, z: u64, l: usize, secrets: &[u64]) -> RankedValue {
        let bits = self.ev.encrypt_bits(z, l);
        let bundle = SecretBundle(secrets.iter().map(|&s| self.ev.encrypt_u64(s)).collect());
        RankedValue::new(bits, bundle)
    }
}

/// All roles in process over `rows`, with C2's view recorded.
pub fn deployment(rows: Vec<Vec<u64>>, attr_bits: u32, bits: u32, seed: u64, parallel: bool) -> (LocalDeployment, Arc<Recorder>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (pk, sk) = keygen(bits, &mut rng).unwrap();
    let table = PlainTable::new(rows, Some(attr_bits)).unwrap();
    let db = owner_encrypt_db(&Encryptor::public(Arc::new(pk)), &table, &mut rng).unwrap();
    let rec = Arc::new(Recorder::default());
    let holder = KeyHolder::new(Arc::new(sk)).with_observer(rec.clone()).with_parallel(parallel);
    let opts = EngineOptions { parallel, ..Default::default() };
    (LocalDeployment::new(db, holder, opts).unwrap(), rec)
}
