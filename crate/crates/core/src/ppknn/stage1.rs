//! Stage 1: obliviously retrieve the labels of the k records nearest the query.

use rayon::prelude::*;

use super::database::{EncDatabase, EncQuery};
use crate::error::{Error, Result};
use crate::mpc::{EncBitVec, Evaluator, RankedValue, SecretBundle};
use crate::paillier::Ciphertext;
use crate::transport::Channel;

/// Stage 1 state held by C1, advanced one neighbor at a time.
///
/// Invariant: after `s` steps the distance bits of the `s` records already
/// chosen are all `E(1)`, i.e. they encode `2^l - 1`, which exceeds every real
/// distance, so later minimum searches skip them. The scalar distances are
/// dropped as soon as they are decomposed.
pub struct Stage1 {
    distances: Vec<EncBitVec>,
    indices: Vec<Ciphertext>,
    labels: Vec<Ciphertext>,
    chosen: Vec<Ciphertext>,
    last_index: Option<Ciphertext>,
    last_selection: Option<Vec<Ciphertext>>,
}

impl Stage1 {
    /// Computes `[d_i]` for every record: one distance session and one
    /// decomposition per record, independent across records.
    pub fn start(ev: &mut Evaluator, ch: &Channel, query: &EncQuery, db: &EncDatabase) -> Result<Self> {
        let p = &db.params;
        if query.attrs.len() != p.m {
            return Err(Error::Contract(format!("query has {} attributes, database has {}", query.attrs.len(), p.m)));
        }
        if db.records.is_empty() {
            return Err(Error::Contract("empty database".into()));
        }
        let forks: Vec<Evaluator> = db.records.iter().map(|_| ev.fork()).collect();
        let run = |(rec, mut f): (&super::EncRecord, Evaluator)| -> Result<EncBitVec> {
            let d = f.ssed(ch, &query.attrs, &rec.attrs)?;
            f.sbd(ch, &d, p.l)
        };
        let distances: Result<Vec<EncBitVec>> = if ev.is_parallel() {
            db.records.par_iter().zip(forks).map(run).collect()
        } else {
            db.records.iter().zip(forks).map(run).collect()
        };
        let indices = (1..=p.n as u64).map(|i| ev.encrypt_u64(i)).collect();
        let labels = db.records.iter().map(|r| r.label.clone()).collect();
        Ok(Stage1 { distances: distances?, indices, labels, chosen: Vec::new(), last_index: None, last_selection: None })
    }

    /// Selects the next nearest record and excludes it from later steps.
    /// Returns its encrypted label.
    pub fn step(&mut self, ev: &mut Evaluator, ch: &Channel) -> Result<Ciphertext> {
        let n = self.distances.len();
        if self.chosen.len() == n {
            return Err(Error::Contract(format!("all {n} records already selected")));
        }
        let items: Vec<RankedValue> = self
            .distances
            .iter()
            .zip(self.indices.iter().zip(&self.labels))
            .map(|(d, (i, c))| RankedValue::new(d.clone(), SecretBundle(vec![i.clone(), c.clone()])))
            .collect();
        let winner = ev.smin_n(ch, items)?;
        let [index, label]: [Ciphertext; 2] = winner.bundle.0.try_into().expect("two-element bundle");
        let selection = ev.one_hot(ch, &index, n)?;
        // Every bit of the chosen record becomes 1; all others are unchanged.
        let l = self.distances[0].len();
        let pairs: Vec<(Ciphertext, Ciphertext)> = self
            .distances
            .iter()
            .zip(&selection)
            .flat_map(|(d, v)| d.bits().iter().map(move |bit| (v.clone(), bit.clone())))
            .collect();
        let updated = ev.sbor_batch(ch, &pairs)?;
        for (d, bits) in self.distances.iter_mut().zip(updated.chunks(l)) {
            *d = EncBitVec(bits.to_vec());
        }
        self.chosen.push(label.clone());
        self.last_index = Some(index);
        self.last_selection = Some(selection);
        Ok(label)
    }

    /// Runs `k` steps and returns the k encrypted neighbor labels, nearest first.
    pub fn run(ev: &mut Evaluator, ch: &Channel, query: &EncQuery, db: &EncDatabase, k: usize) -> Result<Vec<Ciphertext>> {
        check_k(k, db.params.n)?;
        let mut s = Stage1::start(ev, ch, query, db)?;
        for _ in 0..k {
            s.step(ev, ch)?;
        }
        Ok(s.chosen)
    }

    /// Current distance bits, one vector per record.
    pub fn distances(&self) -> &[EncBitVec] {
        &self.distances
    }

    /// Labels selected so far, nearest first.
    pub fn chosen(&self) -> &[Ciphertext] {
        &self.chosen
    }

    /// `E(I)` of the record chosen by the last step.
    pub fn last_index(&self) -> Option<&Ciphertext> {
        self.last_index.as_ref()
    }

    /// The one-hot vector `V` of the last step.
    pub fn last_selection(&self) -> Option<&[Ciphertext]> {
        self.last_selection.as_deref()
    }
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}
