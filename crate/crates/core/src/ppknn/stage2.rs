//! Stage 2: the majority class among the k neighbor labels, still encrypted.

use crate::error::{Error, Result};
use crate::mpc::{Evaluator, RankedValue, SecretBundle};
use crate::paillier::Ciphertext;
use crate::transport::Channel;

/// Bits needed for a frequency in `0..=k`.
pub fn frequency_bits(k: usize) -> usize {
    (usize::BITS - k.leading_zeros()).max(1) as usize
}

/// `E(c_q)`: the class occurring most often among `neighbors`.
///
/// Counts each class obliviously, decomposes the counts to
/// [`frequency_bits`] bits and runs a maximum tournament that carries each
/// class along as its secret. Tied counts resolve to either class.
pub fn majority_class(ev: &mut Evaluator, ch: &Channel, classes: &[Ciphertext], neighbors: &[Ciphertext]) -> Result<Ciphertext> {
    if classes.len() < 2 {
        return Err(Error::Contract(format!("need at least 2 classes, got {}", classes.len())));
    }
    let freq = ev.sf(ch, classes, neighbors)?;
    let bits = ev.sbd_many(ch, &freq, frequency_bits(neighbors.len()))?;
    let items = bits
        .into_iter()
        .zip(classes)
        .map(|(f, c)| RankedValue::new(f, SecretBundle(vec![c.clone()])))
        .collect();
    let winner = ev.smax_w(ch, items)?;
    Ok(winner.bundle.0.into_iter().next().expect("one-element bundle"))
}
