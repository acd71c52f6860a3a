//! Two-party sub-protocols between P1, which holds ciphertexts, and P2, which
//! holds the secret key.
//!
//! P1 drives every protocol through an [`Evaluator`]; P2 is a stateless
//! per-message responder, [`KeyHolder`]. Each invocation runs in its own
//! session on a shared [`Channel`](crate::transport::Channel).

mod evaluator;
mod keyholder;
pub(crate) mod payload;
mod types;

pub use evaluator::{Evaluator, Extremum, SminPins, SminTrace};
pub use keyholder::{Dispatch, KeyHolder};
pub use types::{tournament_schedule, EncBitVec, Permutation, RankedValue, SecretBundle};

use std::sync::atomic::{AtomicU64, Ordering};

use rug::Integer;

/// Protocol ids. The high byte names the sub-protocol, the low byte the step.
/// Step `0x01` of a multiplication-based protocol is always a batch of
/// secure multiplications.
pub mod ids {
    pub const SM: u16 = 0x0101;
    pub const SSED: u16 = 0x0201;
    pub const SBD_PARITY: u16 = 0x0301;
    pub const SBD_VERIFY: u16 = 0x0302;
    pub const SBOR: u16 = 0x0401;
    pub const SMIN_MUL: u16 = 0x0501;
    pub const SMIN_CMP: u16 = 0x0502;
    pub const SMAX_MUL: u16 = 0x0601;
    pub const SMAX_CMP: u16 = 0x0602;
    pub const SF: u16 = 0x0701;
    pub const ONE_HOT: u16 = 0x0801;

    /// Ids answered by a plain batch of multiplications.
    pub const MULTIPLY: [u16; 5] = [SM, SSED, SBOR, SMIN_MUL, SMAX_MUL];

    /// Every id a [`KeyHolder`](super::KeyHolder) answers.
    pub const ALL: [u16; 11] =
        [SM, SSED, SBD_PARITY, SBD_VERIFY, SBOR, SMIN_MUL, SMIN_CMP, SMAX_MUL, SMAX_CMP, SF, ONE_HOT];
}

/// Hooks into what the key holder sees. Used by tests to check that P2 only
/// ever observes masked values and to measure the distribution of the bits
/// it learns.
pub trait Observer: Send + Sync {
    /// Every plaintext P2 obtains by decryption, per message.
    fn decrypted(&self, _protocol_id: u16, _values: &[Integer]) {}
    /// Products `h = h_a * h_b mod N` computed while answering a multiplication batch.
    fn products(&self, _protocol_id: u16, _h: &[Integer]) {}
    /// The comparison bit of one min/max session.
    fn alpha(&self, _protocol_id: u16, _alpha: bool) {}
}

/// Observer that ignores everything.
#[derive(Debug, Default)]
pub struct Silent;

impl Observer for Silent {}

/// Per-operation invocation counts, shared by an evaluator and all its forks.
#[derive(Debug, Default)]
pub struct OpStats {
    pub multiplications: AtomicU64,
    pub ssed: AtomicU64,
    pub sbd: AtomicU64,
    pub sbor: AtomicU64,
    pub smin: AtomicU64,
    pub smax: AtomicU64,
    pub sf: AtomicU64,
    pub one_hot: AtomicU64,
    pub sessions: AtomicU64,
}

impl OpStats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }

    fn bump(counter: &AtomicU64, by: u64) {
        counter.fetch_add(by, Ordering::Relaxed);
    }
}
