//! Privacy-preserving k-nearest-neighbor classification over Paillier-encrypted
//! data, executed between two non-colluding clouds.

pub mod error;
pub mod paillier;
pub mod random;
pub mod transport;
pub mod mpc;
pub mod ppknn;
pub mod dataset;
pub mod bench;

pub use error::{Error, Result};
