//! Length-prefixed framing over TCP or in-process Unix socket pairs.

mod channel;
mod codec;
mod frame;

pub use channel::{Channel, Session, Traffic, ERROR_ID, HANDSHAKE_ID, HANDSHAKE_MAGIC, PROTOCOL_VERSION};
pub use codec::{plaintext_codec, CiphertextCodec, FixedWidth};
pub use frame::{Frame, HEADER_LEN, LENGTH_PREFIX, MAX_FRAME_LEN};

/// Default TCP port of the data-hosting cloud.
pub const DEFAULT_C1_PORT: u16 = 7741;
/// Default TCP port of the key-holding cloud.
pub const DEFAULT_C2_PORT: u16 = 7742;
