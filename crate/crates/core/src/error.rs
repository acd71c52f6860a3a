use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped by the layer that raises them. [`Error::is_protocol_fault`]
/// separates faults that abort a running two-party session from configuration
/// and input problems that are caught before any traffic is exchanged.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("plaintext out of range: {0}")]
    Range(String),

    #[error("malformed ciphertext: {0}")]
    MalformedCiphertext(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("value does not fit in {bits} bits")]
    DomainOverflow { bits: u32 },

    #[error("statistical collision: {0} masked entries decrypted to 1")]
    Collision(usize),

    #[error("protocol fault: {0}")]
    Protocol(String),

    #[error("peer reported: {0}")]
    Remote(String),

    #[error("framing error: {0}")]
    Framing(String),

    #[error("session {session}: expected message {expected}, got {got}")]
    Ordering { session: u32, expected: u16, got: u16 },

    #[error("handshake failed: {0}")]
    Handshake(String),

    #[error("channel closed")]
    ChannelClosed,

    #[error("file format error: {0}")]
    Format(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("orchestration error: {0}")]
    Orchestration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that happen while two parties are exchanging messages.
    pub fn is_protocol_fault(&self) -> bool {
        matches!(
            self,
            Error::Protocol(_)
                | Error::Remote(_)
                | Error::Collision(_)
                | Error::DomainOverflow { .. }
                | Error::Framing(_)
                | Error::Ordering { .. }
                | Error::Handshake(_)
                | Error::ChannelClosed
                | Error::MalformedCiphertext(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Ingestion(e.to_string())
    }
}
