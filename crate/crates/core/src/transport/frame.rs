use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Bytes between the length prefix and the payload:
/// protocol id (2) + session id (4) + message sequence (2).
pub const HEADER_LEN: usize = 8;

/// Size of the big-endian length prefix.
pub const LENGTH_PREFIX: usize = 4;

/// Upper bound on a single frame body; larger lengths are treated as corruption.
pub const MAX_FRAME_LEN: usize = 1 << 30;

/// One unit on the wire:
///
/// ```text
/// length u32 BE | protocol_id u16 BE | session_id u32 BE | msg_seq u16 BE | payload
/// ```
///
/// `length` counts everything after itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub protocol_id: u16,
    pub session_id: u32,
    pub msg_seq: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(protocol_id: u16, session_id: u32, msg_seq: u16, payload: Vec<u8>) -> Self {
        Frame { protocol_id, session_id, msg_seq, payload }
    }

    /// Total bytes this frame occupies on the wire.
    pub fn wire_len(&self) -> usize {
        LENGTH_PREFIX + HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&((HEADER_LEN + self.payload.len()) as u32).to_be_bytes());
        out.extend_from_slice(&self.protocol_id.to_be_bytes());
        out.extend_from_slice(&self.session_id.to_be_bytes());
        out.extend_from_slice(&self.msg_seq.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write + ?Sized>(&self, w: &mut W) -> Result<usize> {
        let bytes = self.encode();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(bytes.len())
    }

    /// Reads one frame. Returns `Ok(None)` on a clean end of stream at a frame
    /// boundary; a stream that ends mid-frame is a framing error.
    pub fn read_from<R: Read + ?Sized>(r: &mut R) -> Result<Option<Frame>> {
        let mut len_buf = [0u8; LENGTH_PREFIX];
        match read_full(r, &mut len_buf)? {
            0 => return Ok(None),
            n if n < LENGTH_PREFIX => return Err(Error::Framing("stream ended inside length prefix".into())),
            _ => {}
        }
        let len = u32::from_be_bytes(len_buf) as usize;
        if !(HEADER_LEN..=MAX_FRAME_LEN).contains(&len) {
            return Err(Error::Framing(format!("invalid frame length {len}")));
        }
        let mut body = vec![0u8; len];
        if read_full(r, &mut body)? < len {
            return Err(Error::Framing("stream ended inside frame body".into()));
        }
        Ok(Some(Self::decode_body(body)))
    }

    /// Parses a complete encoded frame (length prefix included).
    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        let mut cursor = bytes;
        let frame = Self::read_from(&mut cursor)?.ok_or_else(|| Error::Framing("empty input".into()))?;
        if !cursor.is_empty() {
            return Err(Error::Framing("trailing bytes after frame".into()));
        }
        Ok(frame)
    }

    fn decode_body(mut body: Vec<u8>) -> Frame {
        let protocol_id = u16::from_be_bytes([body[0], body[1]]);
        let session_id = u32::from_be_bytes([body[2], body[3], body[4], body[5]]);
        let msg_seq = u16::from_be_bytes([body[6], body[7]]);
        let payload = body.split_off(HEADER_LEN);
        Frame { protocol_id, session_id, msg_seq, payload }
    }
}

/// Like `read_exact` but reports how many bytes arrived before end of stream.
fn read_full<R: Read + ?Sized>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
