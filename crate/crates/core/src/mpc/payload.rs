//! Message bodies: `u32` counts followed by fixed-width ciphertexts.

use crate::error::{Error, Result};
use crate::paillier::Ciphertext;
use crate::transport::CiphertextCodec;

pub(crate) struct Writer<'a> {
    codec: &'a CiphertextCodec,
    buf: Vec<u8>,
}

impl<'a> Writer<'a> {
    pub fn new(codec: &'a CiphertextCodec) -> Self {
        Writer { codec, buf: Vec::new() }
    }

    pub fn count(mut self, n: usize) -> Self {
        self.buf.extend_from_slice(&(n as u32).to_be_bytes());
        self
    }

    pub fn cts<'c, I: IntoIterator<Item = &'c Ciphertext>>(mut self, cts: I) -> Result<Self> {
        for c in cts {
            self.codec.put(&mut self.buf, c)?;
        }
        Ok(self)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    codec: &'a CiphertextCodec,
    rest: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(codec: &'a CiphertextCodec, bytes: &'a [u8]) -> Self {
        Reader { codec, rest: bytes }
    }

    pub fn count(&mut self) -> Result<usize> {
        if self.rest.len() < 4 {
            return Err(Error::Protocol("message truncated before count".into()));
        }
        let (head, tail) = self.rest.split_at(4);
        self.rest = tail;
        Ok(u32::from_be_bytes(head.try_into().unwrap()) as usize)
    }

    pub fn cts(&mut self, n: usize) -> Result<Vec<Ciphertext>> {
        let bytes = n.checked_mul(self.codec.width()).filter(|&b| b <= self.rest.len());
        let Some(bytes) = bytes else {
            return Err(Error::Protocol(format!("message too short for {n} ciphertexts")));
        };
        let (head, tail) = self.rest.split_at(bytes);
        self.rest = tail;
        self.codec.decode(head)
    }

    /// All remaining ciphertexts.
    pub fn rest(&mut self) -> Result<Vec<Ciphertext>> {
        let out = self.codec.decode(self.rest)?;
        self.rest = &[];
        Ok(out)
    }

    pub fn finish(self) -> Result<()> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(Error::Protocol(format!("{} unexpected trailing bytes", self.rest.len())))
        }
    }
}
