use rug::integer::Order;
use rug::Integer;

use crate::error::{Error, Result};
use crate::paillier::{Ciphertext, PublicKey};

/// Fixed-width unsigned big-endian integer encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedWidth {
    width: usize,
}

impl FixedWidth {
    pub fn new(width: usize) -> Self {
        FixedWidth { width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn put(&self, out: &mut Vec<u8>, value: &Integer) -> Result<()> {
        if *value < 0 {
            return Err(Error::Framing("cannot encode a negative integer".into()));
        }
        let digits = value.to_digits::<u8>(Order::MsfBe);
        if digits.len() > self.width {
            return Err(Error::Framing(format!("{} bytes do not fit width {}", digits.len(), self.width)));
        }
        out.resize(out.len() + self.width - digits.len(), 0);
        out.extend_from_slice(&digits);
        Ok(())
    }

    pub fn get(&self, bytes: &[u8]) -> Integer {
        Integer::from_digits(bytes, Order::MsfBe)
    }

    /// Splits `bytes` into whole integers.
    pub fn split(&self, bytes: &[u8]) -> Result<Vec<Integer>> {
        if self.width == 0 || bytes.len() % self.width != 0 {
            return Err(Error::Framing(format!("payload of {} bytes is not a multiple of {}", bytes.len(), self.width)));
        }
        Ok(bytes.chunks(self.width).map(|c| self.get(c)).collect())
    }
}

/// Ciphertexts at `ceil(2K/8)` bytes each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CiphertextCodec(FixedWidth);

impl CiphertextCodec {
    pub fn for_key(pk: &PublicKey) -> Self {
        CiphertextCodec(FixedWidth::new(pk.ciphertext_width()))
    }

    pub fn for_bits(bits: u32) -> Self {
        CiphertextCodec(FixedWidth::new((2 * bits as usize).div_ceil(8)))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn put(&self, out: &mut Vec<u8>, c: &Ciphertext) -> Result<()> {
        self.0.put(out, c.value())
    }

    pub fn encode<'a, I>(&self, cts: I) -> Result<Vec<u8>>
    where
        I: IntoIterator<Item = &'a Ciphertext>,
    {
        let mut out = Vec::new();
        for c in cts {
            self.put(&mut out, c)?;
        }
        Ok(out)
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Vec<Ciphertext>> {
        Ok(self.0.split(bytes)?.into_iter().map(Ciphertext::from_raw).collect())
    }

    /// Decodes exactly `count` ciphertexts.
    pub fn decode_exact(&self, bytes: &[u8], count: usize) -> Result<Vec<Ciphertext>> {
        let cts = self.decode(bytes)?;
        if cts.len() != count {
            return Err(Error::Protocol(format!("expected {count} ciphertexts, received {}", cts.len())));
        }
        Ok(cts)
    }
}

/// Plaintexts at `ceil(K/8)` bytes each.
pub fn plaintext_codec(pk: &PublicKey) -> FixedWidth {
    FixedWidth::new(pk.plaintext_width())
}
