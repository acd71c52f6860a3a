//! Binary key container.
//!
//! ```text
//! "PPKN" | version u8 (0x01) | kind u8 (0x01 public, 0x02 secret) | K u32 BE
//! then per field: length u32 BE | unsigned big-endian magnitude
//! public fields: N, g, N^2      secret fields: lambda, mu, N
//! ```

use std::path::Path;

use rug::integer::Order;
use rug::Integer;

use super::{PublicKey, SecretKey};
use crate::error::{Error, Result};

pub const KEY_MAGIC: &[u8; 4] = b"PPKN";
pub const KEY_VERSION: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum KeyKind {
    Public = 0x01,
    Secret = 0x02,
}

fn write_header(out: &mut Vec<u8>, kind: KeyKind, bits: u32) {
    out.extend_from_slice(KEY_MAGIC);
    out.push(KEY_VERSION);
    out.push(kind as u8);
    out.extend_from_slice(&bits.to_be_bytes());
}

fn write_field(out: &mut Vec<u8>, value: &Integer) {
    let digits = value.to_digits::<u8>(Order::MsfBe);
    out.extend_from_slice(&(digits.len() as u32).to_be_bytes());
    out.extend_from_slice(&digits);
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("key file truncated".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn field(&mut self) -> Result<Integer> {
        let len = self.u32()? as usize;
        Ok(Integer::from_digits(self.take(len)?, Order::MsfBe))
    }
}

fn read_header(buf: &[u8], expected: KeyKind) -> Result<(u32, Reader<'_>)> {
    let mut r = Reader { buf };
    if r.take(4)? != KEY_MAGIC {
        return Err(Error::Format("bad key magic".into()));
    }
    let version = r.take(1)?[0];
    if version != KEY_VERSION {
        return Err(Error::Format(format!("unsupported key version {version:#04x}")));
    }
    let kind = r.take(1)?[0];
    if kind != expected as u8 {
        return Err(Error::Format(format!("expected key type {:#04x}, found {kind:#04x}", expected as u8)));
    }
    let bits = r.u32()?;
    Ok((bits, r))
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, KeyKind::Public, self.bits);
        write_field(&mut out, &self.n);
        write_field(&mut out, &self.g);
        write_field(&mut out, &self.n_squared);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (bits, mut r) = read_header(buf, KeyKind::Public)?;
        let n = r.field()?;
        let g = r.field()?;
        let n_squared = r.field()?;
        if !r.buf.is_empty() {
            return Err(Error::Format("trailing bytes after public key".into()));
        }
        let pk = PublicKey::from_modulus(n).map_err(|e| Error::Format(e.to_string()))?;
        if pk.bits != bits || pk.g != g || pk.n_squared != n_squared {
            return Err(Error::Format("public key fields are inconsistent".into()));
        }
        Ok(pk)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl SecretKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, KeyKind::Secret, self.pk.bits);
        write_field(&mut out, &self.lambda);
        write_field(&mut out, &self.mu);
        write_field(&mut out, self.pk.n());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (bits, mut r) = read_header(buf, KeyKind::Secret)?;
        let lambda = r.field()?;
        let mu = r.field()?;
        let n = r.field()?;
        if !r.buf.is_empty() {
            return Err(Error::Format("trailing bytes after secret key".into()));
        }
        let sk = SecretKey::from_parts(lambda, mu, n)?;
        if sk.pk.bits != bits {
            return Err(Error::Format("secret key size does not match header".into()));
        }
        Ok(sk)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
