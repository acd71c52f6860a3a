use std::io::{Read, Write};
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;

use crate::dataset::{self, PlainTable};
use crate::error::{Error, Result};
use crate::paillier::{Ciphertext, Encryptor, PublicKey, SecretKey};
use crate::random;
use crate::transport::CiphertextCodec;

pub const DB_MAGIC: &[u8; 4] = b"PPKD";
pub const DB_VERSION: u8 = 0x01;

/// Shape of an encrypted database.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DbParams {
    pub n: usize,
    pub m: usize,
    pub w: usize,
    /// Bit length of distances.
    pub l: usize,
    pub attr_bits: u32,
    pub key_bits: u32,
}

/// One encrypted row. `id` is the 1-based row index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncRecord {
    pub id: u32,
    pub attrs: Vec<Ciphertext>,
    pub label: Ciphertext,
}

/// The outsourced table plus the encrypted list of distinct classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncDatabase {
    pub params: DbParams,
    pub records: Vec<EncRecord>,
    pub classes: Vec<Ciphertext>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncQuery {
    pub attrs: Vec<Ciphertext>,
}

/// Largest distance bit length the key can carry with room for masking.
fn check_l_fits(l: usize, key_bits: u32) -> Result<()> {
    if l as u32 + 2 >= key_bits / 2 {
        return Err(Error::Config(format!("distance length {l} is too large for a {key_bits}-bit key")));
    }
    Ok(())
}

/// Encrypts every cell of `table` and the list of its distinct classes.
pub fn owner_encrypt_db<R: RngCore + ?Sized>(enc: &Encryptor, table: &PlainTable, rng: &mut R) -> Result<EncDatabase> {
    if table.w() < 2 {
        return Err(Error::Config(format!("need at least 2 distinct classes, table has {}", table.w())));
    }
    let (n, m) = (table.n(), table.m());
    if n > u32::MAX as usize {
        return Err(Error::Config("too many records".into()));
    }
    let l = dataset::database_l(m, table.attr_bits());
    let key_bits = enc.pk().bits();
    check_l_fits(l, key_bits)?;
    let rngs: Vec<_> = (0..n).map(|_| random::fork(rng)).collect();
    let records: Vec<EncRecord> = (0..n)
        .into_par_iter()
        .zip(rngs)
        .map(|(i, mut r)| EncRecord {
            id: i as u32 + 1,
            attrs: table.attrs(i).iter().map(|&v| enc.encrypt_u64(v, &mut r)).collect(),
            label: enc.encrypt_u64(table.label(i), &mut r),
        })
        .collect();
    let classes = table.class_values().iter().map(|&c| enc.encrypt_u64(c, rng)).collect();
    let params = DbParams { n, m, w: table.w(), l, attr_bits: table.attr_bits(), key_bits };
    Ok(EncDatabase { params, records, classes })
}

/// Encrypts a query after checking arity and range.
pub fn querier_encrypt_query<R: RngCore + ?Sized>(
    enc: &Encryptor,
    q: &[u64],
    params: &DbParams,
    rng: &mut R,
) -> Result<EncQuery> {
    dataset::check_query(q, params.m, params.attr_bits)?;
    Ok(EncQuery { attrs: q.iter().map(|&v| enc.encrypt_u64(v, rng)).collect() })
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit a 32-bit field")))?;
    out.extend_from_slice(&v.to_be_bytes());
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("database truncated in {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn get_u32(bytes: &mut &[u8], what: &str) -> Result<usize> {
    Ok(u32::from_be_bytes(take(bytes, 4, what)?.try_into().unwrap()) as usize)
}

impl EncDatabase {
    /// Layout: `"PPKD" | version | n | m | w | l | attr_bits | K` (each `u32`
    /// big-endian), then per record `id u32 | m + 1 ciphertexts`, then the
    /// `w` class ciphertexts. Ciphertexts are `ceil(2K/8)` bytes each.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let codec = CiphertextCodec::for_bits(p.key_bits);
        let mut out = Vec::with_capacity(29 + p.n * (4 + (p.m + 1) * codec.width()) + p.w * codec.width());
        out.extend_from_slice(DB_MAGIC);
        out.push(DB_VERSION);
        for v in [p.n, p.m, p.w, p.l, p.attr_bits as usize, p.key_bits as usize] {
            put_u32(&mut out, v)?;
        }
        for r in &self.records {
            put_u32(&mut out, r.id as usize)?;
            for c in r.attrs.iter().chain(std::iter::once(&r.label)) {
                codec.put(&mut out, c)?;
            }
        }
        for c in &self.classes {
            codec.put(&mut out, c)?;
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let b = &mut bytes;
        if take(b, 4, "magic")? != DB_MAGIC {
            return Err(Error::Format("not an encrypted database (bad magic)".into()));
        }
        let version = take(b, 1, "version")?[0];
        if version != DB_VERSION {
            return Err(Error::Format(format!("unsupported database version {version:#04x}")));
        }
        let n = get_u32(b, "header")?;
        let m = get_u32(b, "header")?;
        let w = get_u32(b, "header")?;
        let l = get_u32(b, "header")?;
        let attr_bits = get_u32(b, "header")? as u32;
        let key_bits = get_u32(b, "header")? as u32;
        if m == 0 || l == 0 || attr_bits == 0 || key_bits < 512 {
            return Err(Error::Format("database header has a zero or invalid field".into()));
        }
        let codec = CiphertextCodec::for_bits(key_bits);
        let record_len = 4 + (m + 1) * codec.width();
        if n.checked_mul(record_len).map_or(true, |need| need > b.len()) {
            return Err(Error::Format("database truncated in records".into()));
        }
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let id = get_u32(b, "record id")? as u32;
            if id as usize != i + 1 {
                return Err(Error::Format(format!("record {} has id {id}; ids must be 1..n in order", i + 1)));
            }
            let mut cts = codec.decode(take(b, (m + 1) * codec.width(), "record")?)?;
            let label = cts.pop().expect("m + 1 >= 2");
            records.push(EncRecord { id, attrs: cts, label });
        }
        let classes = codec.decode(take(b, w * codec.width(), "classes")?)?;
        if !b.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after database", b.len())));
        }
        let params = DbParams { n, m, w, l, attr_bits, key_bits };
        Ok(EncDatabase { params, records, classes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes()?)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Checks that the database was encrypted for `pk`'s key size and that
    /// every ciphertext is in range.
    pub fn check_key(&self, pk: &PublicKey) -> Result<()> {
        if self.params.key_bits != pk.bits() {
            return Err(Error::Config(format!(
                "database uses {}-bit ciphertexts, key has {} bits",
                self.params.key_bits,
                pk.bits()
            )));
        }
        check_l_fits(self.params.l, pk.bits())?;
        for r in &self.records {
            for c in r.attrs.iter().chain([&r.label]) {
                pk.validate(c)?;
            }
        }
        self.classes.iter().try_for_each(|c| pk.validate(c))
    }

    /// Decrypts the whole table (owner-side check).
    pub fn decrypt(&self, sk: &SecretKey) -> Result<Vec<Vec<u64>>> {
        let to_u64 = |c: &Ciphertext| -> Result<u64> {
            sk.decrypt(c)?.to_u64().ok_or_else(|| Error::Range("cell does not fit 64 bits".into()))
        };
        self.records
            .iter()
            .map(|r| r.attrs.iter().chain([&r.label]).map(to_u64).collect())
            .collect()
    }
}
