//! Plaintext tables: CSV ingestion, categorical encoding and bit-length rules.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// How CSV cells become integers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schema {
    /// Per column: integer if every cell parses as one, categorical otherwise.
    #[default]
    Auto,
    /// Every column is categorical.
    Categorical,
    /// Every cell must be a non-negative integer.
    Integer,
}

impl FromStr for Schema {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Schema::Auto),
            "categorical" => Ok(Schema::Categorical),
            "integer" => Ok(Schema::Integer),
            other => Err(Error::Ingestion(format!("unknown schema {other:?}; expected auto, categorical or integer"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    pub schema: Schema,
    pub has_header: bool,
}

/// `n` rows of `m` attributes plus a class label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainTable {
    rows: Vec<Vec<u64>>,
    attr_bits: u32,
    class_values: Vec<u64>,
}

impl PlainTable {
    /// Validates `rows` (each `m + 1` wide, class last). With `attr_bits` unset,
    /// the smallest width covering every attribute is used.
    pub fn new(rows: Vec<Vec<u64>>, attr_bits: Option<u32>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Ingestion("table has no rows".into()));
        };
        let width = first.len();
        if width < 2 {
            return Err(Error::Ingestion("rows need at least one attribute and a class".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Ingestion(format!("row {} has {} columns, expected {width}", i + 1, rows[i].len())));
        }
        let max_attr = rows.iter().flat_map(|r| &r[..width - 1]).copied().max().unwrap_or(0);
        let needed = bit_width(max_attr);
        let attr_bits = match attr_bits {
            None => needed,
            Some(b) if b == 0 || b > 32 => return Err(Error::Config(format!("attribute width {b} outside 1..=32"))),
            Some(b) if b < needed => {
                return Err(Error::Ingestion(format!("attribute value {max_attr} does not fit in {b} bits")))
            }
            Some(b) => b,
        };
        let mut class_values: Vec<u64> = rows.iter().map(|r| r[width - 1]).collect();
        class_values.sort_unstable();
        class_values.dedup();
        Ok(PlainTable { rows, attr_bits, class_values })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.rows[0].len() - 1
    }

    pub fn w(&self) -> usize {
        self.class_values.len()
    }

    pub fn attr_bits(&self) -> u32 {
        self.attr_bits
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    pub fn attrs(&self, i: usize) -> &[u64] {
        let r = &self.rows[i];
        &r[..r.len() - 1]
    }

    pub fn label(&self, i: usize) -> u64 {
        *self.rows[i].last().unwrap()
    }

    /// Distinct class labels, ascending.
    pub fn class_values(&self) -> &[u64] {
        &self.class_values
    }

    /// Rejects a query of the wrong arity or with values above the attribute range.
    pub fn check_query(&self, q: &[u64]) -> Result<()> {
        check_query(q, self.m(), self.attr_bits)
    }
}

pub fn check_query(q: &[u64], m: usize, attr_bits: u32) -> Result<()> {
    if q.len() != m {
        return Err(Error::Contract(format!("query has {} attributes, database has {m}", q.len())));
    }
    if let Some(v) = q.iter().find(|&&v| bit_width(v) > attr_bits) {
        return Err(Error::Range(format!("query value {v} does not fit in {attr_bits} bits")));
    }
    Ok(())
}

/// Bits needed for `v` (at least one).
pub fn bit_width(v: u64) -> u32 {
    (64 - v.leading_zeros()).max(1)
}

/// Smallest `l` with every squared distance `<= m (2^a - 1)^2` below `2^l`.
pub fn compute_l(m: usize, attr_bits: u32) -> usize {
    let top = (1u128 << attr_bits) - 1;
    let max = m as u128 * top * top;
    (128 - max.leading_zeros()).max(1) as usize
}

/// Bit length used for an encrypted database. Like [`compute_l`], but one bit
/// wider when the largest possible distance is exactly `2^l - 1`, so that the
/// all-ones value used to exclude chosen records is strictly larger than any
/// real distance.
pub fn database_l(m: usize, attr_bits: u32) -> usize {
    let top = (1u128 << attr_bits) - 1;
    let max = m as u128 * top * top;
    (128 - (max + 1).leading_zeros()) as usize
}

/// Categorical codes per column. Attribute columns are numbered from 0, the
/// class column from 1, both in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncodingMap {
    /// `None` for integer columns.
    columns: Vec<Option<Vec<String>>>,
}

impl EncodingMap {
    fn base(&self, column: usize) -> u64 {
        u64::from(column + 1 == self.columns.len())
    }

    pub fn columns(&self) -> usize {
        self.columns.len()
    }

    pub fn is_categorical(&self, column: usize) -> bool {
        matches!(self.columns.get(column), Some(Some(_)))
    }

    pub fn is_empty(&self) -> bool {
        self.columns.iter().all(Option::is_none)
    }

    pub fn encode(&self, column: usize, value: &str) -> Result<u64> {
        match self.columns.get(column) {
            Some(Some(cats)) => cats
                .iter()
                .position(|c| c == value)
                .map(|i| i as u64 + self.base(column))
                .ok_or_else(|| Error::Ingestion(format!("unknown category {value:?} in column {column}"))),
            Some(None) | None => value
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Ingestion(format!("column {column}: {value:?} is not a non-negative integer"))),
        }
    }

    pub fn decode(&self, column: usize, code: u64) -> Option<String> {
        match self.columns.get(column)? {
            Some(cats) => code.checked_sub(self.base(column)).and_then(|i| cats.get(i as usize)).cloned(),
            None => Some(code.to_string()),
        }
    }

    /// Encodes a query record of `m` attribute cells.
    pub fn encode_query(&self, cells: &[&str]) -> Result<Vec<u64>> {
        if !self.columns.is_empty() && cells.len() + 1 != self.columns.len() {
            return Err(Error::Contract(format!(
                "query has {} attributes, table has {}",
                cells.len(),
                self.columns.len() - 1
            )));
        }
        cells.iter().enumerate().map(|(j, c)| self.encode(j, c)).collect()
    }

    /// Human-readable class label.
    pub fn decode_label(&self, code: u64) -> Option<String> {
        self.decode(self.columns.len().checked_sub(1)?, code)
    }

    /// Sidecar path: `<csv>.enc-map`.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".enc-map");
        PathBuf::from(s)
    }

    /// Writes `column,category,code` lines. Integer columns are recorded with
    /// an empty category and code so the column count survives a round trip.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["column", "category", "code"])?;
        for (j, col) in self.columns.iter().enumerate() {
            match col {
                Some(cats) => {
                    for (i, cat) in cats.iter().enumerate() {
                        w.write_record([j.to_string(), cat.clone(), (i as u64 + self.base(j)).to_string()])?;
                    }
                }
                None => w.write_record([j.to_string(), String::new(), String::new()])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries: Vec<(usize, Option<(String, u64)>)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Ingestion(format!("encoding map line has {} fields", rec.len())));
            }
            let col: usize = rec[0].parse().map_err(|_| Error::Ingestion(format!("bad column index {:?}", &rec[0])))?;
            if rec[2].is_empty() {
                entries.push((col, None));
            } else {
                let code: u64 = rec[2].parse().map_err(|_| Error::Ingestion(format!("bad code {:?}", &rec[2])))?;
                entries.push((col, Some((rec[1].to_string(), code))));
            }
        }
        let ncols = entries.iter().map(|(c, _)| c + 1).max().unwrap_or(0);
        let mut columns: Vec<Option<Vec<(String, u64)>>> = vec![None; ncols];
        let mut seen = vec![false; ncols];
        for (col, entry) in entries {
            seen[col] = true;
            if let Some(e) = entry {
                columns[col].get_or_insert_with(Vec::new).push(e);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Ingestion("encoding map skips a column".into()));
        }
        let map = EncodingMap { columns: vec![None; ncols] };
        let mut out = Vec::with_capacity(ncols);
        for (j, col) in columns.into_iter().enumerate() {
            out.push(match col {
                None => None,
                Some(mut cats) => {
                    cats.sort_by_key(|(_, code)| *code);
                    let base = map.base(j);
                    for (i, (_, code)) in cats.iter().enumerate() {
                        if *code != i as u64 + base {
                            return Err(Error::Ingestion(format!("column {j}: codes are not consecutive from {base}")));
                        }
                    }
                    Some(cats.into_iter().map(|(c, _)| c).collect())
                }
            });
        }
        Ok(EncodingMap { columns: out })
    }
}

/// Reads a CSV whose last column is the class label.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<(PlainTable, EncodingMap)> {
    let file = File::open(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    read_csv(file, opts)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(input: R, opts: &CsvOptions) -> Result<(PlainTable, EncodingMap)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(opts.has_header).flexible(true).from_reader(input);
    let mut cells: Vec<Vec<String>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let row: Vec<String> = rec.iter().map(|c| c.trim().to_string()).collect();
        if let Some(first) = cells.first() {
            if row.len() != first.len() {
                return Err(Error::Ingestion(format!("ragged row {}: {} fields, expected {}", i + 1, row.len(), first.len())));
            }
        }
        cells.push(row);
    }
    if cells.is_empty() {
        return Err(Error::Ingestion("no data rows".into()));
    }
    let width = cells[0].len();
    let numeric = |j: usize| cells.iter().all(|r| r[j].parse::<u64>().is_ok());
    let mut columns: Vec<Option<Vec<String>>> = Vec::with_capacity(width);
    for j in 0..width {
        let categorical = match opts.schema {
            Schema::Categorical => true,
            Schema::Integer => {
                if let Some(r) = cells.iter().position(|r| r[j].parse::<u64>().is_err()) {
                    return Err(Error::Ingestion(format!(
                        "row {}, column {j}: {:?} is not a non-negative integer",
                        r + 1,
                        cells[r][j]
                    )));
                }
                false
            }
            Schema::Auto => !numeric(j),
        };
        columns.push(categorical.then(|| {
            let mut order: Vec<String> = Vec::new();
            let mut index: HashMap<&str, ()> = HashMap::new();
            for r in &cells {
                if index.insert(&r[j], ()).is_none() {
                    order.push(r[j].clone());
                }
            }
            order
        }));
    }
    let map = EncodingMap { columns };
    let rows = cells
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, c)| map.encode(j, c)).collect::<Result<Vec<u64>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((PlainTable::new(rows, None)?, map))
}
