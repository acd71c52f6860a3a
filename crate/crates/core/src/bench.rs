//! Benchmark harness: synthesizes a table, runs queries through every role in
//! process and reports per-stage time and exact channel bytes.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataset::PlainTable;
use crate::error::{Error, Result};
use crate::mpc::KeyHolder;
use crate::paillier::{keygen, Encryptor, PoolCounts, RandomnessPool};
use crate::ppknn::{frequency_bits, owner_encrypt_db, DbParams, EngineOptions, LocalDeployment};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Serial,
    /// Independent sessions run concurrently on both sides.
    Parallel,
    /// Randomness pools for both parties are filled before timing starts.
    Offline,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial" => Ok(Mode::Serial),
            "parallel" => Ok(Mode::Parallel),
            "offline" => Ok(Mode::Offline),
            other => Err(Error::Config(format!("unknown mode {other:?}; expected serial, parallel or offline"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Serial => "serial",
            Mode::Parallel => "parallel",
            Mode::Offline => "offline",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub n: usize,
    pub m: usize,
    pub w: usize,
    pub k: usize,
    pub key_bits: u32,
    pub attr_bits: u32,
    pub mode: Mode,
    pub queries: usize,
    /// Seeds key generation, the table and the queries.
    pub data_seed: u64,
    /// Seeds protocol randomness. Debugging only.
    pub protocol_seed: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n: 64,
            m: 6,
            w: 4,
            k: 5,
            key_bits: 512,
            attr_bits: 4,
            mode: Mode::Serial,
            queries: 1,
            data_seed: 1,
            protocol_seed: None,
        }
    }
}

/// Totals over all queries of one run. Byte counts are the C1-C2 channel
/// counters in both directions, framing included.
#[derive(Clone, Debug)]
pub struct BenchReport {
    pub params: DbParams,
    pub k: usize,
    pub mode: Mode,
    pub queries: usize,
    pub stage1_time: Duration,
    pub stage2_time: Duration,
    /// Querier-side wall clock.
    pub total_time: Duration,
    pub stage1_bytes: u64,
    pub stage2_bytes: u64,
    /// Time spent filling pools (offline mode only), excluded from the above.
    pub precompute_time: Duration,
    /// Encryptions that found their pool empty and ran online.
    pub pool_misses: u64,
    pub labels: Vec<u64>,
    pub seeded_protocol: bool,
}

impl BenchReport {
    /// `key=value`, one per line.
    pub fn machine_lines(&self) -> String {
        let p = &self.params;
        let secs = |d: Duration| format!("{:.6}", d.as_secs_f64());
        let labels: Vec<String> = self.labels.iter().map(u64::to_string).collect();
        [
            ("mode", self.mode.to_string()),
            ("n", p.n.to_string()),
            ("m", p.m.to_string()),
            ("w", p.w.to_string()),
            ("k", self.k.to_string()),
            ("key_bits", p.key_bits.to_string()),
            ("l", p.l.to_string()),
            ("queries", self.queries.to_string()),
            ("stage1_time", secs(self.stage1_time)),
            ("stage2_time", secs(self.stage2_time)),
            ("total_time", secs(self.total_time)),
            ("stage1_bytes", self.stage1_bytes.to_string()),
            ("stage2_bytes", self.stage2_bytes.to_string()),
            ("precompute_time", secs(self.precompute_time)),
            ("pool_misses", self.pool_misses.to_string()),
            ("labels", labels.join(",")),
            ("seeded_protocol", self.seeded_protocol.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
    }

    /// Share of Stage 2 in the combined stage time.
    pub fn stage2_share(&self) -> f64 {
        let s2 = self.stage2_time.as_secs_f64();
        s2 / (self.stage1_time.as_secs_f64() + s2)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.params;
        writeln!(f, "mode {}: n={} m={} w={} k={} K={} l={}, {} quer{}", self.mode, p.n, p.m, p.w, self.k, p.key_bits, p.l,
            self.queries, if self.queries == 1 { "y" } else { "ies" })?;
        if self.seeded_protocol {
            writeln!(f, "WARNING: protocol randomness is seeded; results are not private")?;
        }
        let mb = |b: u64| b as f64 / 1e6;
        writeln!(f, "  stage 1: {:>10.3} s  {:>10.3} MB", self.stage1_time.as_secs_f64(), mb(self.stage1_bytes))?;
        writeln!(f, "  stage 2: {:>10.3} s  {:>10.3} MB", self.stage2_time.as_secs_f64(), mb(self.stage2_bytes))?;
        writeln!(f, "  total:   {:>10.3} s  (stage 2 share {:.2}%)", self.total_time.as_secs_f64(), 100.0 * self.stage2_share())?;
        if self.mode == Mode::Offline {
            writeln!(f, "  precompute: {:.3} s, pool misses {}", self.precompute_time.as_secs_f64(), self.pool_misses)?;
        }
        Ok(())
    }
}

/// Uniform attributes in `[0, 2^attr_bits)`; every class in `1..=w` occurs.
pub fn synthetic_table<R: RngCore + ?Sized>(n: usize, m: usize, w: usize, attr_bits: u32, rng: &mut R) -> Result<PlainTable> {
    if w < 2 || n < w || m == 0 || !(1..=32).contains(&attr_bits) {
        return Err(Error::Config(format!("cannot synthesize n={n}, m={m}, w={w}, attr_bits={attr_bits}")));
    }
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<u64> = (0..m).map(|_| rng.gen_range(0..1u64 << attr_bits)).collect();
            row.push(if i < w { i as u64 + 1 } else { rng.gen_range(1..=w as u64) });
            row
        })
        .collect();
    PlainTable::new(rows, Some(attr_bits))
}

pub fn random_query<R: RngCore + ?Sized>(m: usize, attr_bits: u32, rng: &mut R) -> Vec<u64> {
    (0..m).map(|_| rng.gen_range(0..1u64 << attr_bits)).collect()
}

/// Pool items one query consumes at C1 and at C2. Exact for C1; an upper
/// bound for C2, whose comparison replies use `E(1)` or `E(0)` depending on
/// the hidden bit.
pub fn pool_counts(p: &DbParams, k: usize) -> (PoolCounts, PoolCounts) {
    let (n, m, w, l) = (p.n, p.m, p.w, p.l);
    let lf = frequency_bits(k);
    let mins = k * n.saturating_sub(1);
    let maxes = w - 1;
    // C1: each multiplication takes two masks and one fresh encryption; a
    // comparison adds one mask per bit and per secret; a decomposition one
    // encryption per bit and one verification mask.
    let multiplications = n * m + mins * l + k * n * l + maxes * lf;
    let c1 = PoolCounts {
        masks: 2 * multiplications + mins * (l + 2) + maxes * (lf + 1) + n + w + 1,
        zeros: multiplications + n * l + w * lf + n + k * n,
        ones: 0,
    };
    // C2: one encryption per product, parity bit, frequency cell and
    // selection entry; at most l + s + 1 per comparison.
    let c2 = PoolCounts {
        zeros: multiplications + n * l + w * lf + k * w + k * n + mins * (l + 3) + maxes * (lf + 2),
        ones: mins + maxes,
        masks: 0,
    };
    (c1, c2)
}

fn scale(c: PoolCounts, by: usize) -> PoolCounts {
    PoolCounts { zeros: c.zeros * by, ones: c.ones * by, masks: c.masks * by }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.queries == 0 {
        return Err(Error::Config("at least one query".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.data_seed);
    let (pk, sk) = keygen(cfg.key_bits, &mut rng)?;
    let (pk, sk) = (Arc::new(pk), Arc::new(sk));
    let table = synthetic_table(cfg.n, cfg.m, cfg.w, cfg.attr_bits, &mut rng)?;
    let db = owner_encrypt_db(&Encryptor::public(pk.clone()), &table, &mut rng)?;
    let queries: Vec<Vec<u64>> = (0..cfg.queries).map(|_| random_query(cfg.m, cfg.attr_bits, &mut rng)).collect();
    let params = db.params;
    if cfg.k == 0 || cfg.k > params.n {
        return Err(Error::Config(format!("k = {} outside 1..={}", cfg.k, params.n)));
    }

    let mut opts = EngineOptions { parallel: cfg.mode == Mode::Parallel, seed: cfg.protocol_seed, c1_pool: None };
    let mut keyholder = KeyHolder::new(sk.clone()).with_parallel(cfg.mode == Mode::Parallel);
    if let Some(seed) = cfg.protocol_seed {
        keyholder = keyholder.with_rng(ChaCha20Rng::seed_from_u64(seed ^ 0x5eed));
    }
    let mut precompute_time = Duration::ZERO;
    let mut pools = Vec::new();
    if cfg.mode == Mode::Offline {
        let (c1, c2) = pool_counts(&params, cfg.k);
        let t = Instant::now();
        let p1 = Arc::new(RandomnessPool::new());
        p1.fill(&Encryptor::public(pk.clone()), scale(c1, cfg.queries), &mut rng);
        let p2 = Arc::new(RandomnessPool::new());
        p2.fill(&Encryptor::with_secret(sk.clone()), scale(c2, cfg.queries), &mut rng);
        precompute_time = t.elapsed();
        opts.c1_pool = Some(p1.clone());
        keyholder = keyholder.with_pool(p2.clone());
        pools = vec![p1, p2];
    }

    let deployment = LocalDeployment::new(db, keyholder, opts)?;
    let mut report = BenchReport {
        params,
        k: cfg.k,
        mode: cfg.mode,
        queries: cfg.queries,
        stage1_time: Duration::ZERO,
        stage2_time: Duration::ZERO,
        total_time: Duration::ZERO,
        stage1_bytes: 0,
        stage2_bytes: 0,
        precompute_time,
        pool_misses: 0,
        labels: Vec::with_capacity(cfg.queries),
        seeded_protocol: cfg.protocol_seed.is_some(),
    };
    for q in &queries {
        let r = deployment.query(q, cfg.k)?;
        report.stage1_time += r.stage1.time;
        report.stage2_time += r.stage2.time;
        report.total_time += r.total_time;
        report.stage1_bytes += r.stage1.bytes;
        report.stage2_bytes += r.stage2.bytes;
        report.labels.push(r.label);
    }
    report.pool_misses = pools.iter().map(|p| p.misses()).sum();
    Ok(report)
}
