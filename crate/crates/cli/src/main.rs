use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ppknn::bench::{run_bench, BenchConfig, Mode};
use ppknn::dataset::{load_csv, CsvOptions, EncodingMap, Schema};
use ppknn::mpc::KeyHolder;
use ppknn::paillier::{keygen, Encryptor, PublicKey, SecretKey};
use ppknn::ppknn::{owner_encrypt_db, query_remote, serve_c1, serve_c2, C1Service, C2Service, EncDatabase, EngineOptions};
use ppknn::transport::{Channel, DEFAULT_C1_PORT, DEFAULT_C2_PORT};
use ppknn::{random, Error};

const PUBLIC_KEY_FILE: &str = "public.key";
const SECRET_KEY_FILE: &str = "secret.key";

#[derive(Parser)]
#[command(name = "ppknn", version, about = "Privacy-preserving k-NN classification over encrypted data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair into a directory.
    Keygen {
        #[arg(long, default_value_t = 1024)]
        bits: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a CSV table (last column = class) for upload to C1.
    EncryptDb {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        pk: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// auto, categorical or integer.
        #[arg(long, default_value = "auto")]
        schema: Schema,
        /// The first line holds data, not column names.
        #[arg(long)]
        no_header: bool,
        /// Attribute width; defaults to the widest value present.
        #[arg(long)]
        attr_bits: Option<u32>,
    },
    /// Run cloud C1: stores the encrypted table and drives both stages.
    ServeC1 {
        #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_C1_PORT}"))]
        listen: String,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        pk: PathBuf,
        /// Address of C2.
        #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_C2_PORT}"))]
        c2: String,
        #[arg(long)]
        parallel: bool,
    },
    /// Run cloud C2: holds the secret key.
    ServeC2 {
        #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_C2_PORT}"))]
        listen: String,
        #[arg(long)]
        sk: PathBuf,
        #[arg(long)]
        parallel: bool,
    },
    /// Classify one record; prints the class.
    Query {
        #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_C1_PORT}"))]
        c1: String,
        #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_C2_PORT}"))]
        c2: String,
        /// Comma-separated attribute values (categories when --map is given).
        #[arg(long)]
        record: String,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        pk: PathBuf,
        /// Encoding map written by encrypt-db.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Synthesize a table and time classification over loopback channels.
    Bench {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 6)]
        m: usize,
        #[arg(long, default_value_t = 4)]
        w: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 512)]
        bits: u32,
        #[arg(long, default_value = "serial")]
        mode: Mode,
        #[arg(long, default_value_t = 4)]
        attr_bits: u32,
        #[arg(long, default_value_t = 1)]
        queries: usize,
        /// Seeds the key, table and queries.
        #[arg(long, default_value_t = 1)]
        data_seed: u64,
        /// Seeds protocol randomness. Debugging only: breaks privacy.
        #[arg(long)]
        protocol_seed: Option<u64>,
    },
}

fn load_pk(path: &Path) -> Result<Arc<PublicKey>> {
    Ok(Arc::new(PublicKey::load(path).with_context(|| format!("loading public key {}", path.display()))?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Keygen { bits, out } => {
            let (pk, sk) = keygen(bits, &mut random::os_seeded())?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            pk.save(out.join(PUBLIC_KEY_FILE))?;
            sk.save(out.join(SECRET_KEY_FILE))?;
            println!("wrote {} and {}", out.join(PUBLIC_KEY_FILE).display(), out.join(SECRET_KEY_FILE).display());
        }
        Command::EncryptDb { csv, pk, out, schema, no_header, attr_bits } => {
            let pk = load_pk(&pk)?;
            let (table, map) = load_csv(&csv, &CsvOptions { schema, has_header: !no_header })?;
            let table = match attr_bits {
                Some(bits) => ppknn::dataset::PlainTable::new(table.rows().to_vec(), Some(bits))?,
                None => table,
            };
            let db = owner_encrypt_db(&Encryptor::public(pk), &table, &mut random::os_seeded())?;
            db.save(&out)?;
            let map_path = EncodingMap::sidecar_path(&out);
            map.save(&map_path)?;
            let p = db.params;
            println!("n={} m={} w={} l={} attr_bits={} key_bits={}", p.n, p.m, p.w, p.l, p.attr_bits, p.key_bits);
            println!("wrote {} and {}", out.display(), map_path.display());
        }
        Command::ServeC1 { listen, db, pk, c2, parallel } => {
            let pk = load_pk(&pk)?;
            let db = EncDatabase::load(&db).with_context(|| format!("loading database {}", db.display()))?;
            let bits = pk.bits();
            let opts = EngineOptions { parallel, ..Default::default() };
            let service = C1Service::new(db, pk, move || Channel::connect(c2.as_str(), bits), &opts)?;
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            log::info!("C1 listening on {}", listener.local_addr()?);
            serve_c1(listener, Arc::new(service))?;
        }
        Command::ServeC2 { listen, sk, parallel } => {
            let sk = SecretKey::load(&sk).with_context(|| format!("loading secret key {}", sk.display()))?;
            let service = C2Service::new(KeyHolder::new(Arc::new(sk)).with_parallel(parallel));
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            log::info!("C2 listening on {}", listener.local_addr()?);
            serve_c2(listener, service)?;
        }
        Command::Query { c1, c2, record, k, pk, map } => {
            let pk = load_pk(&pk)?;
            let map = map.map(|p| EncodingMap::load(&p)).transpose()?;
            let cells: Vec<&str> = record.split(',').map(str::trim).collect();
            let q: Vec<u64> = match &map {
                Some(m) => m.encode_query(&cells)?,
                None => cells
                    .iter()
                    .map(|c| c.parse::<u64>().map_err(|_| Error::Range(format!("{c:?} is not a non-negative integer"))))
                    .collect::<std::result::Result<_, _>>()?,
            };
            let bits = pk.bits();
            let to_c1 = Channel::connect(c1.as_str(), bits).with_context(|| format!("connecting to C1 at {c1}"))?;
            let to_c2 = Channel::connect(c2.as_str(), bits).with_context(|| format!("connecting to C2 at {c2}"))?;
            let result = query_remote(&to_c1, &to_c2, &Encryptor::public(pk), &q, k, &mut random::os_seeded())?;
            match map.as_ref().and_then(|m| m.decode_label(result.label)) {
                Some(name) => println!("{name}"),
                None => println!("{}", result.label),
            }
            log::info!(
                "stage1 {:.3}s {} bytes, stage2 {:.3}s {} bytes",
                result.stage1.time.as_secs_f64(),
                result.stage1.bytes,
                result.stage2.time.as_secs_f64(),
                result.stage2.bytes
            );
        }
        Command::Bench { n, m, w, k, bits, mode, attr_bits, queries, data_seed, protocol_seed } => {
            if protocol_seed.is_some() {
                eprintln!("WARNING: --protocol-seed makes protocol randomness predictable; never use it outside debugging");
            }
            let cfg = BenchConfig { n, m, w, k, key_bits: bits, attr_bits, mode, queries, data_seed, protocol_seed };
            let report = run_bench(&cfg)?;
            eprint!("{report}");
            print!("{}", report.machine_lines());
            if report.pool_misses > 0 {
                bail!("{} pool misses: precomputation fell short", report.pool_misses);
            }
        }
    }
    Ok(())
}

/// 2 for bad input, 3 for faults during a protocol run, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_protocol_fault() => 3,
        Some(Error::Config(_) | Error::Contract(_) | Error::Range(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
