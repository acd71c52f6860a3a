//! Role state machines for the two clouds and the querier.
//!
//! Topology: the querier holds one channel to C1 and one to C2. C1 opens a
//! fresh channel to C2 per query and runs both stages over it. The result is
//! split so that neither cloud sees the class: C1 sends `r_q` to the querier
//! and `E(c_q + r_q)` to C2, which decrypts and forwards `c_q + r_q` under a
//! token the querier chose.

use std::collections::HashMap;
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::ops::RemRounding;
use rug::Integer;

use super::database::{querier_encrypt_query, DbParams, EncDatabase, EncQuery};
use super::stage1::{check_k, Stage1};
use super::stage2::majority_class;
use crate::dataset;
use crate::error::{Error, Result};
use crate::mpc::payload::{Reader, Writer};
use crate::mpc::{Dispatch, Evaluator, KeyHolder, OpStats};
use crate::paillier::{Encryptor, PublicKey, RandomnessPool};
use crate::random;
use crate::transport::{plaintext_codec, Channel, CiphertextCodec, Frame};

/// Protocol ids of the role messages, disjoint from the sub-protocol ids.
pub mod role_ids {
    /// Querier to C1: `token u64 | k u32 | m ciphertexts`. Reply:
    /// `r_q | stage1_ns u64 | stage2_ns u64 | stage1_bytes u64 | stage2_bytes u64`.
    pub const QUERY: u16 = 0x1001;
    /// Querier to C2: `token u64`. Reply: `c_q + r_q` once C1 has revealed it.
    pub const AWAIT: u16 = 0x1002;
    /// Querier to C1, empty. Reply: `n | m | w | l | attr_bits | K`, each `u32`.
    pub const INFO: u16 = 0x1003;
    /// C1 to C2: `token u64 | E(c_q + r_q)`. Reply: empty acknowledgement.
    pub const REVEAL: u16 = 0x1101;
}

/// Wall-clock time at C1 and exact C1-C2 bytes (both directions) of one stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCost {
    pub time: Duration,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassificationResult {
    pub label: u64,
    pub stage1: StageCost,
    pub stage2: StageCost,
    /// Querier-side wall clock, including query encryption and result recovery.
    pub total_time: Duration,
}

#[derive(Clone, Default)]
pub struct EngineOptions {
    /// Run independent sessions concurrently.
    pub parallel: bool,
    /// Seeds every generator. For tests and benchmarks only.
    pub seed: Option<u64>,
    /// Precomputed randomness for C1.
    pub c1_pool: Option<Arc<RandomnessPool>>,
}

impl EngineOptions {
    fn rng(&self, salt: u64) -> ChaCha20Rng {
        match self.seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            None => random::os_seeded(),
        }
    }
}

type Connector = Box<dyn Fn() -> Result<Channel> + Send + Sync>;

fn get_u64(bytes: &[u8], at: usize) -> Result<u64> {
    bytes
        .get(at..at + 8)
        .map(|b| u64::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Protocol("message truncated".into()))
}

fn get_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Protocol("message truncated".into()))
}

fn params_payload(p: &DbParams) -> Vec<u8> {
    [p.n, p.m, p.w, p.l, p.attr_bits as usize, p.key_bits as usize]
        .iter()
        .flat_map(|&v| (v as u32).to_be_bytes())
        .collect()
}

fn parse_params(bytes: &[u8]) -> Result<DbParams> {
    if bytes.len() != 24 {
        return Err(Error::Protocol(format!("parameter reply of {} bytes", bytes.len())));
    }
    let f = |i: usize| get_u32(bytes, 4 * i);
    Ok(DbParams {
        n: f(0)? as usize,
        m: f(1)? as usize,
        w: f(2)? as usize,
        l: f(3)? as usize,
        attr_bits: f(4)?,
        key_bits: f(5)?,
    })
}

// ------------------------------------------------------------------ C1

/// Cloud C1: stores the encrypted database and drives both stages.
pub struct C1Service {
    db: Arc<EncDatabase>,
    enc: Encryptor,
    codec: CiphertextCodec,
    parallel: bool,
    rng: Mutex<ChaCha20Rng>,
    connect_c2: Connector,
    stats: Arc<OpStats>,
}

impl std::fmt::Debug for C1Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("C1Service").field("params", &self.db.params).field("parallel", &self.parallel).finish()
    }
}

impl C1Service {
    /// `connect_c2` opens a new channel to C2; it is called once per query.
    pub fn new<F>(db: EncDatabase, pk: Arc<PublicKey>, connect_c2: F, opts: &EngineOptions) -> Result<Self>
    where
        F: Fn() -> Result<Channel> + Send + Sync + 'static,
    {
        db.check_key(&pk)?;
        let mut enc = Encryptor::public(pk);
        if let Some(pool) = &opts.c1_pool {
            enc = enc.with_pool(pool.clone());
        }
        Ok(C1Service {
            codec: CiphertextCodec::for_key(enc.pk()),
            db: Arc::new(db),
            enc,
            parallel: opts.parallel,
            rng: Mutex::new(opts.rng(1)),
            connect_c2: Box::new(connect_c2),
            stats: Arc::new(OpStats::default()),
        })
    }

    pub fn params(&self) -> &DbParams {
        &self.db.params
    }

    /// Operation counts summed over every query served so far.
    pub fn stats(&self) -> &Arc<OpStats> {
        &self.stats
    }

    pub fn encryptor(&self) -> &Encryptor {
        &self.enc
    }

    /// Runs both stages for one query and reveals the result to C2 under
    /// `token`. Returns `r_q` and the per-stage costs.
    pub fn run_query(&self, query: &EncQuery, k: usize, token: u64) -> Result<(Integer, StageCost, StageCost)> {
        check_k(k, self.db.params.n)?;
        let rng = random::fork(&mut *self.rng.lock().unwrap());
        let mut ev = Evaluator::new(self.enc.clone(), rng).with_parallel(self.parallel).with_stats(self.stats.clone());
        let c2 = (self.connect_c2)()?;
        let (t0, b0) = (Instant::now(), c2.traffic());
        let neighbors = Stage1::run(&mut ev, &c2, query, &self.db, k)?;
        let (t1, b1) = (Instant::now(), c2.traffic());
        let class = majority_class(&mut ev, &c2, &self.db.classes, &neighbors)?;
        let pk = self.enc.pk();
        let (r_q, e_r) = self.enc.mask(ev.rng());
        let gamma = pk.add(&class, &e_r);
        let mut payload = token.to_be_bytes().to_vec();
        self.codec.put(&mut payload, &gamma)?;
        let ack = c2.open_session().request(role_ids::REVEAL, payload)?;
        if !ack.is_empty() {
            return Err(Error::Protocol("unexpected reveal acknowledgement".into()));
        }
        let (t2, b2) = (Instant::now(), c2.traffic());
        let s1 = StageCost { time: t1 - t0, bytes: b1.since(&b0).total_bytes() };
        let s2 = StageCost { time: t2 - t1, bytes: b2.since(&b1).total_bytes() };
        Ok((r_q, s1, s2))
    }

    fn handle_query(&self, payload: &[u8]) -> Result<Vec<u8>> {
        let token = get_u64(payload, 0)?;
        let k = get_u32(payload, 8)? as usize;
        let mut r = Reader::new(&self.codec, &payload[12..]);
        let attrs = r.rest()?;
        attrs.iter().try_for_each(|c| self.enc.pk().validate(c))?;
        let (r_q, s1, s2) = self.run_query(&EncQuery { attrs }, k, token)?;
        let mut out = Vec::new();
        plaintext_codec(self.enc.pk()).put(&mut out, &r_q)?;
        for v in [s1.time.as_nanos() as u64, s2.time.as_nanos() as u64, s1.bytes, s2.bytes] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        Ok(out)
    }

    /// Serves one querier connection until it closes.
    pub fn serve(&self, ch: &Channel) -> Result<()> {
        loop {
            let frame = match ch.accept() {
                Ok(f) => f,
                Err(Error::ChannelClosed) => return Ok(()),
                Err(e) => return Err(e),
            };
            let reply = match frame.protocol_id {
                role_ids::INFO => Ok(params_payload(&self.db.params)),
                role_ids::QUERY if frame.payload.len() >= 12 => self.handle_query(&frame.payload),
                role_ids::QUERY => Err(Error::Protocol("query message truncated".into())),
                id => Err(Error::Protocol(format!("C1 does not answer message {id:#06x}"))),
            };
            match reply {
                Ok(body) => ch.reply(&frame, frame.protocol_id, body)?,
                Err(e) => {
                    log::warn!("query failed: {e}");
                    ch.reply_error(&frame, &e.to_string())?
                }
            }
        }
    }

    pub fn spawn(self: Arc<Self>, ch: Channel) -> JoinHandle<Result<()>> {
        std::thread::Builder::new().name("ppknn-c1".into()).spawn(move || self.serve(&ch)).expect("spawn C1")
    }
}

// ------------------------------------------------------------------ C2

enum Slot {
    Ready(Vec<u8>),
    Waiting(Channel, Frame),
}

/// Cloud C2: the key holder plus the hand-off of revealed results to queriers.
pub struct C2Service {
    keyholder: Arc<KeyHolder>,
    mailbox: Mutex<HashMap<u64, Slot>>,
}

impl std::fmt::Debug for C2Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("C2Service").field("keyholder", &self.keyholder).finish()
    }
}

impl C2Service {
    pub fn new(keyholder: KeyHolder) -> Arc<Self> {
        Arc::new(C2Service { keyholder: Arc::new(keyholder), mailbox: Mutex::new(HashMap::new()) })
    }

    pub fn keyholder(&self) -> &Arc<KeyHolder> {
        &self.keyholder
    }

    fn reveal(&self, payload: &[u8]) -> Result<Vec<u8>> {
        let token = get_u64(payload, 0)?;
        let pk = self.keyholder.secret_key().public_key();
        let codec = CiphertextCodec::for_key(pk);
        let gamma = codec.decode_exact(&payload[8..], 1)?;
        let value = self.keyholder.secret_key().decrypt(&gamma[0])?;
        let mut body = Vec::new();
        plaintext_codec(pk).put(&mut body, &value)?;
        let mut mailbox = self.mailbox.lock().unwrap();
        match mailbox.remove(&token) {
            None => {
                mailbox.insert(token, Slot::Ready(body));
            }
            Some(Slot::Waiting(ch, frame)) => {
                if let Err(e) = ch.reply(&frame, role_ids::AWAIT, body) {
                    log::warn!("querier left before its result arrived: {e}");
                }
            }
            Some(ready @ Slot::Ready(_)) => {
                mailbox.insert(token, ready);
                return Err(Error::Protocol(format!("token {token:#x} revealed twice")));
            }
        }
        Ok(Vec::new())
    }

    fn await_result(&self, ch: &Channel, frame: &Frame) -> Dispatch {
        let token = match get_u64(&frame.payload, 0) {
            Ok(t) => t,
            Err(e) => return Dispatch::Reply(Err(e)),
        };
        let mut mailbox = self.mailbox.lock().unwrap();
        match mailbox.remove(&token) {
            Some(Slot::Ready(body)) => Dispatch::Reply(Ok(body)),
            None => {
                mailbox.insert(token, Slot::Waiting(ch.clone(), frame.clone()));
                Dispatch::Deferred
            }
            Some(waiting) => {
                mailbox.insert(token, waiting);
                Dispatch::Reply(Err(Error::Protocol(format!("token {token:#x} already awaited"))))
            }
        }
    }

    /// Serves one connection, from C1 or from a querier, until it closes.
    pub fn serve(self: &Arc<Self>, ch: &Channel) -> Result<()> {
        self.keyholder.serve_with(ch, |ch, frame| match frame.protocol_id {
            role_ids::REVEAL => Dispatch::Reply(self.reveal(&frame.payload)),
            role_ids::AWAIT => self.await_result(ch, frame),
            id if KeyHolder::handles(id) => Dispatch::Pass,
            id => Dispatch::Reply(Err(Error::Protocol(format!("C2 does not answer message {id:#06x}")))),
        })
    }

    pub fn spawn(self: Arc<Self>, ch: Channel) -> JoinHandle<Result<()>> {
        std::thread::Builder::new().name("ppknn-c2".into()).spawn(move || self.serve(&ch)).expect("spawn C2")
    }
}

// ------------------------------------------------------------ TCP serving

fn serve_listener<F>(listener: TcpListener, key_bits: u32, role: &'static str, handle: F) -> Result<()>
where
    F: Fn(Channel) -> Result<()> + Send + Sync + 'static,
{
    let handle = Arc::new(handle);
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        let handle = handle.clone();
        std::thread::Builder::new().name(format!("ppknn-{role}-conn")).spawn(move || {
            let result = Channel::from_tcp(stream, key_bits).and_then(|ch| handle(ch));
            match result {
                Ok(()) => log::debug!("{role}: {peer} disconnected"),
                Err(e) => log::warn!("{role}: connection from {peer} failed: {e}"),
            }
        })?;
    }
    Ok(())
}

/// Accepts querier connections forever, one thread per connection.
pub fn serve_c1(listener: TcpListener, c1: Arc<C1Service>) -> Result<()> {
    let bits = c1.enc.pk().bits();
    serve_listener(listener, bits, "c1", move |ch| c1.serve(&ch))
}

/// Accepts C1 and querier connections forever, one thread per connection.
pub fn serve_c2(listener: TcpListener, c2: Arc<C2Service>) -> Result<()> {
    let bits = c2.keyholder.secret_key().public_key().bits();
    serve_listener(listener, bits, "c2", move |ch| c2.serve(&ch))
}

// -------------------------------------------------------------- querier

/// Public database shape, as announced by C1.
pub fn fetch_params(c1: &Channel) -> Result<DbParams> {
    parse_params(&c1.open_session().request(role_ids::INFO, Vec::new())?)
}

/// Classifies `q` through remote clouds. Arity, range and `k` are checked
/// against C1's announced shape before the encrypted query is sent.
pub fn query_remote<R: RngCore + ?Sized>(
    c1: &Channel,
    c2: &Channel,
    enc: &Encryptor,
    q: &[u64],
    k: usize,
    rng: &mut R,
) -> Result<ClassificationResult> {
    let start = Instant::now();
    let params = fetch_params(c1)?;
    let pk = enc.pk();
    if params.key_bits != pk.bits() {
        return Err(Error::Config(format!("C1 uses {}-bit keys, local key has {}", params.key_bits, pk.bits())));
    }
    dataset::check_query(q, params.m, params.attr_bits)?;
    check_k(k, params.n)?;
    let query = querier_encrypt_query(enc, q, &params, rng)?;
    let token: u64 = rng.gen();
    let codec = CiphertextCodec::for_key(pk);
    let mut payload = token.to_be_bytes().to_vec();
    payload.extend_from_slice(&(k as u32).to_be_bytes());
    let payload = [payload, Writer::new(&codec).cts(&query.attrs)?.finish()].concat();
    let reply = c1.open_session().request(role_ids::QUERY, payload)?;
    let plain = plaintext_codec(pk);
    if reply.len() != plain.width() + 32 {
        return Err(Error::Protocol(format!("result message of {} bytes", reply.len())));
    }
    let r_q = plain.get(&reply[..plain.width()]);
    let at = plain.width();
    let stage1 = StageCost { time: Duration::from_nanos(get_u64(&reply, at)?), bytes: get_u64(&reply, at + 16)? };
    let stage2 = StageCost { time: Duration::from_nanos(get_u64(&reply, at + 8)?), bytes: get_u64(&reply, at + 24)? };
    let masked = c2.open_session().request(role_ids::AWAIT, token.to_be_bytes().to_vec())?;
    if masked.len() != plain.width() {
        return Err(Error::Protocol(format!("masked result of {} bytes", masked.len())));
    }
    let label = (plain.get(&masked) - r_q).rem_euc(pk.n());
    let label = label.to_u64().ok_or_else(|| Error::Range("recovered class does not fit 64 bits".into()))?;
    Ok(ClassificationResult { label, stage1, stage2, total_time: start.elapsed() })
}

// ------------------------------------------------------------ in-process

/// All four roles in one process, connected by loopback channels.
pub struct LocalDeployment {
    c1: Arc<C1Service>,
    c2: Arc<C2Service>,
    querier_enc: Encryptor,
    to_c1: Channel,
    to_c2: Channel,
    rng: Mutex<ChaCha20Rng>,
}

impl std::fmt::Debug for LocalDeployment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalDeployment").field("c1", &self.c1).finish()
    }
}

impl LocalDeployment {
    pub fn new(db: EncDatabase, keyholder: KeyHolder, opts: EngineOptions) -> Result<Self> {
        let pk = keyholder.secret_key().public_key().clone();
        let bits = pk.bits();
        let pk = Arc::new(pk);
        let c2 = C2Service::new(keyholder);
        let c2_for_c1 = c2.clone();
        let connect = move || {
            let (near, far) = Channel::loopback_pair(bits)?;
            c2_for_c1.clone().spawn(far);
            Ok(near)
        };
        let c1 = Arc::new(C1Service::new(db, pk.clone(), connect, &opts)?);
        let (to_c1, c1_end) = Channel::loopback_pair(bits)?;
        c1.clone().spawn(c1_end);
        let (to_c2, c2_end) = Channel::loopback_pair(bits)?;
        c2.clone().spawn(c2_end);
        Ok(LocalDeployment { c1, c2, querier_enc: Encryptor::public(pk), to_c1, to_c2, rng: Mutex::new(opts.rng(2)) })
    }

    pub fn c1(&self) -> &Arc<C1Service> {
        &self.c1
    }

    pub fn c2(&self) -> &Arc<C2Service> {
        &self.c2
    }

    /// Runs one query as the querier.
    pub fn query(&self, q: &[u64], k: usize) -> Result<ClassificationResult> {
        let mut rng = random::fork(&mut *self.rng.lock().unwrap());
        query_remote(&self.to_c1, &self.to_c2, &self.querier_enc, q, k, &mut rng)
    }
}

/// One-shot classification of `q` against `db` with every role in process.
///
/// The label is the majority class among the k records nearest `q` by
/// squared Euclidean distance. When the k-th distance or the majority is
/// tied, any tie-consistent answer may be returned.
pub fn classify(db: EncDatabase, keyholder: KeyHolder, q: &[u64], k: usize, opts: EngineOptions) -> Result<ClassificationResult> {
    LocalDeployment::new(db, keyholder, opts)?.query(q, k)
}
