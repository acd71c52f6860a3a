use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::os::unix::net::UnixStream;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use super::frame::Frame;
use crate::error::{Error, Result};

pub const HANDSHAKE_MAGIC: &[u8; 4] = b"PPKN";
pub const PROTOCOL_VERSION: u8 = 0x01;

/// Protocol id of the opening handshake frame.
pub const HANDSHAKE_ID: u16 = 0x0000;
/// Protocol id of a frame that aborts a session with a UTF-8 reason.
pub const ERROR_ID: u16 = 0xffff;

/// Byte and frame totals, per direction, including length prefixes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
}

impl Traffic {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }

    pub fn since(&self, earlier: &Traffic) -> Traffic {
        Traffic {
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
            frames_sent: self.frames_sent - earlier.frames_sent,
            frames_received: self.frames_received - earlier.frames_received,
        }
    }
}

#[derive(Default)]
struct Counters {
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
    frames_sent: AtomicU64,
    frames_received: AtomicU64,
}

#[derive(Default)]
struct Inbox {
    registered: HashSet<u32>,
    routed: HashMap<u32, VecDeque<Result<Frame>>>,
    incoming: VecDeque<Result<Frame>>,
    next_seq: HashMap<u32, u16>,
    closed: Option<String>,
}

struct Core {
    inbox: Mutex<Inbox>,
    ready: Condvar,
    counters: Counters,
}

impl Core {
    fn deliver(&self, frame: Frame) {
        self.counters.bytes_received.fetch_add(frame.wire_len() as u64, Ordering::Relaxed);
        self.counters.frames_received.fetch_add(1, Ordering::Relaxed);
        let mut inbox = self.inbox.lock().unwrap();
        let sid = frame.session_id;
        let expected = inbox.next_seq.get(&sid).copied().unwrap_or(0);
        let item = if frame.msg_seq == expected {
            inbox.next_seq.insert(sid, expected.wrapping_add(1));
            Ok(frame)
        } else {
            Err(Error::Ordering { session: sid, expected, got: frame.msg_seq })
        };
        if inbox.registered.contains(&sid) {
            inbox.routed.entry(sid).or_default().push_back(item);
        } else {
            inbox.incoming.push_back(item);
        }
        self.ready.notify_all();
    }

    fn close(&self, reason: String) {
        let mut inbox = self.inbox.lock().unwrap();
        inbox.closed.get_or_insert(reason);
        self.ready.notify_all();
    }
}

struct Shared {
    core: Arc<Core>,
    writer: Mutex<Box<dyn Write + Send>>,
    shutdown: Box<dyn Fn() + Send + Sync>,
    next_session: AtomicU32,
    key_bits: u32,
    transcript: Mutex<Option<Vec<u8>>>,
}

impl Drop for Shared {
    fn drop(&mut self) {
        (self.shutdown)();
    }
}

/// Ordered, reliable, duplex frame stream between two parties.
///
/// Cloning yields another handle on the same connection. Frames are routed to
/// the [`Session`] that owns their session id; frames for sessions not opened
/// locally queue up for [`Channel::accept`]. The connection is shut down when
/// the last handle is dropped.
#[derive(Clone)]
pub struct Channel {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel").field("key_bits", &self.shared.key_bits).field("traffic", &self.traffic()).finish()
    }
}

fn handshake_payload(key_bits: u32) -> Vec<u8> {
    let mut p = Vec::with_capacity(9);
    p.extend_from_slice(HANDSHAKE_MAGIC);
    p.push(PROTOCOL_VERSION);
    p.extend_from_slice(&key_bits.to_be_bytes());
    p
}

fn send_handshake(w: &mut dyn Write, key_bits: u32) -> Result<u64> {
    let frame = Frame::new(HANDSHAKE_ID, 0, 0, handshake_payload(key_bits));
    Ok(frame.write_to(w)? as u64)
}

fn recv_handshake(r: &mut dyn Read, key_bits: u32) -> Result<u64> {
    let frame = Frame::read_from(r)?.ok_or_else(|| Error::Handshake("peer closed before handshake".into()))?;
    let p = &frame.payload;
    if frame.protocol_id != HANDSHAKE_ID || p.len() != 9 || &p[..4] != HANDSHAKE_MAGIC {
        return Err(Error::Handshake("peer did not send a handshake frame".into()));
    }
    if p[4] != PROTOCOL_VERSION {
        return Err(Error::Handshake(format!("version mismatch: local {PROTOCOL_VERSION:#04x}, peer {:#04x}", p[4])));
    }
    let peer_bits = u32::from_be_bytes(p[5..9].try_into().unwrap());
    if peer_bits != key_bits {
        return Err(Error::Handshake(format!("key size mismatch: local {key_bits}, peer {peer_bits}")));
    }
    Ok(frame.wire_len() as u64)
}

impl Channel {
    fn start(
        mut reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        shutdown: Box<dyn Fn() + Send + Sync>,
        key_bits: u32,
        handshake_bytes: (u64, u64),
    ) -> Channel {
        let core = Arc::new(Core { inbox: Mutex::new(Inbox::default()), ready: Condvar::new(), counters: Counters::default() });
        core.counters.bytes_sent.store(handshake_bytes.0, Ordering::Relaxed);
        core.counters.bytes_received.store(handshake_bytes.1, Ordering::Relaxed);
        core.counters.frames_sent.store(1, Ordering::Relaxed);
        core.counters.frames_received.store(1, Ordering::Relaxed);
        let reader_core = core.clone();
        thread::Builder::new()
            .name("ppknn-channel-reader".into())
            .spawn(move || loop {
                match Frame::read_from(&mut *reader) {
                    Ok(Some(frame)) => reader_core.deliver(frame),
                    Ok(None) => return reader_core.close("peer closed the connection".into()),
                    Err(e) => return reader_core.close(e.to_string()),
                }
            })
            .expect("spawn channel reader");
        Channel {
            shared: Arc::new(Shared {
                core,
                writer: Mutex::new(writer),
                shutdown,
                next_session: AtomicU32::new(1),
                key_bits,
                transcript: Mutex::new(None),
            }),
        }
    }

    /// Handshakes over a connected TCP stream.
    pub fn from_tcp(stream: TcpStream, key_bits: u32) -> Result<Channel> {
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let mut writer = stream.try_clone()?;
        let sent = send_handshake(&mut writer, key_bits)?;
        let received = recv_handshake(&mut reader, key_bits)?;
        let shutdown = Box::new(move || {
            let _ = stream.shutdown(Shutdown::Both);
        });
        Ok(Self::start(Box::new(reader), Box::new(writer), shutdown, key_bits, (sent, received)))
    }

    /// Connects to `addr` over TCP and handshakes.
    pub fn connect(addr: impl ToSocketAddrs, key_bits: u32) -> Result<Channel> {
        Self::from_tcp(TcpStream::connect(addr)?, key_bits)
    }

    /// Handshakes over a connected Unix stream.
    pub fn from_unix(stream: UnixStream, key_bits: u32) -> Result<Channel> {
        let mut reader = stream.try_clone()?;
        let mut writer = stream.try_clone()?;
        let sent = send_handshake(&mut writer, key_bits)?;
        let received = recv_handshake(&mut reader, key_bits)?;
        let shutdown = Box::new(move || {
            let _ = stream.shutdown(Shutdown::Both);
        });
        Ok(Self::start(Box::new(reader), Box::new(writer), shutdown, key_bits, (sent, received)))
    }

    /// Two in-process ends of one connection.
    pub fn loopback_pair(key_bits: u32) -> Result<(Channel, Channel)> {
        Self::loopback_pair_with(key_bits, key_bits)
    }

    /// Like [`Channel::loopback_pair`] but each end announces its own key size,
    /// so a mismatch surfaces as a handshake error.
    pub fn loopback_pair_with(a_bits: u32, b_bits: u32) -> Result<(Channel, Channel)> {
        let (a, b) = UnixStream::pair()?;
        let other = thread::spawn(move || Channel::from_unix(b, b_bits));
        let first = Channel::from_unix(a, a_bits);
        let second = other.join().map_err(|_| Error::Handshake("loopback peer panicked".into()))?;
        Ok((first?, second?))
    }

    pub fn key_bits(&self) -> u32 {
        self.shared.key_bits
    }

    pub fn traffic(&self) -> Traffic {
        let c = &self.shared.core.counters;
        Traffic {
            bytes_sent: c.bytes_sent.load(Ordering::Relaxed),
            bytes_received: c.bytes_received.load(Ordering::Relaxed),
            frames_sent: c.frames_sent.load(Ordering::Relaxed),
            frames_received: c.frames_received.load(Ordering::Relaxed),
        }
    }

    /// Starts (or stops, with `false`) keeping a copy of every outbound byte.
    pub fn record_outbound(&self, on: bool) {
        *self.shared.transcript.lock().unwrap() = on.then(Vec::new);
    }

    /// Outbound bytes recorded since [`Channel::record_outbound`] was enabled.
    pub fn take_transcript(&self) -> Vec<u8> {
        self.shared.transcript.lock().unwrap().as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Writes one frame. Frames from concurrent callers never interleave.
    pub fn send_frame(&self, frame: &Frame) -> Result<()> {
        let bytes = frame.encode();
        {
            let mut w = self.shared.writer.lock().unwrap();
            w.write_all(&bytes)?;
            w.flush()?;
            if let Some(t) = self.shared.transcript.lock().unwrap().as_mut() {
                t.extend_from_slice(&bytes);
            }
        }
        let c = &self.shared.core.counters;
        c.bytes_sent.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        c.frames_sent.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Opens a locally initiated session with a fresh id.
    pub fn open_session(&self) -> Session {
        let id = self.shared.next_session.fetch_add(1, Ordering::Relaxed);
        self.session_with_id(id)
    }

    /// Opens a session with a caller-chosen id.
    pub fn session_with_id(&self, id: u32) -> Session {
        self.shared.core.inbox.lock().unwrap().registered.insert(id);
        Session { channel: self.clone(), id, send_seq: 0 }
    }

    /// Next frame of a session this side did not open. Blocks until one
    /// arrives; returns [`Error::ChannelClosed`] once the peer has gone.
    pub fn accept(&self) -> Result<Frame> {
        let core = &self.shared.core;
        let mut inbox = core.inbox.lock().unwrap();
        loop {
            if let Some(item) = inbox.incoming.pop_front() {
                return item;
            }
            if inbox.closed.is_some() {
                return Err(Error::ChannelClosed);
            }
            inbox = core.ready.wait(inbox).unwrap();
        }
    }

    /// Answers `request` within its session, mirroring its sequence number.
    pub fn reply(&self, request: &Frame, protocol_id: u16, payload: Vec<u8>) -> Result<()> {
        self.send_frame(&Frame::new(protocol_id, request.session_id, request.msg_seq, payload))
    }

    /// Aborts the requester's session with a reason.
    pub fn reply_error(&self, request: &Frame, reason: &str) -> Result<()> {
        self.reply(request, ERROR_ID, reason.as_bytes().to_vec())
    }

    fn recv_routed(&self, id: u32) -> Result<Frame> {
        let core = &self.shared.core;
        let mut inbox = core.inbox.lock().unwrap();
        loop {
            if let Some(item) = inbox.routed.get_mut(&id).and_then(|q| q.pop_front()) {
                return item;
            }
            if inbox.closed.is_some() {
                return Err(Error::ChannelClosed);
            }
            inbox = core.ready.wait(inbox).unwrap();
        }
    }
}

/// One sub-protocol invocation: a strictly alternating request/response
/// dialogue identified by a session id.
pub struct Session {
    channel: Channel,
    id: u32,
    send_seq: u16,
}

impl Session {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn send(&mut self, protocol_id: u16, payload: Vec<u8>) -> Result<()> {
        let frame = Frame::new(protocol_id, self.id, self.send_seq, payload);
        self.send_seq = self.send_seq.wrapping_add(1);
        self.channel.send_frame(&frame)
    }

    /// Next frame for this session. An error frame from the peer becomes
    /// [`Error::Remote`].
    pub fn recv(&mut self) -> Result<Frame> {
        let frame = self.channel.recv_routed(self.id)?;
        if frame.protocol_id == ERROR_ID {
            return Err(Error::Remote(String::from_utf8_lossy(&frame.payload).into_owned()));
        }
        Ok(frame)
    }

    /// Sends one message and waits for the reply, which must carry the same
    /// protocol id. Returns the reply payload.
    pub fn request(&mut self, protocol_id: u16, payload: Vec<u8>) -> Result<Vec<u8>> {
        self.send(protocol_id, payload)?;
        let reply = self.recv()?;
        if reply.protocol_id != protocol_id {
            return Err(Error::Protocol(format!(
                "expected reply to {protocol_id:#06x}, got {:#06x}",
                reply.protocol_id
            )));
        }
        Ok(reply.payload)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let mut inbox = self.channel.shared.core.inbox.lock().unwrap();
        inbox.registered.remove(&self.id);
        inbox.routed.remove(&self.id);
    }
}
