//! TCP transport for the broker.
//!
//! Every message is a frame: a 4-byte big-endian length followed by that
//! many payload bytes. Strings (topics, keys, error text) inside a payload
//! carry their own 4-byte big-endian length prefix.
//!
//! Request payloads start with a one-byte opcode:
//!
//! | op     | operation        | fields after the opcode                      |
//! |--------|------------------|----------------------------------------------|
//! | `0x01` | publish_request  | topic, message (rest of frame)               |
//! | `0x02` | consume_request  | timeout ms (u32), topic count (u32), topics  |
//! | `0x03` | publish_result   | topic, message                               |
//! | `0x04` | consume_result   | timeout ms (u32), topic                      |
//! | `0x10` | kv_put           | key, value                                   |
//! | `0x11` | kv_get           | key                                          |
//! | `0x12` | kv_delete        | key                                          |
//! | `0x20` | register_topic   | topic                                        |
//!
//! Responses echo the opcode, then a status byte: `0x00` ok, `0x01`
//! timeout or not-found, `0xFF` error followed by `<kind>: <detail>` text.
//! Ok bodies: consume_request returns topic then message; consume_result
//! and kv_get return the raw bytes; the rest are empty.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{Broker, BrokerError, MemoryBroker, Topic};

pub const OP_PUBLISH_REQUEST: u8 = 0x01;
pub const OP_CONSUME_REQUEST: u8 = 0x02;
pub const OP_PUBLISH_RESULT: u8 = 0x03;
pub const OP_CONSUME_RESULT: u8 = 0x04;
pub const OP_KV_PUT: u8 = 0x10;
pub const OP_KV_GET: u8 = 0x11;
pub const OP_KV_DELETE: u8 = 0x12;
pub const OP_REGISTER_TOPIC: u8 = 0x20;

pub const STATUS_OK: u8 = 0x00;
pub const STATUS_EMPTY: u8 = 0x01;
pub const STATUS_ERROR: u8 = 0xFF;

const MAX_FRAME: usize = 1 << 30;

pub fn write_frame<W: Write>(w: &mut W, parts: &[&[u8]]) -> io::Result<()> {
    let len: usize = parts.iter().map(|p| p.len()).sum();
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    w.write_all(&(len as u32).to_be_bytes())?;
    for p in parts {
        w.write_all(p)?;
    }
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8, BrokerError> {
        let (&b, rest) = self
            .buf
            .split_first()
            .ok_or_else(|| BrokerError::Protocol("truncated frame".into()))?;
        self.buf = rest;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32, BrokerError> {
        if self.buf.len() < 4 {
            return Err(BrokerError::Protocol("truncated frame".into()));
        }
        let (head, rest) = self.buf.split_at(4);
        self.buf = rest;
        Ok(u32::from_be_bytes(head.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<&'a str, BrokerError> {
        let n = self.u32()? as usize;
        if self.buf.len() < n {
            return Err(BrokerError::Protocol("truncated string".into()));
        }
        let (s, rest) = self.buf.split_at(n);
        self.buf = rest;
        std::str::from_utf8(s).map_err(|_| BrokerError::Protocol("string is not UTF-8".into()))
    }

    fn rest(self) -> &'a [u8] {
        self.buf
    }
}

fn error_text(e: &BrokerError) -> String {
    match e {
        BrokerError::UnknownTopic(t) => format!("unknown_topic: {t}"),
        BrokerError::InvalidTopic(t) => format!("invalid_topic: {t}"),
        BrokerError::InvalidKey => "invalid_key: ".into(),
        BrokerError::NotFound(k) => format!("not_found: {k}"),
        BrokerError::NoTopics => "no_topics: ".into(),
        BrokerError::Io(m) => format!("io: {m}"),
        BrokerError::Protocol(m) => format!("protocol: {m}"),
    }
}

fn parse_error_text(text: &str) -> BrokerError {
    let (kind, detail) = text.split_once(": ").unwrap_or((text, ""));
    let detail = detail.to_owned();
    match kind {
        "unknown_topic" => BrokerError::UnknownTopic(detail),
        "invalid_topic" => BrokerError::InvalidTopic(detail),
        "invalid_key" => BrokerError::InvalidKey,
        "not_found" => BrokerError::NotFound(detail),
        "no_topics" => BrokerError::NoTopics,
        "io" => BrokerError::Io(detail),
        _ => BrokerError::Protocol(detail),
    }
}

enum Reply {
    Ok(Vec<Vec<u8>>),
    Empty,
}

fn handle(broker: &MemoryBroker, frame: &[u8]) -> (u8, Result<Reply, BrokerError>) {
    let mut c = Cursor { buf: frame };
    let op = match c.u8() {
        Ok(op) => op,
        Err(e) => return (0, Err(e)),
    };
    let reply = (|| -> Result<Reply, BrokerError> {
        match op {
            OP_PUBLISH_REQUEST | OP_PUBLISH_RESULT => {
                let topic = Topic::new(c.str()?)?;
                let msg = c.rest().to_vec();
                if op == OP_PUBLISH_REQUEST {
                    broker.publish_request(&topic, msg)?;
                } else {
                    broker.publish_result(&topic, msg)?;
                }
                Ok(Reply::Ok(vec![]))
            }
            OP_CONSUME_REQUEST => {
                let timeout = Duration::from_millis(c.u32()? as u64);
                let n = c.u32()? as usize;
                let topics = (0..n)
                    .map(|_| Topic::new(c.str()?))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(match broker.consume_request(&topics, timeout)? {
                    Some((t, msg)) => {
                        let mut head = Vec::new();
                        put_str(&mut head, t.as_str());
                        Reply::Ok(vec![head, msg])
                    }
                    None => Reply::Empty,
                })
            }
            OP_CONSUME_RESULT => {
                let timeout = Duration::from_millis(c.u32()? as u64);
                let topic = Topic::new(c.str()?)?;
                Ok(match broker.consume_result(&topic, timeout)? {
                    Some(msg) => Reply::Ok(vec![msg]),
                    None => Reply::Empty,
                })
            }
            OP_KV_PUT => {
                let key = c.str()?.to_owned();
                broker.kv_put(&key, c.rest().to_vec())?;
                Ok(Reply::Ok(vec![]))
            }
            OP_KV_GET => match broker.kv_get(c.str()?) {
                Ok(v) => Ok(Reply::Ok(vec![v])),
                Err(BrokerError::NotFound(_)) => Ok(Reply::Empty),
                Err(e) => Err(e),
            },
            OP_KV_DELETE => {
                broker.kv_delete(c.str()?)?;
                Ok(Reply::Ok(vec![]))
            }
            OP_REGISTER_TOPIC => {
                broker.register_topic(&Topic::new(c.str()?)?)?;
                Ok(Reply::Ok(vec![]))
            }
            other => Err(BrokerError::Protocol(format!("unknown opcode {other:#04x}"))),
        }
    })();
    (op, reply)
}

fn serve_connection(broker: Arc<MemoryBroker>, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::with_capacity(1 << 16, stream.try_clone()?);
    let mut writer = BufWriter::with_capacity(1 << 16, stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        let (op, reply) = handle(&broker, &frame);
        match reply {
            Ok(Reply::Ok(parts)) => {
                let head = [op, STATUS_OK];
                let mut all: Vec<&[u8]> = vec![&head];
                all.extend(parts.iter().map(Vec::as_slice));
                write_frame(&mut writer, &all)?;
            }
            Ok(Reply::Empty) => write_frame(&mut writer, &[&[op, STATUS_EMPTY]])?,
            Err(e) => {
                let text = error_text(&e);
                write_frame(&mut writer, &[&[op, STATUS_ERROR], text.as_bytes()])?;
            }
        }
    }
}

/// Serves a [`MemoryBroker`] over TCP, one thread per connection.
pub struct TcpBrokerServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<HashMap<u64, TcpStream>>>,
    accept: Option<JoinHandle<()>>,
    broker: Arc<MemoryBroker>,
}

impl TcpBrokerServer {
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Self::bind_with(addr, Arc::new(MemoryBroker::new()))
    }

    pub fn bind_with(addr: impl ToSocketAddrs, broker: Arc<MemoryBroker>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::default();
        let next_id = AtomicU64::new(0);
        let accept = {
            let stop = stop.clone();
            let conns = conns.clone();
            let broker = broker.clone();
            std::thread::Builder::new()
                .name("broker-accept".into())
                .spawn(move || {
                    for stream in listener.incoming() {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(stream) = stream else { continue };
                        let _ = stream.set_nodelay(true);
                        let id = next_id.fetch_add(1, Ordering::Relaxed);
                        if let Ok(clone) = stream.try_clone() {
                            conns.lock().unwrap().insert(id, clone);
                        }
                        let broker = broker.clone();
                        let conns = conns.clone();
                        let _ = std::thread::Builder::new()
                            .name("broker-conn".into())
                            .spawn(move || {
                                if let Err(e) = serve_connection(broker, stream) {
                                    log::debug!("broker connection closed: {e}");
                                }
                                conns.lock().unwrap().remove(&id);
                            });
                    }
                })?
        };
        Ok(TcpBrokerServer {
            addr,
            stop,
            conns,
            accept: Some(accept),
            broker,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn broker(&self) -> &Arc<MemoryBroker> {
        &self.broker
    }

    /// Stops accepting and closes every open connection.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for (_, c) in self.conns.lock().unwrap().drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for TcpBrokerServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// Client for a [`TcpBrokerServer`]; safe to share between threads.
///
/// Each call borrows an idle connection from a small pool (opening a new one
/// when none is idle), so concurrent blocking consumes do not serialize.
pub struct TcpBroker {
    addr: SocketAddr,
    idle: Mutex<Vec<Conn>>,
}

impl TcpBroker {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, BrokerError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| BrokerError::Io("address did not resolve".into()))?;
        let client = TcpBroker {
            addr,
            idle: Mutex::new(Vec::new()),
        };
        let conn = client.open()?;
        client.idle.lock().unwrap().push(conn);
        Ok(client)
    }

    fn open(&self) -> Result<Conn, BrokerError> {
        let s = TcpStream::connect(self.addr)?;
        s.set_nodelay(true)?;
        Ok(Conn {
            reader: BufReader::with_capacity(1 << 16, s.try_clone()?),
            writer: BufWriter::with_capacity(1 << 16, s),
        })
    }

    fn call(&self, parts: &[&[u8]]) -> Result<(u8, Vec<u8>), BrokerError> {
        let pooled = self.idle.lock().unwrap().pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => self.open()?,
        };
        write_frame(&mut conn.writer, parts)?;
        let mut reply = read_frame(&mut conn.reader)?;
        self.idle.lock().unwrap().push(conn);
        if reply.len() < 2 || reply[0] != parts[0][0] {
            return Err(BrokerError::Protocol("malformed reply".into()));
        }
        let status = reply[1];
        reply.drain(..2);
        if status == STATUS_ERROR {
            return Err(parse_error_text(&String::from_utf8_lossy(&reply)));
        }
        Ok((status, reply))
    }

    fn head(op: u8, strings: &[&str]) -> Vec<u8> {
        let mut h = vec![op];
        for s in strings {
            put_str(&mut h, s);
        }
        h
    }
}

fn timeout_ms(t: Duration) -> [u8; 4] {
    (t.as_millis().min(u32::MAX as u128) as u32).to_be_bytes()
}

impl Broker for TcpBroker {
    fn register_topic(&self, topic: &Topic) -> Result<(), BrokerError> {
        self.call(&[&Self::head(OP_REGISTER_TOPIC, &[topic.as_str()])])?;
        Ok(())
    }

    fn publish_request(&self, topic: &Topic, message: Vec<u8>) -> Result<(), BrokerError> {
        self.call(&[&Self::head(OP_PUBLISH_REQUEST, &[topic.as_str()]), &message])?;
        Ok(())
    }

    fn consume_request(
        &self,
        topics: &[Topic],
        timeout: Duration,
    ) -> Result<Option<(Topic, Vec<u8>)>, BrokerError> {
        if topics.is_empty() {
            return Err(BrokerError::NoTopics);
        }
        let mut h = vec![OP_CONSUME_REQUEST];
        h.extend_from_slice(&timeout_ms(timeout));
        h.extend_from_slice(&(topics.len() as u32).to_be_bytes());
        for t in topics {
            put_str(&mut h, t.as_str());
        }
        let (status, body) = self.call(&[&h])?;
        if status == STATUS_EMPTY {
            return Ok(None);
        }
        let mut c = Cursor { buf: &body };
        let topic = Topic::new(c.str()?)?;
        Ok(Some((topic, c.rest().to_vec())))
    }

    fn publish_result(&self, topic: &Topic, message: Vec<u8>) -> Result<(), BrokerError> {
        self.call(&[&Self::head(OP_PUBLISH_RESULT, &[topic.as_str()]), &message])?;
        Ok(())
    }

    fn consume_result(
        &self,
        topic: &Topic,
        timeout: Duration,
    ) -> Result<Option<Vec<u8>>, BrokerError> {
        let mut h = vec![OP_CONSUME_RESULT];
        h.extend_from_slice(&timeout_ms(timeout));
        put_str(&mut h, topic.as_str());
        let (status, body) = self.call(&[&h])?;
        Ok((status == STATUS_OK).then_some(body))
    }

    fn kv_put(&self, key: &str, value: Vec<u8>) -> Result<(), BrokerError> {
        super::check_key(key)?;
        self.call(&[&Self::head(OP_KV_PUT, &[key]), &value])?;
        Ok(())
    }

    fn kv_get(&self, key: &str) -> Result<Vec<u8>, BrokerError> {
        super::check_key(key)?;
        let (status, body) = self.call(&[&Self::head(OP_KV_GET, &[key])])?;
        if status == STATUS_EMPTY {
            return Err(BrokerError::NotFound(key.to_owned()));
        }
        Ok(body)
    }

    fn kv_delete(&self, key: &str) -> Result<(), BrokerError> {
        super::check_key(key)?;
        self.call(&[&Self::head(OP_KV_DELETE, &[key])])?;
        Ok(())
    }

    fn locator(&self) -> String {
        format!("tcp://{}", self.addr)
    }
}
