//! Frame delivery between clients and shards, over in-process channels or
//! local TCP sockets, with per-message-type byte accounting.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;

use super::protocol::{read_frame, FRAME_HEADER, MSG_COEF, MSG_CTRL, MSG_PART, MSG_REQ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    #[default]
    InProcess,
    Tcp,
}

/// Counts frames and bytes (length prefix included) by message type.
#[derive(Debug, Default)]
pub struct ByteCounter {
    messages: [AtomicU64; 5],
    bytes: [AtomicU64; 5],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TypeTraffic {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrafficReport {
    pub request: TypeTraffic,
    pub partial: TypeTraffic,
    pub coefficients: TypeTraffic,
    pub control: TypeTraffic,
}

impl TrafficReport {
    pub fn total_bytes(&self) -> u64 {
        self.request.bytes + self.partial.bytes + self.coefficients.bytes + self.control.bytes
    }

    pub fn total_messages(&self) -> u64 {
        self.request.messages
            + self.partial.messages
            + self.coefficients.messages
            + self.control.messages
    }
}

impl ByteCounter {
    pub fn record(&self, frame: &[u8]) {
        let tag = frame.get(FRAME_HEADER).copied().unwrap_or(0) as usize;
        let slot = if tag < 5 { tag } else { 0 };
        self.messages[slot].fetch_add(1, Ordering::Relaxed);
        self.bytes[slot].fetch_add(frame.len() as u64, Ordering::Relaxed);
    }

    pub fn report(&self) -> TrafficReport {
        let get = |tag: u8| TypeTraffic {
            messages: self.messages[tag as usize].load(Ordering::Relaxed),
            bytes: self.bytes[tag as usize].load(Ordering::Relaxed),
        };
        TrafficReport {
            request: get(MSG_REQ),
            partial: get(MSG_PART),
            coefficients: get(MSG_COEF),
            control: get(MSG_CTRL),
        }
    }
}

/// Outgoing half of a link.
pub trait FrameSink: Send {
    fn send_frame(&mut self, frame: Vec<u8>) -> io::Result<()>;
}

/// A frame received by a shard, tagged with the sending client.
#[derive(Debug)]
pub struct Inbound {
    pub client: usize,
    pub frame: Vec<u8>,
}

pub struct ShardEndpoint {
    pub shard_id: usize,
    pub inbox: Receiver<Inbound>,
    /// Indexed by client id.
    pub replies: Vec<Box<dyn FrameSink>>,
}

pub struct ClientEndpoint {
    pub client_id: usize,
    /// Indexed by shard id.
    pub shards: Vec<Box<dyn FrameSink>>,
    pub inbox: Receiver<Vec<u8>>,
}

struct ToShard {
    tx: Sender<Inbound>,
    client: usize,
    counter: Arc<ByteCounter>,
}

impl FrameSink for ToShard {
    fn send_frame(&mut self, frame: Vec<u8>) -> io::Result<()> {
        self.counter.record(&frame);
        self.tx
            .send(Inbound {
                client: self.client,
                frame,
            })
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "shard is gone"))
    }
}

struct ToClient {
    tx: Sender<Vec<u8>>,
    counter: Arc<ByteCounter>,
}

impl FrameSink for ToClient {
    fn send_frame(&mut self, frame: Vec<u8>) -> io::Result<()> {
        self.counter.record(&frame);
        self.tx
            .send(frame)
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "client is gone"))
    }
}

struct TcpSink {
    stream: TcpStream,
    counter: Arc<ByteCounter>,
}

impl FrameSink for TcpSink {
    fn send_frame(&mut self, frame: Vec<u8>) -> io::Result<()> {
        self.counter.record(&frame);
        self.stream.write_all(&frame)
    }
}

impl Drop for TcpSink {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// Connects `clients` clients to `shards` shards.
pub fn wire(
    kind: TransportKind,
    shards: usize,
    clients: usize,
    counter: Arc<ByteCounter>,
) -> io::Result<(Vec<ShardEndpoint>, Vec<ClientEndpoint>)> {
    match kind {
        TransportKind::InProcess => Ok(wire_in_process(shards, clients, counter)),
        TransportKind::Tcp => wire_tcp(shards, clients, counter),
    }
}

fn wire_in_process(
    shards: usize,
    clients: usize,
    counter: Arc<ByteCounter>,
) -> (Vec<ShardEndpoint>, Vec<ClientEndpoint>) {
    let (shard_tx, shard_rx): (Vec<_>, Vec<_>) = (0..shards).map(|_| channel::<Inbound>()).unzip();
    let (client_tx, client_rx): (Vec<_>, Vec<_>) =
        (0..clients).map(|_| channel::<Vec<u8>>()).unzip();

    let shard_endpoints = shard_rx
        .into_iter()
        .enumerate()
        .map(|(shard_id, inbox)| ShardEndpoint {
            shard_id,
            inbox,
            replies: client_tx
                .iter()
                .map(|tx| {
                    Box::new(ToClient {
                        tx: tx.clone(),
                        counter: counter.clone(),
                    }) as Box<dyn FrameSink>
                })
                .collect(),
        })
        .collect();

    let client_endpoints = client_rx
        .into_iter()
        .enumerate()
        .map(|(client_id, inbox)| ClientEndpoint {
            client_id,
            shards: shard_tx
                .iter()
                .map(|tx| {
                    Box::new(ToShard {
                        tx: tx.clone(),
                        client: client_id,
                        counter: counter.clone(),
                    }) as Box<dyn FrameSink>
                })
                .collect(),
            inbox,
        })
        .collect();
    (shard_endpoints, client_endpoints)
}

fn spawn_reader<F>(mut stream: TcpStream, mut deliver: F)
where
    F: FnMut(Vec<u8>) -> bool + Send + 'static,
{
    thread::spawn(move || {
        while let Ok(Some(frame)) = read_frame(&mut stream) {
            if !deliver(frame) {
                break;
            }
        }
    });
}

fn wire_tcp(
    shards: usize,
    clients: usize,
    counter: Arc<ByteCounter>,
) -> io::Result<(Vec<ShardEndpoint>, Vec<ClientEndpoint>)> {
    let listeners = (0..shards)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<io::Result<Vec<_>>>()?;

    // Clients dial every shard and announce themselves; the listen backlog
    // holds the connections until they are accepted below.
    let mut client_streams: Vec<Vec<TcpStream>> = Vec::with_capacity(clients);
    for c in 0..clients {
        let mut per_shard = Vec::with_capacity(shards);
        for l in &listeners {
            let mut s = TcpStream::connect(l.local_addr()?)?;
            s.set_nodelay(true)?;
            s.write_all(&(c as u32).to_le_bytes())?;
            per_shard.push(s);
        }
        client_streams.push(per_shard);
    }

    let mut shard_endpoints = Vec::with_capacity(shards);
    for (s, listener) in listeners.into_iter().enumerate() {
        let (tx, rx) = channel::<Inbound>();
        let mut replies: Vec<Option<Box<dyn FrameSink>>> = (0..clients).map(|_| None).collect();
        for _ in 0..clients {
            let (mut stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            let mut id = [0u8; 4];
            stream.read_exact(&mut id)?;
            let client = u32::from_le_bytes(id) as usize;
            if client >= clients || replies[client].is_some() {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "bad client id"));
            }
            let tx = tx.clone();
            spawn_reader(stream.try_clone()?, move |frame| {
                tx.send(Inbound { client, frame }).is_ok()
            });
            replies[client] = Some(Box::new(TcpSink {
                stream,
                counter: counter.clone(),
            }));
        }
        shard_endpoints.push(ShardEndpoint {
            shard_id: s,
            inbox: rx,
            replies: replies.into_iter().map(|r| r.expect("all clients accepted")).collect(),
        });
    }

    let mut client_endpoints = Vec::with_capacity(clients);
    for (c, streams) in client_streams.into_iter().enumerate() {
        let (tx, rx) = channel::<Vec<u8>>();
        let mut sinks: Vec<Box<dyn FrameSink>> = Vec::with_capacity(shards);
        for stream in streams {
            let tx = tx.clone();
            spawn_reader(stream.try_clone()?, move |frame| tx.send(frame).is_ok());
            sinks.push(Box::new(TcpSink {
                stream,
                counter: counter.clone(),
            }));
        }
        client_endpoints.push(ClientEndpoint {
            client_id: c,
            shards: sinks,
            inbox: rx,
        });
    }
    Ok((shard_endpoints, client_endpoints))
}
