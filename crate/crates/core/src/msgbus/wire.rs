//! TCP transport: 4-byte big-endian length prefix, UTF-8 JSON body.
//!
//! Message frames are envelopes (`{topic, tick, publisher_id, payload: {schema, ...}}`).
//! Control frames carry an `op` field: `hello`, `subscribe`, `unsubscribe` from the
//! client and `ack` from the server.

use std::io::{BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender, TryRecvError};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::broker::{Broker, Subscription};
use super::payload::Envelope;
use super::{BusClient, BusError};

const MAX_FRAME: usize = 16 << 20;
const ACK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Control {
    Hello { id: String },
    Subscribe { filter: String },
    Unsubscribe { id: u64 },
    Ack { ok: bool, id: Option<u64>, error: Option<String> },
}

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| std::io::Error::other("frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)
}

/// Read one frame; `Ok(None)` on a clean EOF at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn encode_envelope(env: &Envelope) -> Result<Vec<u8>, BusError> {
    serde_json::to_vec(env).map_err(|e| BusError::Codec(e.to_string()))
}

pub fn decode_envelope(body: &[u8]) -> Result<Envelope, BusError> {
    let env: Envelope = serde_json::from_slice(body).map_err(|e| BusError::Codec(e.to_string()))?;
    env.validate()?;
    Ok(env)
}

enum Frame {
    Control(Control),
    Message(Envelope),
}

fn decode_frame(body: &[u8]) -> Result<Frame, BusError> {
    let v: Value = serde_json::from_slice(body).map_err(|e| BusError::Codec(e.to_string()))?;
    if v.get("op").is_some() {
        let c = serde_json::from_value(v).map_err(|e| BusError::Codec(e.to_string()))?;
        Ok(Frame::Control(c))
    } else {
        let env: Envelope = serde_json::from_value(v).map_err(|e| BusError::Codec(e.to_string()))?;
        env.validate()?;
        Ok(Frame::Message(env))
    }
}

fn send_control(stream: &Mutex<BufWriter<TcpStream>>, c: &Control) -> std::io::Result<()> {
    let body = serde_json::to_vec(c).map_err(std::io::Error::other)?;
    let mut w = stream.lock().unwrap_or_else(|p| p.into_inner());
    write_frame(&mut *w, &body)?;
    w.flush()
}

/// A broker reachable over TCP. Each connection becomes one subscriber.
pub struct WireServer {
    addr: SocketAddr,
    broker: Broker,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl WireServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, BusError> {
        Self::with_broker(addr, Broker::new())
    }

    pub fn with_broker(addr: impl ToSocketAddrs, broker: Broker) -> Result<Self, BusError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let broker = broker.clone();
            let stop = stop.clone();
            std::thread::Builder::new()
                .name("wire-accept".into())
                .spawn(move || accept_loop(listener, broker, stop))?
        };
        Ok(WireServer { addr, broker, stop, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.broker.shutdown();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WireServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn accept_loop(listener: TcpListener, broker: Broker, stop: Arc<AtomicBool>) {
    let mut sessions = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let Ok(handle) = stream.try_clone() else { continue };
                let broker = broker.clone();
                if let Ok(h) = std::thread::Builder::new()
                    .name("wire-session".into())
                    .spawn(move || {
                        if let Err(e) = serve(stream, broker) {
                            log::debug!("wire session ended: {e}");
                        }
                    })
                {
                    sessions.push((handle, h));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    }
    for (stream, h) in sessions {
        let _ = stream.shutdown(Shutdown::Both);
        let _ = h.join();
    }
}

fn serve(stream: TcpStream, broker: Broker) -> Result<(), BusError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut reader = stream.try_clone()?;
    let writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));

    let id = match read_frame(&mut reader)?.map(|b| decode_frame(&b)).transpose()? {
        Some(Frame::Control(Control::Hello { id })) => id,
        _ => return Err(BusError::Codec("expected hello frame".into())),
    };
    let rx = match broker.open_queue(&id) {
        Ok(rx) => {
            send_control(&writer, &Control::Ack { ok: true, id: None, error: None })?;
            rx
        }
        Err(e) => {
            send_control(&writer, &Control::Ack { ok: false, id: None, error: Some(e.to_string()) })?;
            return Err(e);
        }
    };

    let pump = {
        let writer = writer.clone();
        std::thread::Builder::new().name(format!("wire-out-{id}")).spawn(move || {
            while let Ok(env) = rx.recv() {
                let mut w = writer.lock().unwrap_or_else(|p| p.into_inner());
                let mut next = Some(env);
                while let Some(env) = next {
                    let Ok(body) = encode_envelope(&env) else { return };
                    if write_frame(&mut *w, &body).is_err() {
                        return;
                    }
                    next = rx.try_recv().ok();
                }
                if w.flush().is_err() {
                    return;
                }
            }
        })?
    };

    let mut subs: Vec<Subscription> = Vec::new();
    let result = loop {
        let body = match read_frame(&mut reader) {
            Ok(Some(b)) => b,
            Ok(None) => break Ok(()),
            Err(e) => break Err(BusError::from(e)),
        };
        match decode_frame(&body) {
            Ok(Frame::Message(env)) => {
                if let Err(e) = broker.publish(env) {
                    log::warn!("dropping publish from {id}: {e}");
                }
            }
            Ok(Frame::Control(Control::Subscribe { filter })) => {
                let ack = match broker.subscribe(&id, &filter) {
                    Ok(s) => {
                        let sid = s.id;
                        subs.push(s);
                        Control::Ack { ok: true, id: Some(sid), error: None }
                    }
                    Err(e) => Control::Ack { ok: false, id: None, error: Some(e.to_string()) },
                };
                send_control(&writer, &ack)?;
            }
            Ok(Frame::Control(Control::Unsubscribe { id: sid })) => {
                let ack = match subs.iter().position(|s| s.id == sid) {
                    Some(i) => {
                        let s = subs.remove(i);
                        match broker.unsubscribe(&s) {
                            Ok(()) => Control::Ack { ok: true, id: Some(sid), error: None },
                            Err(e) => Control::Ack { ok: false, id: Some(sid), error: Some(e.to_string()) },
                        }
                    }
                    None => Control::Ack {
                        ok: false,
                        id: Some(sid),
                        error: Some(BusError::NotFound(format!("subscription {sid}")).to_string()),
                    },
                };
                send_control(&writer, &ack)?;
            }
            Ok(Frame::Control(other)) => log::warn!("unexpected control frame from {id}: {other:?}"),
            Err(e) => log::warn!("bad frame from {id}: {e}"),
        }
    };
    broker.disconnect(&id);
    let _ = stream.shutdown(Shutdown::Both);
    let _ = pump.join();
    result
}

/// Client side of the TCP transport.
pub struct WireClient {
    id: String,
    out: BufWriter<TcpStream>,
    stream: TcpStream,
    msgs: Receiver<Envelope>,
    acks: Receiver<Control>,
    reader: Option<JoinHandle<()>>,
}

impl WireClient {
    pub fn connect(addr: impl ToSocketAddrs, id: &str) -> Result<Self, BusError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let (msg_tx, msgs) = unbounded();
        let (ack_tx, acks) = unbounded();
        let reader = {
            let stream = stream.try_clone()?;
            std::thread::Builder::new()
                .name(format!("wire-in-{id}"))
                .spawn(move || client_reader(stream, msg_tx, ack_tx))?
        };
        let mut c = WireClient {
            id: id.to_string(),
            out: BufWriter::new(stream.try_clone()?),
            stream,
            msgs,
            acks,
            reader: Some(reader),
        };
        c.request(&Control::Hello { id: id.to_string() })?;
        Ok(c)
    }

    fn request(&mut self, c: &Control) -> Result<Option<u64>, BusError> {
        let body = serde_json::to_vec(c).map_err(|e| BusError::Codec(e.to_string()))?;
        write_frame(&mut self.out, &body)?;
        self.out.flush()?;
        match self.acks.recv_timeout(ACK_TIMEOUT) {
            Ok(Control::Ack { ok: true, id, .. }) => Ok(id),
            Ok(Control::Ack { ok: false, error, .. }) => Err(BusError::Remote(error.unwrap_or_default())),
            Ok(other) => Err(BusError::Codec(format!("unexpected reply {other:?}"))),
            Err(RecvTimeoutError::Timeout) => Err(BusError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(BusError::Unavailable),
        }
    }
}

fn client_reader(mut stream: TcpStream, msgs: Sender<Envelope>, acks: Sender<Control>) {
    loop {
        let body = match read_frame(&mut stream) {
            Ok(Some(b)) => b,
            _ => return,
        };
        match decode_frame(&body) {
            Ok(Frame::Message(env)) => {
                if msgs.send(env).is_err() {
                    return;
                }
            }
            Ok(Frame::Control(c)) => {
                if acks.send(c).is_err() {
                    return;
                }
            }
            Err(e) => log::warn!("bad frame from broker: {e}"),
        }
    }
}

impl Drop for WireClient {
    fn drop(&mut self) {
        let _ = self.out.flush();
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

impl BusClient for WireClient {
    fn client_id(&self) -> &str {
        &self.id
    }

    fn subscribe(&mut self, filter: &str) -> Result<Subscription, BusError> {
        super::topic::TopicFilter::new(filter)?;
        let id = self.request(&Control::Subscribe { filter: filter.to_string() })?.unwrap_or_default();
        Ok(Subscription { id, subscriber_id: self.id.clone(), filter: filter.to_string() })
    }

    fn unsubscribe(&mut self, sub: &Subscription) -> Result<(), BusError> {
        match self.request(&Control::Unsubscribe { id: sub.id }) {
            Err(BusError::Remote(msg)) if msg.contains("not found") => {
                Err(BusError::NotFound(format!("subscription {}", sub.id)))
            }
            other => other.map(|_| ()),
        }
    }

    fn publish(&mut self, env: Envelope) -> Result<(), BusError> {
        env.validate()?;
        let body = encode_envelope(&env)?;
        write_frame(&mut self.out, &body)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), BusError> {
        self.out.flush()?;
        Ok(())
    }

    fn try_recv(&mut self) -> Result<Option<Envelope>, BusError> {
        self.out.flush()?;
        match self.msgs.try_recv() {
            Ok(env) => Ok(Some(env)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(BusError::Unavailable),
        }
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, BusError> {
        self.out.flush()?;
        match self.msgs.recv_timeout(timeout) {
            Ok(env) => Ok(Some(env)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(BusError::Unavailable),
        }
    }
}
