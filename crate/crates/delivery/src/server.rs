use std::collections::HashMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use splatstream_core::SplatCloud;
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::{HeaderValue, StatusCode};
use tungstenite::{Message, WebSocket};

use crate::control::Control;
use crate::error::Result;
use crate::publisher::{ClientId, Outgoing, Publisher};
use crate::roi::Roi;
use crate::update::{unix_ns, ModelState};

pub const SUBPROTOCOL: &str = "splatstream.v1";

const POLL: Duration = Duration::from_millis(2);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

struct Shared {
    publisher: Mutex<Publisher>,
    outboxes: Mutex<HashMap<ClientId, Sender<Arc<Vec<u8>>>>>,
    next_client: AtomicU64,
    shutdown: AtomicBool,
    sent: AtomicU64,
}

impl Shared {
    /// Encode and queue updates. Called with the publisher locked so each
    /// client's queue sees updates in decision order.
    fn route(&self, publisher: &mut Publisher, out: Vec<Outgoing>) {
        let mut dead = vec![];
        {
            let boxes = self.outboxes.lock().unwrap();
            for o in out {
                let bytes = Arc::new(o.update.encode());
                match boxes.get(&o.client) {
                    Some(tx) if tx.send(bytes).is_ok() => {
                        self.sent.fetch_add(1, Ordering::Relaxed);
                    }
                    _ => dead.push(o.client),
                }
            }
        }
        for c in dead {
            publisher.remove(c);
        }
    }
}

/// WebSocket fan-out server: one thread per session plus an accept loop.
pub struct DeliveryServer {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    accept: Option<JoinHandle<()>>,
}

impl DeliveryServer {
    pub fn bind(addr: impl ToSocketAddrs, cell_size: f32) -> Result<Self> {
        let publisher = Publisher::new(cell_size)?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            publisher: Mutex::new(publisher),
            outboxes: Mutex::new(HashMap::new()),
            next_client: AtomicU64::new(1),
            shutdown: AtomicBool::new(false),
            sent: AtomicU64::new(0),
        });
        let sh = shared.clone();
        let accept = std::thread::Builder::new()
            .name("delivery-accept".into())
            .spawn(move || accept_loop(listener, sh))?;
        log::info!("delivery server listening on {local_addr}");
        Ok(Self {
            shared,
            local_addr,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Publish a copy of `cloud`; returns the number of messages queued.
    pub fn publish(&self, cloud: &SplatCloud) -> Result<usize> {
        self.publish_state(ModelState::from_cloud(cloud))
    }

    pub fn publish_state(&self, state: ModelState) -> Result<usize> {
        let mut p = self.shared.publisher.lock().unwrap();
        let out = p.publish_state(state, unix_ns())?;
        let n = out.len();
        self.shared.route(&mut p, out);
        Ok(n)
    }

    pub fn latest_revision(&self) -> Option<u64> {
        self.shared.publisher.lock().unwrap().latest_revision()
    }

    pub fn client_count(&self) -> usize {
        self.shared.publisher.lock().unwrap().clients().count()
    }

    pub fn messages_sent(&self) -> u64 {
        self.shared.sent.load(Ordering::Relaxed)
    }

    pub fn shutdown(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for DeliveryServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut sessions: Vec<JoinHandle<()>> = vec![];
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let sh = shared.clone();
                let spawned = std::thread::Builder::new()
                    .name(format!("delivery-{peer}"))
                    .spawn(move || {
                        if let Err(e) = session(stream, &sh) {
                            log::debug!("session {peer} ended: {e}");
                        }
                    });
                match spawned {
                    Ok(h) => sessions.push(h),
                    Err(e) => log::warn!("cannot spawn session for {peer}: {e}"),
                }
                sessions.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
    for h in sessions {
        let _ = h.join();
    }
}

fn check_subprotocol(req: &Request, mut resp: Response) -> std::result::Result<Response, ErrorResponse> {
    let offered = req
        .headers()
        .get_all("Sec-WebSocket-Protocol")
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|p| p.trim() == SUBPROTOCOL);
    if !offered {
        let mut e = ErrorResponse::new(Some(format!("subprotocol {SUBPROTOCOL} required")));
        *e.status_mut() = StatusCode::BAD_REQUEST;
        return Err(e);
    }
    resp.headers_mut()
        .insert("Sec-WebSocket-Protocol", HeaderValue::from_static(SUBPROTOCOL));
    Ok(resp)
}

fn session(stream: TcpStream, shared: &Shared) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let mut ws = tungstenite::accept_hdr(stream, check_subprotocol)
        .map_err(|e| std::io::Error::new(ErrorKind::InvalidData, e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let id = shared.next_client.fetch_add(1, Ordering::Relaxed);
    let (tx, rx) = mpsc::channel();
    shared.outboxes.lock().unwrap().insert(id, tx);
    let r = serve(&mut ws, id, &rx, shared);
    shared.outboxes.lock().unwrap().remove(&id);
    shared.publisher.lock().unwrap().remove(id);
    let _ = ws.close(None);
    let _ = ws.flush();
    r
}

fn serve(ws: &mut WebSocket<TcpStream>, id: ClientId, rx: &Receiver<Arc<Vec<u8>>>, shared: &Shared) -> Result<()> {
    loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        while let Ok(bytes) = rx.try_recv() {
            ws.send(Message::Binary(bytes.as_ref().clone()))?;
        }
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                continue
            }
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        match msg {
            Message::Text(t) => match Control::parse(&t) {
                Ok(c) => {
                    let mut p = shared.publisher.lock().unwrap();
                    let out = match c {
                        Control::Subscribe { mode, roi } => {
                            let cells = roi.map(|b| Roi::from_box(&b, p.cell_size()));
                            Ok(p.subscribe(id, mode, cells))
                        }
                        Control::Ack { rev } => p.ack(id, rev),
                        Control::Resync => p.resync(id),
                    };
                    match out {
                        Ok(out) => shared.route(&mut p, out),
                        Err(e) => {
                            drop(p);
                            ws.send(Message::Text(format!("error={e}")))?;
                        }
                    }
                }
                Err(e) => ws.send(Message::Text(format!("error={e}")))?,
            },
            Message::Close(_) => return Ok(()),
            Message::Binary(_) => ws.send(Message::Text("error=binary frames are server to client only".into()))?,
            _ => {}
        }
    }
}
