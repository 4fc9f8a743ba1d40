use std::io::ErrorKind;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use tungstenite::client::IntoClientRequest;
use tungstenite::http::HeaderValue;
use tungstenite::{Message, WebSocket};

use crate::client_model::ClientModel;
use crate::control::{Control, Mode};
use crate::error::{Error, Result};
use crate::roi::RoiBox;
use crate::server::SUBPROTOCOL;
use crate::update::{unix_ns, ModelUpdate};

/// An update as the client applied it.
#[derive(Debug, Clone)]
pub struct Applied {
    pub update: ModelUpdate,
    /// Publish-to-applied delay, measured on one host clock.
    pub latency: Duration,
}

/// Blocking subscriber: receives, applies and acks updates.
pub struct DeliveryClient {
    ws: WebSocket<TcpStream>,
    model: ClientModel,
}

impl DeliveryClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let url = format!("ws://{}/", stream.peer_addr()?);
        let mut req = url.into_client_request()?;
        req.headers_mut()
            .insert("Sec-WebSocket-Protocol", HeaderValue::from_static(SUBPROTOCOL));
        let (ws, resp) =
            tungstenite::client(req, stream).map_err(|e| Error::Protocol(format!("handshake failed: {e}")))?;
        let agreed = resp.headers().get("Sec-WebSocket-Protocol").and_then(|v| v.to_str().ok());
        if agreed != Some(SUBPROTOCOL) {
            return Err(Error::Protocol(format!("server did not agree to {SUBPROTOCOL}")));
        }
        Ok(Self {
            ws,
            model: ClientModel::new(),
        })
    }

    pub fn model(&self) -> &ClientModel {
        &self.model
    }

    pub fn send(&mut self, c: &Control) -> Result<()> {
        self.ws.send(Message::Text(c.to_string()))?;
        Ok(())
    }

    pub fn subscribe(&mut self, mode: Mode, roi: Option<RoiBox>) -> Result<()> {
        self.send(&Control::Subscribe { mode, roi })
    }

    /// Next update from the server, or None once `timeout` passes.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<ModelUpdate>> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.ws.get_ref().set_read_timeout(Some(left))?;
            match self.ws.read() {
                Ok(Message::Binary(b)) => return ModelUpdate::decode(&b).map(Some),
                Ok(Message::Text(t)) => {
                    return Err(Error::Protocol(t.strip_prefix("error=").unwrap_or(&t).to_string()));
                }
                Ok(Message::Close(_)) => return Err(Error::Protocol("server closed the connection".into())),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Receive one update, apply it and ack it. A resync-required error
    /// is answered with a resync request before being returned.
    pub fn step(&mut self, timeout: Duration) -> Result<Option<Applied>> {
        let Some(update) = self.recv(timeout)? else {
            return Ok(None);
        };
        if let Err(e) = self.model.apply(&update) {
            if matches!(e, Error::ResyncRequired { .. }) {
                self.send(&Control::Resync)?;
            }
            return Err(e);
        }
        let latency = Duration::from_nanos(unix_ns().saturating_sub(update.published_ns));
        self.send(&Control::Ack { rev: update.revision_to })?;
        Ok(Some(Applied { update, latency }))
    }

    /// Apply updates until one reaches at least `revision`.
    pub fn wait_for(&mut self, revision: u64, timeout: Duration) -> Result<Vec<Applied>> {
        let deadline = Instant::now() + timeout;
        let mut got = vec![];
        while self.model.revision() < revision {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.step(left)? {
                Some(a) => got.push(a),
                None => return Err(Error::Timeout(format!("revision {revision}"))),
            }
        }
        Ok(got)
    }

    pub fn close(mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}
