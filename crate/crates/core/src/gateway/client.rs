use std::io::ErrorKind;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use super::protocol::{SessionMsg, PROTOCOL_VERSION};
use crate::{Error, Result};

/// Minimal blocking supervisor client, used by tests and headless bots.
pub struct GatewayClient {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
}

fn gw(e: impl std::fmt::Display) -> Error {
    Error::Gateway(e.to_string())
}

impl GatewayClient {
    pub fn connect(url: &str) -> Result<Self> {
        let (ws, _) = tungstenite::connect(url).map_err(gw)?;
        Ok(GatewayClient { ws })
    }

    /// Connects and sends a hello; returns the server's first reply.
    pub fn join(url: &str, token: Option<&str>, human: Option<usize>) -> Result<(Self, SessionMsg)> {
        let mut c = Self::connect(url)?;
        c.send(&SessionMsg::Hello { version: PROTOCOL_VERSION, token: token.map(String::from), human, session: None })?;
        let reply = c.recv()?;
        Ok((c, reply))
    }

    pub fn send(&mut self, msg: &SessionMsg) -> Result<()> {
        self.ws.send(Message::text(msg.to_json())).map_err(gw)
    }

    pub fn send_raw(&mut self, text: &str) -> Result<()> {
        self.ws.send(Message::text(text.to_string())).map_err(gw)
    }

    fn set_timeout(&mut self, d: Option<Duration>) -> Result<()> {
        if let MaybeTlsStream::Plain(s) = self.ws.get_mut() {
            s.set_read_timeout(d)?;
        }
        Ok(())
    }

    pub fn recv(&mut self) -> Result<SessionMsg> {
        self.set_timeout(None)?;
        loop {
            match self.ws.read().map_err(gw)? {
                Message::Text(t) => return SessionMsg::from_json(&t).map_err(Error::from),
                Message::Close(_) => return Err(Error::Gateway("closed by server".into())),
                _ => {}
            }
        }
    }

    /// Next message within `d`, or `None`.
    pub fn recv_timeout(&mut self, d: Duration) -> Result<Option<SessionMsg>> {
        let deadline = Instant::now() + d;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.set_timeout(Some(left))?;
            match self.ws.read() {
                Ok(Message::Text(t)) => return Ok(Some(SessionMsg::from_json(&t)?)),
                Ok(Message::Close(_)) => return Err(Error::Gateway("closed by server".into())),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(gw(e)),
            }
        }
    }

    /// Reads until a message satisfying `pred` arrives, dropping others.
    pub fn recv_until(&mut self, d: Duration, pred: impl Fn(&SessionMsg) -> bool) -> Result<Option<SessionMsg>> {
        let deadline = Instant::now() + d;
        while let Some(m) = self.recv_timeout(deadline.saturating_duration_since(Instant::now()))? {
            if pred(&m) {
                return Ok(Some(m));
            }
        }
        Ok(None)
    }

    pub fn close(mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}
