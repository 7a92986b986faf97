//! TCP client for an out-of-process denoiser speaking the wire protocol.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::wire::{match_results, WireMessage, WireSession, PROTOCOL_VERSION};
use super::{DenoiseBatch, Denoiser, DenoiserBackend, SessionInfo};
use crate::error::{Error, Result};
use crate::image::Image;

/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "TEXSYNC_REMOTE_ENDPOINT";

fn strip_scheme(endpoint: &str) -> &str {
    endpoint.strip_prefix("tcp://").unwrap_or(endpoint)
}

fn io_error(endpoint: &str, what: &str, e: std::io::Error) -> Error {
    match e.kind() {
        ErrorKind::TimedOut | ErrorKind::WouldBlock => Error::Connection(format!("{endpoint}: timed out while {what}")),
        _ => Error::Connection(format!("{endpoint}: {what} failed: {e}")),
    }
}

/// One connection; requests are strictly sequential.
pub struct RemoteDenoiser {
    endpoint: String,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl RemoteDenoiser {
    /// Connects and performs the version handshake.
    pub fn connect(endpoint: &str, timeout: Duration, hello: WireMessage) -> Result<Self> {
        let addr = strip_scheme(endpoint);
        let addrs: Vec<_> = addr
            .to_socket_addrs()
            .map_err(|e| Error::Connection(format!("{endpoint}: cannot resolve: {e}")))?
            .collect();
        let mut last = None;
        let mut stream = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        let stream = stream.ok_or_else(|| match last {
            Some(e) => io_error(endpoint, "connecting", e),
            None => Error::Connection(format!("{endpoint}: no addresses")),
        })?;
        stream
            .set_read_timeout(Some(timeout))
            .and_then(|_| stream.set_write_timeout(Some(timeout)))
            .and_then(|_| stream.set_nodelay(true))
            .map_err(|e| io_error(endpoint, "configuring socket", e))?;
        let writer = stream
            .try_clone()
            .map_err(|e| io_error(endpoint, "cloning socket", e))?;
        let mut client = Self {
            endpoint: endpoint.to_string(),
            reader: BufReader::new(stream),
            writer,
        };
        match client.exchange(&hello)? {
            WireMessage::Hello { protocol_version, .. } if protocol_version == PROTOCOL_VERSION => Ok(client),
            WireMessage::Hello { protocol_version, .. } => Err(Error::Protocol(format!(
                "{endpoint}: server speaks protocol {protocol_version}, expected {PROTOCOL_VERSION}"
            ))),
            WireMessage::Error { message } => Err(Error::Protocol(format!("{endpoint}: handshake refused: {message}"))),
            other => Err(Error::Protocol(format!(
                "{endpoint}: unexpected handshake reply {other:?}"
            ))),
        }
    }

    fn exchange(&mut self, msg: &WireMessage) -> Result<WireMessage> {
        self.writer
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| io_error(&self.endpoint, "sending", e))?;
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| io_error(&self.endpoint, "waiting for a reply", e))?;
        if n == 0 {
            return Err(Error::Connection(format!(
                "{}: connection closed by server",
                self.endpoint
            )));
        }
        WireMessage::from_line(&line)
    }
}

impl Denoiser for RemoteDenoiser {
    fn name(&self) -> &str {
        "remote"
    }

    fn denoise(&mut self, batch: &DenoiseBatch) -> Result<Vec<Image>> {
        match self.exchange(&WireMessage::denoise(batch))? {
            WireMessage::Result { batch: results } => match_results(batch, results),
            WireMessage::Error { message } => Err(Error::Denoise(format!("remote: {message}"))),
            other => Err(Error::Protocol(format!("expected a result message, got {other:?}"))),
        }
    }
}

/// Opens one connection per sampling stage.
#[derive(Clone, Debug)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub timeout: Duration,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
        }
    }
}

impl DenoiserBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn check(&self) -> Result<()> {
        let hello = WireMessage::Hello {
            protocol_version: PROTOCOL_VERSION,
            alpha_bars: Vec::new(),
            session: None,
        };
        RemoteDenoiser::connect(&self.endpoint, self.timeout, hello).map(|_| ())
    }

    fn open(&self, session: &SessionInfo<'_>) -> Result<Box<dyn Denoiser>> {
        let hello = WireMessage::Hello {
            protocol_version: PROTOCOL_VERSION,
            alpha_bars: session.schedule.alpha_bars().to_vec(),
            session: Some(WireSession {
                stage: session.stage.to_string(),
                view_ids: session.view_ids.to_vec(),
            }),
        };
        Ok(Box::new(RemoteDenoiser::connect(&self.endpoint, self.timeout, hello)?))
    }
}
