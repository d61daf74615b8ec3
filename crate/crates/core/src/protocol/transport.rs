use std::fmt;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
#[cfg(unix)]
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use super::codec::{decode_packet, encode_into};
use super::packet::Packet;
use super::registry::Registry;
use super::ProtocolError;

/// Environment variable consulted for the default endpoint.
pub const ENDPOINT_ENV: &str = "COSIM_ENDPOINT";

/// Where the world server listens.
///
/// Textual forms: `unix:/path/to.sock`, `tcp:127.0.0.1:7070`, or a bare path
/// (treated as a unix socket).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Unix(PathBuf),
    Tcp(String),
}

impl Endpoint {
    pub fn from_env() -> Option<Endpoint> {
        std::env::var(ENDPOINT_ENV).ok().and_then(|s| s.parse().ok())
    }
}

impl FromStr for Endpoint {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("unix:") {
            Ok(Endpoint::Unix(PathBuf::from(path)))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            Ok(Endpoint::Tcp(addr.to_owned()))
        } else if s.is_empty() {
            Err(ProtocolError::BadEndpoint(s.to_owned()))
        } else {
            Ok(Endpoint::Unix(PathBuf::from(s)))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Unix(p) => write!(f, "unix:{}", p.display()),
            Endpoint::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

pub(crate) enum Stream {
    #[cfg(unix)]
    Unix(UnixStream),
    Tcp(TcpStream),
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            #[cfg(unix)]
            Stream::Unix(s) => s.read(buf),
            Stream::Tcp(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            #[cfg(unix)]
            Stream::Unix(s) => s.write(buf),
            Stream::Tcp(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            #[cfg(unix)]
            Stream::Unix(s) => s.flush(),
            Stream::Tcp(s) => s.flush(),
        }
    }
}

pub(crate) enum Listener {
    #[cfg(unix)]
    Unix(UnixListener, PathBuf),
    Tcp(TcpListener),
}

impl Listener {
    pub(crate) fn bind(endpoint: &Endpoint) -> Result<Listener, ProtocolError> {
        let bind_err = |e: io::Error| ProtocolError::Bind(endpoint.to_string(), e);
        match endpoint {
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                if path.exists() {
                    std::fs::remove_file(path).map_err(bind_err)?;
                }
                Ok(Listener::Unix(UnixListener::bind(path).map_err(bind_err)?, path.clone()))
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => Err(ProtocolError::BadEndpoint(endpoint.to_string())),
            Endpoint::Tcp(addr) => Ok(Listener::Tcp(TcpListener::bind(addr).map_err(bind_err)?)),
        }
    }

    /// The endpoint clients should dial; resolves `tcp:…:0` to the bound port.
    pub(crate) fn local_endpoint(&self) -> Endpoint {
        match self {
            #[cfg(unix)]
            Listener::Unix(_, path) => Endpoint::Unix(path.clone()),
            Listener::Tcp(l) => Endpoint::Tcp(
                l.local_addr()
                    .map(|a| a.to_string())
                    .unwrap_or_else(|_| "127.0.0.1:0".into()),
            ),
        }
    }

    pub(crate) fn accept(&self) -> io::Result<Stream> {
        match self {
            #[cfg(unix)]
            Listener::Unix(l, _) => l.accept().map(|(s, _)| Stream::Unix(s)),
            Listener::Tcp(l) => l.accept().map(|(s, _)| {
                let _ = s.set_nodelay(true);
                Stream::Tcp(s)
            }),
        }
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        #[cfg(unix)]
        if let Listener::Unix(_, path) = self {
            let _ = std::fs::remove_file(path);
        }
    }
}

/// Anything that can carry a request to the world and bring back its response.
pub trait Link: Send {
    fn transact(&mut self, request: &Packet) -> Result<Packet, ProtocolError>;
}

/// A framed, bidirectional packet stream over a local socket.
pub struct Connection {
    stream: Stream,
    registry: Arc<Registry>,
    rx: Vec<u8>,
    tx: Vec<u8>,
}

impl Connection {
    pub(crate) fn new(stream: Stream, registry: Arc<Registry>) -> Self {
        Connection {
            stream,
            registry,
            rx: Vec::with_capacity(1 << 16),
            tx: Vec::with_capacity(1 << 16),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn send(&mut self, packet: &Packet) -> Result<(), ProtocolError> {
        self.tx.clear();
        encode_into(packet, &self.registry, &mut self.tx)?;
        self.stream.write_all(&self.tx)?;
        self.stream.flush()?;
        Ok(())
    }

    /// Blocks until a full packet arrives. End of stream surfaces as
    /// [`ProtocolError::Disconnected`].
    pub fn recv(&mut self) -> Result<Packet, ProtocolError> {
        let mut chunk = [0u8; 1 << 16];
        loop {
            if let Some((packet, used)) = decode_packet(&self.rx, &self.registry)? {
                self.rx.drain(..used);
                return Ok(packet);
            }
            let n = self.stream.read(&mut chunk)?;
            if n == 0 {
                return Err(ProtocolError::Disconnected);
            }
            self.rx.extend_from_slice(&chunk[..n]);
        }
    }
}

impl Link for Connection {
    fn transact(&mut self, request: &Packet) -> Result<Packet, ProtocolError> {
        self.send(request)?;
        let response = self.recv()?;
        if response.opcode != request.opcode {
            return Err(ProtocolError::Mismatch {
                sent: request.opcode.clone(),
                got: response.opcode,
            });
        }
        Ok(response)
    }
}

/// Connects to a server that must already be listening.
pub fn connect(endpoint: &Endpoint, registry: Arc<Registry>) -> Result<Connection, ProtocolError> {
    let connect_err = |e: io::Error| ProtocolError::Connect(endpoint.to_string(), e);
    let stream = match endpoint {
        #[cfg(unix)]
        Endpoint::Unix(path) => Stream::Unix(UnixStream::connect(path).map_err(connect_err)?),
        #[cfg(not(unix))]
        Endpoint::Unix(_) => return Err(ProtocolError::BadEndpoint(endpoint.to_string())),
        Endpoint::Tcp(addr) => {
            let s = TcpStream::connect(addr).map_err(connect_err)?;
            let _ = s.set_nodelay(true);
            Stream::Tcp(s)
        }
    };
    Ok(Connection::new(stream, registry))
}

/// Retries [`connect`] until the server comes up or `attempts` run out.
pub fn connect_with_retry(
    endpoint: &Endpoint,
    registry: Arc<Registry>,
    attempts: u32,
    delay: std::time::Duration,
) -> Result<Connection, ProtocolError> {
    let mut last = None;
    for _ in 0..attempts.max(1) {
        match connect(endpoint, registry.clone()) {
            Ok(c) => return Ok(c),
            Err(e) => last = Some(e),
        }
        std::thread::sleep(delay);
    }
    Err(last.unwrap_or(ProtocolError::Disconnected))
}
