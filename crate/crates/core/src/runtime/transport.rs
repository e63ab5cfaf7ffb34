//! Byte transports carrying whole frames between the two parties.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::frame::MAX_FRAME;
use crate::error::{Error, Result};

/// Default receive timeout, overridable with `ARIANN_TIMEOUT_MS`.
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

pub fn timeout_from_env() -> Duration {
    let ms = std::env::var("ARIANN_TIMEOUT_MS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_TIMEOUT_MS);
    Duration::from_millis(ms)
}

pub trait Transport: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Vec<u8>>;
}

/// In-process transport over channels, for two threads.
pub struct LocalTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Duration,
}

impl LocalTransport {
    pub fn pair(timeout: Duration) -> (LocalTransport, LocalTransport) {
        let (tx0, rx1) = channel();
        let (tx1, rx0) = channel();
        (
            LocalTransport {
                tx: tx0,
                rx: rx0,
                timeout,
            },
            LocalTransport {
                tx: tx1,
                rx: rx1,
                timeout,
            },
        )
    }
}

impl Transport for LocalTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| Error::SessionClosed)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::SessionClosed),
        }
    }
}

/// Length-prefixed frames over a TCP stream.
pub struct TcpTransport {
    stream: TcpStream,
    timeout: Duration,
}

impl TcpTransport {
    pub fn new(stream: TcpStream, timeout: Duration) -> Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        Ok(Self { stream, timeout })
    }

    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            match TcpStream::connect(&addr) {
                Ok(s) => return Self::new(s, timeout),
                Err(e)
                    if std::time::Instant::now() < deadline
                        && e.kind() == ErrorKind::ConnectionRefused =>
                {
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(Error::Transport(format!("connect failed: {e}"))),
            }
        }
    }

    pub fn accept(listener: &TcpListener, timeout: Duration) -> Result<Self> {
        let (stream, _) = listener.accept()?;
        Self::new(stream, timeout)
    }

    fn map_io(&self, e: std::io::Error) -> Error {
        match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => {
                Error::Timeout(self.timeout.as_millis() as u64)
            }
            ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::BrokenPipe => {
                Error::SessionClosed
            }
            _ => Error::Io(e),
        }
    }
}

impl Transport for TcpTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.stream.write_all(frame).map_err(|e| self.map_io(e))
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let mut len = [0u8; 4];
        self.stream
            .read_exact(&mut len)
            .map_err(|e| self.map_io(e))?;
        let n = u32::from_le_bytes(len) as usize;
        if n == 0 || n > MAX_FRAME {
            return Err(Error::Transport(format!("bad frame length {n}")));
        }
        let mut frame = vec![0u8; n + 4];
        frame[..4].copy_from_slice(&len);
        self.stream
            .read_exact(&mut frame[4..])
            .map_err(|e| self.map_io(e))?;
        Ok(frame)
    }
}
