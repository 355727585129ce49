//! How the robot reaches the server.

use std::future::Future;
use std::io;
use std::sync::{Arc, Mutex};

use tokio::io::{AsyncRead, AsyncWrite, DuplexStream};
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio_util::sync::CancellationToken;

pub trait Connector: Send + Sync + 'static {
    type Stream: AsyncRead + AsyncWrite + Unpin + Send + 'static;

    fn connect(&self) -> impl Future<Output = io::Result<Self::Stream>> + Send;
}

#[derive(Clone, Debug)]
pub struct TcpConnector {
    addr: String,
}

impl TcpConnector {
    pub fn new(addr: impl Into<String>) -> Self {
        Self { addr: addr.into() }
    }
}

impl Connector for TcpConnector {
    type Stream = TcpStream;

    async fn connect(&self) -> io::Result<TcpStream> {
        let stream = TcpStream::connect(&self.addr).await?;
        stream.set_nodelay(true)?;
        Ok(stream)
    }
}

const PIPE_CAPACITY: usize = 256 * 1024;

struct LinkState {
    up: bool,
    kill: CancellationToken,
}

/// In-process network with a switch: while it is down, connects are
/// refused and every open connection is cut at both ends.
///
/// Each connection is two duplex pipes joined by a relay task, so cutting
/// the link means dropping the relay and both peers see EOF.
#[derive(Clone)]
pub struct MemoryNetwork {
    accept_tx: mpsc::UnboundedSender<DuplexStream>,
    state: Arc<Mutex<LinkState>>,
}

impl MemoryNetwork {
    /// Returns the network and the stream of server-side connection ends.
    pub fn new() -> (Self, mpsc::UnboundedReceiver<DuplexStream>) {
        let (accept_tx, accept_rx) = mpsc::unbounded_channel();
        let net = Self {
            accept_tx,
            state: Arc::new(Mutex::new(LinkState {
                up: true,
                kill: CancellationToken::new(),
            })),
        };
        (net, accept_rx)
    }

    pub fn set_up(&self, up: bool) {
        let mut state = self.state.lock().unwrap();
        if state.up && !up {
            state.kill.cancel();
            state.kill = CancellationToken::new();
        }
        state.up = up;
    }

    pub fn is_up(&self) -> bool {
        self.state.lock().unwrap().up
    }
}

impl Connector for MemoryNetwork {
    type Stream = DuplexStream;

    async fn connect(&self) -> io::Result<DuplexStream> {
        let kill = {
            let state = self.state.lock().unwrap();
            if !state.up {
                return Err(io::Error::new(io::ErrorKind::ConnectionRefused, "link down"));
            }
            state.kill.clone()
        };
        let (robot_end, mut relay_a) = tokio::io::duplex(PIPE_CAPACITY);
        let (mut relay_b, server_end) = tokio::io::duplex(PIPE_CAPACITY);
        self.accept_tx
            .send(server_end)
            .map_err(|_| io::Error::new(io::ErrorKind::ConnectionRefused, "no listener"))?;
        tokio::spawn(async move {
            tokio::select! {
                _ = tokio::io::copy_bidirectional(&mut relay_a, &mut relay_b) => {}
                _ = kill.cancelled() => {}
            }
        });
        Ok(robot_end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    #[tokio::test]
    async fn relays_and_cuts() {
        let (net, mut accept) = MemoryNetwork::new();
        let mut robot = net.connect().await.unwrap();
        let mut server = accept.recv().await.unwrap();
        robot.write_all(b"ping").await.unwrap();
        let mut buf = [0u8; 4];
        server.read_exact(&mut buf).await.unwrap();
        assert_eq!(&buf, b"ping");

        net.set_up(false);
        assert_eq!(server.read(&mut buf).await.unwrap(), 0);
        assert_eq!(robot.read(&mut buf).await.unwrap(), 0);
        assert_eq!(net.connect().await.unwrap_err().kind(), io::ErrorKind::ConnectionRefused);
        net.set_up(true);
        assert!(net.connect().await.is_ok());
    }
}
