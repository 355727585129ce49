//! Control server: accepts authenticated robot sessions, persists alerts and
//! clips, and serves the operator API.

pub mod api;
pub mod auth;
pub mod fanout;
pub mod session;
pub mod state;
pub mod store;

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;
use tracing::{info, warn};

use sentinel_core::secure::handshake::HANDSHAKE_TIMEOUT;
use sentinel_core::secure::{StaticIdentity, TrustedKeys};

pub use state::{AppState, LatencySummary, Notification, RobotSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub http_addr: String,
    pub robot_addr: String,
    /// Users, events and clips live here; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Built operator UI, served for any path outside `/api`.
    pub static_dir: Option<PathBuf>,
    pub token_ttl_secs: u64,
    pub handshake_timeout_ms: u64,
    pub max_consecutive_faults: u32,
    pub stream_queue_frames: usize,
    pub events_page_size: usize,
    /// fsync event and clip writes before acknowledging them.
    pub fsync: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            http_addr: "0.0.0.0:8080".into(),
            robot_addr: "0.0.0.0:7700".into(),
            data_dir: None,
            static_dir: None,
            token_ttl_secs: 24 * 3600,
            handshake_timeout_ms: HANDSHAKE_TIMEOUT.as_millis() as u64,
            max_consecutive_faults: 10,
            stream_queue_frames: fanout::DEFAULT_QUEUE_FRAMES,
            events_page_size: 50,
            fsync: true,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ServerError> {
        let bad = |m: &str| Err(ServerError::Config(m.to_string()));
        if self.token_ttl_secs == 0 {
            return bad("token_ttl_secs must be positive");
        }
        if self.handshake_timeout_ms == 0 {
            return bad("handshake_timeout_ms must be positive");
        }
        if self.max_consecutive_faults == 0 {
            return bad("max_consecutive_faults must be positive");
        }
        if self.stream_queue_frames == 0 {
            return bad("stream_queue_frames must be positive");
        }
        if self.events_page_size == 0 {
            return bad("events_page_size must be positive");
        }
        for (name, addr) in [("http_addr", &self.http_addr), ("robot_addr", &self.robot_addr)] {
            if addr.parse::<SocketAddr>().is_err() {
                return Err(ServerError::Config(format!("{name} {addr:?} is not host:port")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid server config: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("cannot open data directory: {0}")]
    Storage(#[from] io::Error),
}

pub struct ServerHandle {
    pub http_addr: SocketAddr,
    pub robot_addr: SocketAddr,
    pub state: Arc<AppState>,
    cancel: CancellationToken,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.http_addr)
    }

    /// Runs a robot session over an already-connected stream, as if it had
    /// arrived on the robot listener.
    pub fn accept_stream<S>(&self, stream: S)
    where
        S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
    {
        tokio::spawn(session::handle_robot_connection(
            self.state.clone(),
            stream,
            self.cancel.child_token(),
        ));
    }

    /// Accepts every stream from `streams`, e.g. an in-memory network.
    pub fn accept_from<S>(&mut self, mut streams: mpsc::UnboundedReceiver<S>)
    where
        S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
    {
        let state = self.state.clone();
        let cancel = self.cancel.clone();
        self.tasks.push(tokio::spawn(async move {
            loop {
                let stream = tokio::select! {
                    _ = cancel.cancelled() => return,
                    s = streams.recv() => match s { Some(s) => s, None => return },
                };
                tokio::spawn(session::handle_robot_connection(state.clone(), stream, cancel.child_token()));
            }
        }));
    }

    pub fn cancel_token(&self) -> CancellationToken {
        self.cancel.clone()
    }

    pub async fn shutdown(self) {
        self.cancel.cancel();
        for t in self.tasks {
            let _ = t.await;
        }
    }

    /// Resolves once the server has been asked to stop and its listeners closed.
    pub async fn wait(self) {
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

async fn bind(addr: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Binds both listeners and starts serving.
pub async fn start(
    cfg: ServerConfig,
    identity: Arc<StaticIdentity>,
    allowlist: TrustedKeys,
) -> Result<ServerHandle, ServerError> {
    cfg.validate()?;
    let http = bind(&cfg.http_addr).await?;
    let robots = bind(&cfg.robot_addr).await?;
    let http_addr = http.local_addr()?;
    let robot_addr = robots.local_addr()?;
    let state = Arc::new(AppState::open(cfg, identity, allowlist)?);
    let cancel = CancellationToken::new();

    let app = api::router(state.clone());
    let http_task = {
        let cancel = cancel.clone();
        tokio::spawn(async move {
            if let Err(e) = axum::serve(http, app)
                .with_graceful_shutdown(cancel.cancelled_owned())
                .await
            {
                warn!(error = %e, "http server stopped");
            }
        })
    };
    let robot_task = {
        let cancel = cancel.clone();
        let state = state.clone();
        tokio::spawn(async move {
            loop {
                let (stream, peer) = tokio::select! {
                    _ = cancel.cancelled() => return,
                    r = robots.accept() => match r {
                        Ok(v) => v,
                        Err(e) => {
                            warn!(error = %e, "robot accept failed");
                            continue;
                        }
                    },
                };
                let _ = stream.set_nodelay(true);
                tracing::debug!(%peer, "robot connection");
                tokio::spawn(session::handle_robot_connection(state.clone(), stream, cancel.child_token()));
            }
        })
    };
    info!(%http_addr, %robot_addr, robots_allowed = state.allowlist.len(), "server listening");
    Ok(ServerHandle {
        http_addr,
        robot_addr,
        state,
        cancel,
        tasks: vec![http_task, robot_task],
    })
}
