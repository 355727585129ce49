//! Runs the robot agent against a server.
//!
//! Two tasks cooperate. The link task connects, performs the handshake and
//! pumps bytes; on failure it retries with exponential backoff forever. The
//! agent loop owns the world, the [`AgentState`] and the sending half of the
//! current session; it ticks at a fixed rate, applies inbound commands and
//! pushes journaled records out oldest-first whenever a link is up.

pub mod connector;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use sentinel_core::agent::journal::DEFAULT_CAPACITY;
use sentinel_core::agent::{AgentConfig, AgentSnapshot, AgentState, BackupJournal, Effect, JournalError};
use sentinel_core::messages::{Ack, Command};
use sentinel_core::secure::framing::read_frame;
use sentinel_core::secure::{robot_handshake, ChannelPolicy, MsgType, Opened, Sealer, StaticIdentity, VerifyingKey};
use sentinel_core::world::{RobotPose, WorldGrid};

pub use connector::{Connector, MemoryNetwork, TcpConnector};

const OUTBOUND_QUEUE: usize = 1024;
const INBOUND_QUEUE: usize = 256;
const MAX_CONSECUTIVE_FAULTS: u32 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub server_addr: String,
    pub tick_rate_hz: f64,
    /// Journal file; `None` keeps the backlog in memory only.
    pub journal_path: Option<PathBuf>,
    pub journal_capacity_bytes: usize,
    /// Sync every journal append to disk.
    pub journal_durable: bool,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    pub handshake_timeout_ms: u64,
    /// Stop ticking after this many ticks, then wait for the journal to drain.
    pub max_ticks: Option<u64>,
    pub drain_timeout_ms: u64,
    pub agent: AgentConfig,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            server_addr: "127.0.0.1:7700".into(),
            tick_rate_hz: 10.0,
            journal_path: None,
            journal_capacity_bytes: DEFAULT_CAPACITY,
            journal_durable: true,
            backoff_initial_ms: 500,
            backoff_max_ms: 30_000,
            handshake_timeout_ms: 5_000,
            max_ticks: None,
            drain_timeout_ms: 10_000,
            agent: AgentConfig::default(),
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<(), RobotError> {
        let bad = |m: &str| Err(RobotError::Config(m.to_string()));
        if !(self.tick_rate_hz > 0.0 && self.tick_rate_hz <= 1000.0) {
            return bad("tick_rate_hz must be in (0, 1000]");
        }
        if self.backoff_initial_ms == 0 || self.backoff_initial_ms > self.backoff_max_ms {
            return bad("backoff_initial_ms must be positive and at most backoff_max_ms");
        }
        if self.handshake_timeout_ms == 0 {
            return bad("handshake_timeout_ms must be positive");
        }
        if self.journal_capacity_bytes == 0 {
            return bad("journal_capacity_bytes must be positive");
        }
        self.agent.validate().map_err(RobotError::Config)
    }

    fn tick_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.tick_rate_hz)
    }
}

#[derive(Debug, Error)]
pub enum RobotError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

/// Reconnect delays: doubling from `initial`, capped at `max`.
#[derive(Clone, Debug)]
pub struct Backoff {
    initial: Duration,
    max: Duration,
    next: Duration,
}

impl Backoff {
    pub fn new(initial: Duration, max: Duration) -> Self {
        Self {
            initial,
            max,
            next: initial,
        }
    }

    pub fn next_delay(&mut self) -> Duration {
        let delay = self.next;
        self.next = (self.next * 2).min(self.max);
        delay
    }

    pub fn reset(&mut self) {
        self.next = self.initial;
    }
}

/// Everything the robot is, apart from how it is tuned.
pub struct RobotSetup {
    pub world: WorldGrid,
    pub pose: RobotPose,
    pub identity: Arc<StaticIdentity>,
    pub server_key: VerifyingKey,
}

enum LinkEvent {
    Up {
        generation: u64,
        sealer: Sealer,
        out: mpsc::Sender<Vec<u8>>,
    },
    Down {
        generation: u64,
    },
}

struct Inbound {
    generation: u64,
    opened: Opened,
}

struct Link {
    generation: u64,
    sealer: Sealer,
    out: mpsc::Sender<Vec<u8>>,
    /// Highest journal seq already handed to this link.
    cursor: u64,
}

impl Link {
    fn send(&mut self, payload: &[u8], msg_type: MsgType) -> bool {
        let Ok(permit) = self.out.try_reserve() else {
            return false;
        };
        match self.sealer.seal(payload, msg_type) {
            Ok(bytes) => {
                permit.send(bytes);
                true
            }
            Err(e) => {
                warn!(error = %e, ?msg_type, "seal failed");
                false
            }
        }
    }
}

struct LinkParams {
    identity: Arc<StaticIdentity>,
    server_key: VerifyingKey,
    policy: Arc<ChannelPolicy>,
    handshake_timeout: Duration,
    backoff: Backoff,
}

async fn link_task<C: Connector>(
    connector: C,
    mut params: LinkParams,
    link_tx: mpsc::Sender<LinkEvent>,
    in_tx: mpsc::Sender<Inbound>,
    cancel: CancellationToken,
) {
    let mut generation = 0;
    loop {
        let attempt = async {
            let mut stream = connector.connect().await.map_err(|e| e.to_string())?;
            let session = robot_handshake(
                &mut stream,
                params.identity.clone(),
                &params.server_key,
                params.policy.clone(),
                params.handshake_timeout,
            )
            .await
            .map_err(|e| e.to_string())?;
            Ok::<_, String>((stream, session))
        };
        let result = tokio::select! {
            r = attempt => r,
            _ = cancel.cancelled() => return,
        };
        match result {
            Ok((stream, session)) => {
                params.backoff.reset();
                generation += 1;
                info!(server = %session.peer_id, generation, "session established");
                let (sealer, mut opener) = session.split();
                let (mut rd, mut wr) = tokio::io::split(stream);
                let (out_tx, mut out_rx) = mpsc::channel::<Vec<u8>>(OUTBOUND_QUEUE);
                if link_tx
                    .send(LinkEvent::Up {
                        generation,
                        sealer,
                        out: out_tx,
                    })
                    .await
                    .is_err()
                {
                    return;
                }
                let writer = async {
                    while let Some(bytes) = out_rx.recv().await {
                        wr.write_all(&bytes).await?;
                        if out_rx.is_empty() {
                            wr.flush().await?;
                        }
                    }
                    Ok::<_, std::io::Error>(())
                };
                let in_tx = in_tx.clone();
                let reader = async {
                    let mut faults = 0;
                    loop {
                        match read_frame(&mut rd).await {
                            Ok(Some(frame)) => match opener.open(&frame) {
                                Ok(opened) => {
                                    faults = 0;
                                    if in_tx.send(Inbound { generation, opened }).await.is_err() {
                                        return;
                                    }
                                }
                                Err(e) => {
                                    faults += 1;
                                    warn!(code = e.code(), error = %e, "rejected inbound message");
                                    if faults >= MAX_CONSECUTIVE_FAULTS {
                                        warn!("too many consecutive faults, dropping session");
                                        return;
                                    }
                                }
                            },
                            Ok(None) => return,
                            Err(e) => {
                                debug!(error = %e, "read failed");
                                return;
                            }
                        }
                    }
                };
                tokio::select! {
                    r = writer => if let Err(e) = r { debug!(error = %e, "write failed") },
                    _ = reader => {}
                    _ = cancel.cancelled() => return,
                }
                info!(generation, "session lost");
                if link_tx.send(LinkEvent::Down { generation }).await.is_err() {
                    return;
                }
            }
            Err(e) => debug!(error = %e, "connect attempt failed"),
        }
        let delay = params.backoff.next_delay();
        tokio::select! {
            _ = tokio::time::sleep(delay) => {}
            _ = cancel.cancelled() => return,
        }
    }
}

fn open_journal(cfg: &RobotConfig) -> Result<BackupJournal, RobotError> {
    Ok(match &cfg.journal_path {
        Some(path) => BackupJournal::open(path, cfg.journal_capacity_bytes, cfg.journal_durable)?,
        // Without a file the seq counter would restart at 1 and the server
        // would take fresh alerts for duplicates, so start from the clock.
        None => BackupJournal::in_memory_from(cfg.journal_capacity_bytes, clock_seq_base()),
    })
}

fn clock_seq_base() -> u64 {
    let ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default()
        .as_millis() as u64;
    ms.saturating_mul(1000)
}

fn dispatch(effects: Vec<Effect>, link: &mut Option<Link>) {
    for effect in effects {
        match effect {
            Effect::Recorded { .. } => {}
            Effect::Reply { msg_type, payload } => {
                if let Some(link) = link.as_mut() {
                    if !link.send(&payload, msg_type) {
                        warn!(?msg_type, "outbound queue full, reply dropped");
                    }
                }
            }
            Effect::Frame(bytes) => {
                if let Some(link) = link.as_mut() {
                    link.send(&bytes, MsgType::Frame);
                }
            }
            Effect::JournalFailed(e) => warn!(error = %e, "record not journaled"),
        }
    }
}

/// Sends journaled records not yet handed to the current link.
fn flush_journal(agent: &AgentState, link: &mut Option<Link>) {
    let Some(link) = link.as_mut() else { return };
    let pending: Vec<_> = agent.journal().after(link.cursor).collect();
    for record in pending {
        if !link.send(&record.payload, record.kind.msg_type()) {
            break;
        }
        link.cursor = record.seq;
    }
}

/// Runs until cancelled or, with `max_ticks`, until the backlog has drained.
pub async fn run_agent<C: Connector>(
    setup: RobotSetup,
    connector: C,
    cfg: RobotConfig,
    cancel: CancellationToken,
    snapshots: Option<watch::Sender<AgentSnapshot>>,
) -> Result<AgentSnapshot, RobotError> {
    cfg.validate()?;
    let journal = open_journal(&cfg)?;
    if !journal.is_empty() {
        info!(records = journal.len(), "reloaded journal backlog");
    }
    let RobotSetup {
        mut world,
        pose,
        identity,
        server_key,
    } = setup;
    let mut agent = AgentState::new(pose, journal, cfg.agent.clone());

    let (link_tx, mut link_rx) = mpsc::channel(8);
    let (in_tx, mut in_rx) = mpsc::channel(INBOUND_QUEUE);
    let link_cancel = cancel.child_token();
    let params = LinkParams {
        identity,
        server_key,
        policy: Arc::new(ChannelPolicy::default()),
        handshake_timeout: Duration::from_millis(cfg.handshake_timeout_ms),
        backoff: Backoff::new(
            Duration::from_millis(cfg.backoff_initial_ms),
            Duration::from_millis(cfg.backoff_max_ms),
        ),
    };
    let link_handle = tokio::spawn(link_task(connector, params, link_tx, in_tx, link_cancel.clone()));

    let mut interval = tokio::time::interval(cfg.tick_period());
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut link: Option<Link> = None;
    let mut ticks = 0u64;
    let mut drain_deadline: Option<Instant> = None;
    if cfg.max_ticks == Some(0) {
        drain_deadline = Some(Instant::now() + Duration::from_millis(cfg.drain_timeout_ms));
    }

    loop {
        let ticking = drain_deadline.is_none();
        let mut acked = false;
        tokio::select! {
            biased;
            _ = cancel.cancelled() => break,
            Some(event) = link_rx.recv() => match event {
                LinkEvent::Up { generation, sealer, out } => {
                    link = Some(Link { generation, sealer, out, cursor: 0 });
                    let effects = agent.set_connected(true, &world);
                    dispatch(effects, &mut link);
                }
                LinkEvent::Down { generation } => {
                    if link.as_ref().is_some_and(|l| l.generation == generation) {
                        link = None;
                        agent.set_connected(false, &world);
                    }
                }
            },
            Some(Inbound { generation, opened }) = in_rx.recv() => {
                if link.as_ref().is_some_and(|l| l.generation == generation) {
                    acked = handle_inbound(&mut agent, &world, opened, &mut link);
                }
            }
            _ = interval.tick(), if ticking => {
                world.step();
                let effects = agent.tick(&world);
                dispatch(effects, &mut link);
                ticks += 1;
                if cfg.max_ticks.is_some_and(|max| ticks >= max) {
                    drain_deadline = Some(Instant::now() + Duration::from_millis(cfg.drain_timeout_ms));
                }
            }
            _ = tokio::time::sleep_until(drain_deadline.unwrap_or_else(Instant::now)), if !ticking => {
                warn!(backlog = agent.journal().len(), "drain timeout reached");
                break;
            }
        }
        if acked {
            if let Err(e) = agent.journal_mut().compact() {
                warn!(error = %e, "journal compaction failed");
            }
        }
        flush_journal(&agent, &mut link);
        if let Some(tx) = &snapshots {
            tx.send_replace(agent.snapshot());
        }
        if !ticking && link.is_some() && agent.journal().is_empty() {
            info!(ticks, "backlog drained");
            break;
        }
    }

    link_cancel.cancel();
    let _ = link_handle.await;
    let snapshot = agent.snapshot();
    if let Some(tx) = &snapshots {
        tx.send_replace(snapshot.clone());
    }
    Ok(snapshot)
}

/// Applies one authenticated inbound message. Returns whether a journal
/// record was acknowledged.
fn handle_inbound(agent: &mut AgentState, world: &WorldGrid, opened: Opened, link: &mut Option<Link>) -> bool {
    match opened.msg_type {
        MsgType::Command => {
            let effects = match Command::parse(&opened.payload) {
                Ok(cmd) => {
                    debug!(kind = ?cmd.kind, id = %cmd.command_id, "command");
                    agent.handle_command(&cmd, world)
                }
                Err(e) => vec![AgentState::reject_malformed(e.to_string())],
            };
            dispatch(effects, link);
            false
        }
        MsgType::Ack => match serde_json::from_slice::<Ack>(&opened.payload) {
            Ok(Ack {
                journal_seq: Some(seq),
                ..
            }) => agent.acknowledge(seq),
            Ok(_) => false,
            Err(e) => {
                warn!(error = %e, "unreadable ACK");
                false
            }
        },
        MsgType::Error => {
            warn!(payload = %String::from_utf8_lossy(&opened.payload), "server reported an error");
            false
        }
        other => {
            debug!(msg_type = ?other, "ignoring unexpected message");
            false
        }
    }
}

/// A running agent task.
pub struct RobotHandle {
    pub snapshot: watch::Receiver<AgentSnapshot>,
    pub cancel: CancellationToken,
    pub join: JoinHandle<Result<AgentSnapshot, RobotError>>,
}

impl RobotHandle {
    pub async fn stop(self) -> Result<AgentSnapshot, RobotError> {
        self.cancel.cancel();
        self.join.await.expect("agent task panicked")
    }
}

pub fn spawn_agent<C: Connector>(setup: RobotSetup, connector: C, cfg: RobotConfig) -> RobotHandle {
    let initial = AgentSnapshot {
        mode: sentinel_core::messages::Mode::Idle,
        pose: setup.pose,
        connected: false,
        tick: 0,
        backlog: 0,
        stats: Default::default(),
    };
    let (tx, rx) = watch::channel(initial);
    let cancel = CancellationToken::new();
    let join = tokio::spawn(run_agent(setup, connector, cfg, cancel.clone(), Some(tx)));
    RobotHandle {
        snapshot: rx,
        cancel,
        join,
    }
}
