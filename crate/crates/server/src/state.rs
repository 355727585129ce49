//! Shared server state: robot registry, stores, notifications and the
//! per-message ingest logic.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use serde::Serialize;
use tokio::sync::{broadcast, mpsc};
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};
use uuid::Uuid;

use sentinel_core::messages::{
    decode_clip_upload, Ack, ClipMeta, Command, CommandError, ErrorReason, Mode, StatusReport, FRAME_HEADER_LEN,
};
use sentinel_core::secure::crypto::sha256;
use sentinel_core::secure::{ChannelPolicy, MsgType, Opened, StaticIdentity, TrustedKeys};

use crate::auth::{now_ms, AuthStore};
use crate::fanout::FrameQueue;
use crate::store::{stream_link, ClipEntry, ClipStore, EventKind, EventRecord, EventStore};
use crate::ServerConfig;

const NOTIFICATION_BUFFER: usize = 1024;
const SESSION_QUEUE: usize = 64;
const LATENCY_SAMPLES: usize = 100_000;
const PENDING_COMMANDS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Notification {
    Event {
        event: EventRecord,
    },
    ClipReady {
        robot_id: Uuid,
        event_id: Option<Uuid>,
        clip_id: String,
    },
    CommandResult {
        robot_id: Uuid,
        command_id: Option<Uuid>,
        ok: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        reason: Option<ErrorReason>,
    },
    RobotStatus {
        robot_id: Uuid,
        connected: bool,
        mode: Option<Mode>,
    },
}

/// A notification plus, for command results, the user who issued the command.
#[derive(Clone, Debug)]
pub struct Routed {
    pub user: Option<String>,
    pub note: Notification,
}

#[derive(Clone, Debug, Serialize)]
pub struct RobotSummary {
    pub robot_id: Uuid,
    pub connected: bool,
    pub mode: Option<Mode>,
    pub last_status: Option<StatusReport>,
    pub connected_since_ms: Option<u64>,
    pub stream_link: String,
}

struct SessionSlot {
    generation: u64,
    tx: mpsc::Sender<(MsgType, Vec<u8>)>,
    cancel: CancellationToken,
}

#[derive(Default)]
struct RobotEntry {
    mode: Option<Mode>,
    last_status: Option<StatusReport>,
    connected_since_ms: Option<u64>,
    session: Option<SessionSlot>,
    /// Journal seqs already persisted (events and clips).
    seen: HashSet<u64>,
    subscribers: Vec<Arc<FrameQueue>>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum RouteError {
    UnknownRobot,
    Offline,
    Busy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

/// Time from a complete inbound frame to the end of its processing.
#[derive(Default)]
pub struct IngestMetrics {
    samples: Mutex<VecDeque<u64>>,
}

impl IngestMetrics {
    pub fn record(&self, elapsed: Duration) {
        let mut s = self.samples.lock().unwrap();
        if s.len() == LATENCY_SAMPLES {
            s.pop_front();
        }
        s.push_back(elapsed.as_micros() as u64);
    }

    pub fn reset(&self) {
        self.samples.lock().unwrap().clear();
    }

    pub fn summary(&self) -> LatencySummary {
        let mut v: Vec<u64> = self.samples.lock().unwrap().iter().copied().collect();
        if v.is_empty() {
            return LatencySummary::default();
        }
        v.sort_unstable();
        // nearest-rank percentile
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        LatencySummary {
            count: v.len(),
            p50_us: rank(0.50),
            p99_us: rank(0.99),
            max_us: *v.last().unwrap(),
        }
    }
}

pub struct AppState {
    pub cfg: ServerConfig,
    pub identity: Arc<StaticIdentity>,
    pub allowlist: TrustedKeys,
    pub policy: Arc<ChannelPolicy>,
    pub auth: AuthStore,
    pub metrics: IngestMetrics,
    events: Mutex<EventStore>,
    clips: Mutex<ClipStore>,
    robots: Mutex<HashMap<Uuid, RobotEntry>>,
    notifications: broadcast::Sender<Routed>,
    pending: Mutex<(HashMap<Uuid, String>, VecDeque<Uuid>)>,
    generation: AtomicU64,
}

impl AppState {
    pub fn open(cfg: ServerConfig, identity: Arc<StaticIdentity>, allowlist: TrustedKeys) -> io::Result<Self> {
        let dir = cfg.data_dir.clone();
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        let auth = AuthStore::open(
            dir.as_ref().map(|d| d.join("users.jsonl")).as_deref(),
            Duration::from_secs(cfg.token_ttl_secs),
        )
        .map_err(|e| io::Error::other(e.to_string()))?;
        let events = EventStore::open(dir.as_ref().map(|d| d.join("events.jsonl")).as_deref(), cfg.fsync)?;
        let clips = ClipStore::open(dir.as_ref().map(|d| d.join("clips")).as_deref(), cfg.fsync)?;

        // robots known from earlier runs stay listed, with their dedup state
        let mut robots: HashMap<Uuid, RobotEntry> = HashMap::new();
        for e in events.all() {
            robots.entry(e.robot_id).or_default().seen.insert(e.journal_seq);
        }
        for c in clips.entries() {
            robots.entry(c.robot_id).or_default().seen.insert(c.journal_seq);
        }
        let (notifications, _) = broadcast::channel(NOTIFICATION_BUFFER);
        Ok(Self {
            cfg,
            identity,
            allowlist,
            policy: Arc::new(ChannelPolicy::default()),
            auth,
            metrics: IngestMetrics::default(),
            events: Mutex::new(events),
            clips: Mutex::new(clips),
            robots: Mutex::new(robots),
            notifications,
            pending: Mutex::new((HashMap::new(), VecDeque::new())),
            generation: AtomicU64::new(0),
        })
    }

    pub fn subscribe_notifications(&self) -> broadcast::Receiver<Routed> {
        self.notifications.subscribe()
    }

    fn notify(&self, note: Notification, user: Option<String>) {
        // no receivers is fine
        let _ = self.notifications.send(Routed { user, note });
    }

    /// Registers a fresh session, closing any older one for the same robot.
    pub fn attach_session(
        &self,
        robot_id: Uuid,
        tx: mpsc::Sender<(MsgType, Vec<u8>)>,
        cancel: CancellationToken,
    ) -> u64 {
        let generation = self.generation.fetch_add(1, Ordering::Relaxed) + 1;
        let mode = {
            let mut robots = self.robots.lock().unwrap();
            let entry = robots.entry(robot_id).or_default();
            if let Some(old) = entry.session.take() {
                info!(%robot_id, "newer handshake replaces existing session");
                old.cancel.cancel();
            }
            entry.session = Some(SessionSlot {
                generation,
                tx,
                cancel,
            });
            entry.connected_since_ms = Some(now_ms());
            entry.mode
        };
        self.notify(
            Notification::RobotStatus {
                robot_id,
                connected: true,
                mode,
            },
            None,
        );
        generation
    }

    pub fn detach_session(&self, robot_id: Uuid, generation: u64) {
        let mode = {
            let mut robots = self.robots.lock().unwrap();
            let Some(entry) = robots.get_mut(&robot_id) else { return };
            if entry.session.as_ref().map(|s| s.generation) != Some(generation) {
                return;
            }
            entry.session = None;
            entry.connected_since_ms = None;
            entry.mode
        };
        self.notify(
            Notification::RobotStatus {
                robot_id,
                connected: false,
                mode,
            },
            None,
        );
    }

    pub fn session_queue_capacity() -> usize {
        SESSION_QUEUE
    }

    pub fn knows_robot(&self, robot_id: Uuid) -> bool {
        self.robots.lock().unwrap().contains_key(&robot_id)
    }

    pub fn robots(&self) -> Vec<RobotSummary> {
        let robots = self.robots.lock().unwrap();
        let mut out: Vec<RobotSummary> = robots
            .iter()
            .map(|(id, e)| RobotSummary {
                robot_id: *id,
                connected: e.session.is_some(),
                mode: e.mode,
                last_status: e.last_status.clone(),
                connected_since_ms: e.connected_since_ms,
                stream_link: stream_link(*id),
            })
            .collect();
        out.sort_by_key(|r| r.robot_id);
        out
    }

    /// Hands a command to the robot's live session. Stale steering is never
    /// queued for an offline robot.
    pub fn route_command(&self, user: &str, robot_id: Uuid, cmd: &Command) -> Result<(), RouteError> {
        {
            let robots = self.robots.lock().unwrap();
            let entry = robots.get(&robot_id).ok_or(RouteError::UnknownRobot)?;
            let slot = entry.session.as_ref().ok_or(RouteError::Offline)?;
            slot.tx
                .try_send((MsgType::Command, cmd.to_json()))
                .map_err(|e| match e {
                    mpsc::error::TrySendError::Full(_) => RouteError::Busy,
                    mpsc::error::TrySendError::Closed(_) => RouteError::Offline,
                })?;
        }
        let mut pending = self.pending.lock().unwrap();
        let (owners, order) = &mut *pending;
        if order.len() == PENDING_COMMANDS {
            if let Some(old) = order.pop_front() {
                owners.remove(&old);
            }
        }
        owners.insert(cmd.command_id, user.to_string());
        order.push_back(cmd.command_id);
        Ok(())
    }

    pub fn subscribe_frames(&self, robot_id: Uuid) -> Option<Arc<FrameQueue>> {
        let mut robots = self.robots.lock().unwrap();
        let entry = robots.get_mut(&robot_id)?;
        let queue = Arc::new(FrameQueue::new(self.cfg.stream_queue_frames));
        entry.subscribers.push(queue.clone());
        Some(queue)
    }

    pub fn unsubscribe_frames(&self, robot_id: Uuid, queue: &Arc<FrameQueue>) {
        queue.close();
        if let Some(entry) = self.robots.lock().unwrap().get_mut(&robot_id) {
            entry.subscribers.retain(|q| !Arc::ptr_eq(q, queue));
        }
    }

    pub fn query_events(
        &self,
        kind: Option<EventKind>,
        robot: Option<Uuid>,
        page: usize,
    ) -> (Vec<EventRecord>, usize) {
        self.events
            .lock()
            .unwrap()
            .query(kind, robot, page, self.cfg.events_page_size)
    }

    pub fn all_events(&self) -> Vec<EventRecord> {
        self.events.lock().unwrap().all().to_vec()
    }

    pub fn clip_bytes(&self, clip_id: &str) -> io::Result<Option<Vec<u8>>> {
        self.clips.lock().unwrap().get(clip_id)
    }

    pub fn clip_entries(&self) -> Vec<ClipEntry> {
        self.clips.lock().unwrap().entries().cloned().collect()
    }

    fn already_seen(&self, robot_id: Uuid, seq: u64) -> bool {
        self.robots
            .lock()
            .unwrap()
            .get(&robot_id)
            .is_some_and(|e| e.seen.contains(&seq))
    }

    fn mark_seen(&self, robot_id: Uuid, seq: u64) {
        self.robots.lock().unwrap().entry(robot_id).or_default().seen.insert(seq);
    }

    fn ack(journal_seq: u64) -> (MsgType, Vec<u8>) {
        let body = Ack {
            command_id: None,
            journal_seq: Some(journal_seq),
        };
        (MsgType::Ack, serde_json::to_vec(&body).expect("ack serializes"))
    }

    fn error_reply(detail: String) -> (MsgType, Vec<u8>) {
        let body = CommandError {
            command_id: None,
            reason: ErrorReason::BadCommand,
            detail: Some(detail),
        };
        (MsgType::Error, serde_json::to_vec(&body).expect("error serializes"))
    }

    /// Processes one authenticated message from `robot_id` and returns the
    /// replies to send back. Journaled records are persisted (and announced)
    /// before their ACK is produced; a record that fails to persist is not
    /// acknowledged, so the robot will send it again.
    pub fn ingest(&self, robot_id: Uuid, opened: Opened) -> Vec<(MsgType, Vec<u8>)> {
        match opened.msg_type {
            MsgType::Frame => {
                self.fan_out(robot_id, opened.payload);
                Vec::new()
            }
            MsgType::Status => match serde_json::from_slice::<StatusReport>(&opened.payload) {
                Ok(status) => {
                    let seq = status.journal_seq;
                    let mut robots = self.robots.lock().unwrap();
                    let entry = robots.entry(robot_id).or_default();
                    if entry.last_status.as_ref().is_none_or(|s| s.journal_seq < seq) {
                        entry.mode = Some(status.mode);
                        entry.last_status = Some(status);
                    }
                    vec![Self::ack(seq)]
                }
                Err(e) => vec![Self::error_reply(format!("bad STATUS: {e}"))],
            },
            MsgType::FireAlert | MsgType::MotionEvent => self.ingest_event(robot_id, opened),
            MsgType::ClipUpload => self.ingest_clip(robot_id, &opened.payload),
            MsgType::Ack => {
                if let Ok(ack) = serde_json::from_slice::<Ack>(&opened.payload) {
                    self.command_result(robot_id, ack.command_id, None);
                }
                Vec::new()
            }
            MsgType::Error => {
                match serde_json::from_slice::<CommandError>(&opened.payload) {
                    Ok(err) => self.command_result(robot_id, err.command_id, Some(err.reason)),
                    Err(_) => warn!(%robot_id, "unreadable ERROR from robot"),
                }
                Vec::new()
            }
            other => {
                debug!(%robot_id, msg_type = ?other, "unexpected message from robot");
                Vec::new()
            }
        }
    }

    fn fan_out(&self, robot_id: Uuid, payload: Vec<u8>) {
        if payload.len() < FRAME_HEADER_LEN {
            return;
        }
        let subscribers: Vec<Arc<FrameQueue>> = match self.robots.lock().unwrap().get(&robot_id) {
            Some(e) if !e.subscribers.is_empty() => e.subscribers.clone(),
            _ => return,
        };
        let frame = Bytes::from(payload);
        for q in subscribers {
            q.push(frame.clone());
        }
    }

    fn command_result(&self, robot_id: Uuid, command_id: Option<Uuid>, error: Option<ErrorReason>) {
        let user = command_id.and_then(|id| {
            let mut pending = self.pending.lock().unwrap();
            pending.0.remove(&id)
        });
        self.notify(
            Notification::CommandResult {
                robot_id,
                command_id,
                ok: error.is_none(),
                reason: error,
            },
            user,
        );
    }

    fn ingest_event(&self, robot_id: Uuid, opened: Opened) -> Vec<(MsgType, Vec<u8>)> {
        let details: serde_json::Value = match serde_json::from_slice(&opened.payload) {
            Ok(v) => v,
            Err(e) => return vec![Self::error_reply(format!("bad alert: {e}"))],
        };
        let Some(seq) = details.get("journal_seq").and_then(|v| v.as_u64()) else {
            return vec![Self::error_reply("alert without journal_seq".into())];
        };
        if self.already_seen(robot_id, seq) {
            return vec![Self::ack(seq)];
        }
        let kind = if opened.msg_type == MsgType::FireAlert {
            EventKind::Fire
        } else {
            EventKind::Motion
        };
        let event = EventRecord {
            event_id: Uuid::new_v4(),
            robot_id,
            kind,
            timestamp_ms: now_ms(),
            journal_seq: seq,
            details,
            clip_id: None,
            stream_link: stream_link(robot_id),
        };
        if let Err(e) = self.events.lock().unwrap().append(event.clone()) {
            warn!(%robot_id, error = %e, "could not persist event; leaving unacknowledged");
            return Vec::new();
        }
        self.mark_seen(robot_id, seq);
        info!(%robot_id, ?kind, journal_seq = seq, "event recorded");
        self.notify(Notification::Event { event }, None);
        vec![Self::ack(seq)]
    }

    fn ingest_clip(&self, robot_id: Uuid, payload: &[u8]) -> Vec<(MsgType, Vec<u8>)> {
        let (meta, container): (ClipMeta, &[u8]) = match decode_clip_upload(payload) {
            Ok(v) => v,
            Err(e) => return vec![Self::error_reply(format!("bad CLIP_UPLOAD: {e}"))],
        };
        let seq = meta.journal_seq;
        if self.already_seen(robot_id, seq) {
            return vec![Self::ack(seq)];
        }
        let clip_id = hex::encode(sha256(container));
        if clip_id != meta.sha256 {
            warn!(%robot_id, declared = %meta.sha256, actual = %clip_id, "clip digest mismatch, discarded");
            return vec![Self::ack(seq), Self::error_reply("clip digest mismatch".into())];
        }
        let event_id = self
            .events
            .lock()
            .unwrap()
            .find(robot_id, meta.event_journal_seq)
            .filter(|e| e.kind == EventKind::Motion)
            .map(|e| e.event_id);
        let entry = ClipEntry {
            clip_id: clip_id.clone(),
            robot_id,
            event_id,
            journal_seq: seq,
            frame_count: meta.frame_count,
            first_frame_index: meta.first_frame_index,
            size: container.len(),
        };
        if let Err(e) = self.clips.lock().unwrap().put(container, entry) {
            warn!(%robot_id, error = %e, "could not store clip; leaving unacknowledged");
            return Vec::new();
        }
        if let Some(event_id) = event_id {
            if let Err(e) = self.events.lock().unwrap().link_clip(event_id, &clip_id) {
                warn!(%robot_id, error = %e, "could not persist clip link");
                return Vec::new();
            }
        }
        self.mark_seen(robot_id, seq);
        info!(%robot_id, %clip_id, "clip stored");
        self.notify(
            Notification::ClipReady {
                robot_id,
                event_id,
                clip_id,
            },
            None,
        );
        vec![Self::ack(seq)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sentinel_core::messages::encode_clip_upload;
    use sentinel_core::secure::SecurityClass;

    fn state() -> AppState {
        let identity = Arc::new(StaticIdentity::generate(None).unwrap());
        AppState::open(ServerConfig::default(), identity, TrustedKeys::new()).unwrap()
    }

    fn opened(msg_type: MsgType, payload: Vec<u8>) -> Opened {
        Opened {
            msg_type,
            class: SecurityClass::Signed,
            sender_id: Uuid::nil(),
            seq: 1,
            payload,
        }
    }

    fn acked(replies: &[(MsgType, Vec<u8>)]) -> Vec<u64> {
        replies
            .iter()
            .filter(|r| r.0 == MsgType::Ack)
            .map(|r| serde_json::from_slice::<Ack>(&r.1).unwrap().journal_seq.unwrap())
            .collect()
    }

    #[test]
    fn redelivered_alert_is_acked_but_stored_once() {
        let s = state();
        let robot = Uuid::new_v4();
        let mut notes = s.subscribe_notifications();
        let body = serde_json::json!({ "journal_seq": 7, "tick": 3, "smoke_ppm": 500.0 });
        for _ in 0..3 {
            let replies = s.ingest(robot, opened(MsgType::FireAlert, body.to_string().into_bytes()));
            assert_eq!(acked(&replies), [7]);
        }
        assert_eq!(s.all_events().len(), 1);
        assert!(matches!(notes.try_recv().unwrap().note, Notification::Event { .. }));
        assert!(notes.try_recv().is_err());
        // same seq from another robot is a different record
        s.ingest(Uuid::new_v4(), opened(MsgType::FireAlert, body.to_string().into_bytes()));
        assert_eq!(s.all_events().len(), 2);
    }

    #[test]
    fn clip_with_wrong_digest_is_refused() {
        let s = state();
        let robot = Uuid::new_v4();
        let meta = ClipMeta {
            journal_seq: 4,
            event_journal_seq: 3,
            sha256: "0".repeat(64),
            frame_count: 1,
            first_frame_index: 0,
        };
        let replies = s.ingest(robot, opened(MsgType::ClipUpload, encode_clip_upload(&meta, b"SVC1 junk")));
        assert_eq!(acked(&replies), [4]);
        assert!(replies.iter().any(|r| r.0 == MsgType::Error));
        assert!(s.clip_entries().is_empty());
    }

    #[test]
    fn frames_without_viewers_are_dropped() {
        let s = state();
        let robot = Uuid::new_v4();
        let frame = vec![0u8; FRAME_HEADER_LEN + 4];
        assert!(s.ingest(robot, opened(MsgType::Frame, frame.clone())).is_empty());
        assert!(!s.knows_robot(robot));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let m = IngestMetrics::default();
        for us in 1..=100u64 {
            m.record(Duration::from_micros(us));
        }
        let s = m.summary();
        assert_eq!((s.count, s.p50_us, s.p99_us, s.max_us), (100, 50, 99, 100));
        m.reset();
        assert_eq!(m.summary().count, 0);
    }
}
