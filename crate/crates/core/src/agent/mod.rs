//! The robot's operating state machine.
//!
//! [`AgentState`] is driven by two inputs, operator commands and world
//! ticks, and answers each with a list of [`Effect`]s for the transport
//! layer. Anything that must survive a disconnect is written to the
//! [`BackupJournal`] before the effect is returned.

pub mod fire;
pub mod journal;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

pub use fire::{fire_check, FireConfig};
pub use journal::{BackupJournal, JournalError, JournalRecord, RecordKind};

use crate::messages::{
    encode_clip_upload, encode_frame_message, Ack, ClipMeta, Command, CommandError, CommandKind, ErrorReason,
    FireAlert, Mode, MotionAlert, StatusReport,
};
use crate::secure::crypto::sha256;
use crate::secure::MsgType;
use crate::vision::{Clip, DetectorConfig, MotionDetector, MotionEvent};
use crate::world::{apply_move, read_sensors, render_frame, MoveOutcome, RobotPose, SensorReading, WorldGrid};

const DEDUP_CAPACITY: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub fire: FireConfig,
    pub detector: DetectorConfig,
    /// Periodic STATUS cadence while connected; 0 disables it.
    pub status_interval_ticks: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            fire: FireConfig::default(),
            detector: DetectorConfig::default(),
            status_interval_ticks: 10,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.fire.validate().map_err(str::to_string)?;
        self.detector.validate().map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    /// A record now in the journal, to be sent whenever the link is up.
    Recorded { seq: u64, kind: RecordKind },
    /// `ACK` or `ERROR` answering a command. Sent only if connected.
    Reply { msg_type: MsgType, payload: Vec<u8> },
    /// Live camera frame, already in wire form. Dropped when offline.
    Frame(Vec<u8>),
    /// A record could not be journaled.
    JournalFailed(String),
}

/// Counters used by operators and end-to-end checks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStats {
    pub motion_events: u64,
    pub fire_alerts: u64,
    /// SHA-256 (hex) of every clip produced, in order.
    pub clips: Vec<String>,
    pub frames_sent: u64,
    pub commands: u64,
    pub journal_failures: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub mode: Mode,
    pub pose: RobotPose,
    pub connected: bool,
    pub tick: u64,
    pub backlog: usize,
    pub stats: AgentStats,
}

#[derive(Debug)]
pub struct AgentState {
    mode: Mode,
    pose: RobotPose,
    connected: bool,
    detector: Option<MotionDetector>,
    journal: BackupJournal,
    fire_debounce: u32,
    tick: u64,
    cfg: AgentConfig,
    /// Journal seq of the motion event whose clip is being collected.
    clip_event: u64,
    replies: VecDeque<(Uuid, Effect)>,
    stats: AgentStats,
}

impl AgentState {
    pub fn new(pose: RobotPose, journal: BackupJournal, cfg: AgentConfig) -> Self {
        Self {
            mode: Mode::Idle,
            pose,
            connected: false,
            detector: None,
            journal,
            fire_debounce: 0,
            tick: 0,
            cfg,
            clip_event: 0,
            replies: VecDeque::new(),
            stats: AgentStats::default(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn pose(&self) -> RobotPose {
        self.pose
    }

    pub fn connected(&self) -> bool {
        self.connected
    }

    pub fn has_detector(&self) -> bool {
        self.detector.is_some()
    }

    pub fn fire_debounce(&self) -> u32 {
        self.fire_debounce
    }

    pub fn journal(&self) -> &BackupJournal {
        &self.journal
    }

    pub fn journal_mut(&mut self) -> &mut BackupJournal {
        &mut self.journal
    }

    pub fn stats(&self) -> &AgentStats {
        &self.stats
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            mode: self.mode,
            pose: self.pose,
            connected: self.connected,
            tick: self.tick,
            backlog: self.journal.len(),
            stats: self.stats.clone(),
        }
    }

    fn record(&mut self, kind: RecordKind, payload: impl FnOnce(u64) -> Vec<u8>, effects: &mut Vec<Effect>) -> bool {
        match self.journal.append_with(kind, payload) {
            Ok(seq) => {
                effects.push(Effect::Recorded { seq, kind });
                true
            }
            Err(e) => {
                self.stats.journal_failures += 1;
                effects.push(Effect::JournalFailed(e.to_string()));
                false
            }
        }
    }

    fn record_status(&mut self, sensors: SensorReading, effects: &mut Vec<Effect>) {
        let (mode, pose, tick, backlog) = (self.mode, self.pose, self.tick, self.journal.len());
        self.record(
            RecordKind::Status,
            |journal_seq| {
                serde_json::to_vec(&StatusReport {
                    journal_seq,
                    mode,
                    pose,
                    sensors,
                    tick,
                    backlog,
                })
                .expect("status serializes")
            },
            effects,
        );
    }

    fn record_clip(&mut self, clip: Clip, effects: &mut Vec<Effect>) {
        let container = clip.to_container();
        let digest = hex::encode(sha256(&container));
        let event_journal_seq = self.clip_event;
        let frame_count = clip.frames.len() as u32;
        let first_frame_index = clip.first_frame_index();
        let sha = digest.clone();
        let stored = self.record(
            RecordKind::ClipUpload,
            |journal_seq| {
                let meta = ClipMeta {
                    journal_seq,
                    event_journal_seq,
                    sha256: sha,
                    frame_count,
                    first_frame_index,
                };
                encode_clip_upload(&meta, &container)
            },
            effects,
        );
        if stored {
            self.stats.clips.push(digest);
        }
    }

    fn record_motion(&mut self, event: MotionEvent, effects: &mut Vec<Effect>) {
        self.stats.motion_events += 1;
        let (tick, pose) = (self.tick, self.pose);
        let next = self.journal.next_seq();
        let stored = self.record(
            RecordKind::MotionEvent,
            |journal_seq| {
                serde_json::to_vec(&MotionAlert {
                    journal_seq,
                    tick,
                    frame_index: event.frame_index,
                    changed_fraction: event.changed_fraction,
                    bbox: event.bbox,
                    pose,
                })
                .expect("motion alert serializes")
            },
            effects,
        );
        self.clip_event = if stored { next } else { 0 };
    }

    fn reply(command_id: Option<Uuid>, outcome: Result<(), ErrorReason>) -> Effect {
        match outcome {
            Ok(()) => Effect::Reply {
                msg_type: MsgType::Ack,
                payload: serde_json::to_vec(&Ack {
                    command_id,
                    journal_seq: None,
                })
                .expect("ack serializes"),
            },
            Err(reason) => Effect::Reply {
                msg_type: MsgType::Error,
                payload: serde_json::to_vec(&CommandError {
                    command_id,
                    reason,
                    detail: None,
                })
                .expect("error serializes"),
            },
        }
    }

    /// Reply for a command body that could not even be parsed.
    pub fn reject_malformed(detail: String) -> Effect {
        Effect::Reply {
            msg_type: MsgType::Error,
            payload: serde_json::to_vec(&CommandError {
                command_id: None,
                reason: ErrorReason::BadCommand,
                detail: Some(detail),
            })
            .expect("error serializes"),
        }
    }

    /// Applies one operator command. Refusals come back as `ERROR` replies;
    /// a repeated `command_id` gets its original reply again and nothing else.
    pub fn handle_command(&mut self, cmd: &Command, world: &WorldGrid) -> Vec<Effect> {
        if let Some((_, reply)) = self.replies.iter().find(|(id, _)| *id == cmd.command_id) {
            return vec![reply.clone()];
        }
        self.stats.commands += 1;
        let mut effects = Vec::new();
        let before = (self.mode, self.pose);
        let mut wants_status = false;

        let outcome = if cmd.validate().is_err() {
            Err(ErrorReason::BadCommand)
        } else {
            match (cmd.kind, self.mode) {
                (CommandKind::Move, _) => {
                    let dir = cmd.direction.expect("validated");
                    match apply_move(world, &self.pose, dir) {
                        MoveOutcome::Moved(pose) => {
                            self.pose = pose;
                            // the old background no longer matches the view
                            if let Some(det) = self.detector.as_mut() {
                                det.reset_background();
                            }
                            Ok(())
                        }
                        MoveOutcome::Blocked => Err(ErrorReason::Blocked),
                    }
                }
                (CommandKind::StartMotionDetection, Mode::Idle) => {
                    self.mode = Mode::MotionDetection;
                    self.detector = Some(MotionDetector::new(self.cfg.detector.clone()));
                    Ok(())
                }
                (CommandKind::StartStreaming, Mode::Idle) => {
                    self.mode = Mode::Streaming;
                    Ok(())
                }
                (CommandKind::StartMotionDetection, Mode::MotionDetection)
                | (CommandKind::StartStreaming, Mode::Streaming) => Ok(()),
                (CommandKind::StartMotionDetection, Mode::Streaming)
                | (CommandKind::StartStreaming, Mode::MotionDetection) => Err(ErrorReason::ModeConflict),
                (CommandKind::Stop, Mode::MotionDetection) => {
                    if let Some(clip) = self.detector.take().and_then(|mut d| d.finish()) {
                        self.record_clip(clip, &mut effects);
                    }
                    self.mode = Mode::Idle;
                    Ok(())
                }
                (CommandKind::Stop, Mode::Streaming) => {
                    self.mode = Mode::Idle;
                    Ok(())
                }
                (CommandKind::Stop, Mode::Idle) => Ok(()),
                (CommandKind::StatusRequest, _) => {
                    wants_status = true;
                    Ok(())
                }
            }
        };

        let reply = Self::reply(Some(cmd.command_id), outcome);
        effects.insert(0, reply.clone());
        if wants_status || (self.mode, self.pose) != before {
            let sensors = read_sensors(world, &self.pose);
            self.record_status(sensors, &mut effects);
        }
        if self.replies.len() == DEDUP_CAPACITY {
            self.replies.pop_front();
        }
        self.replies.push_back((cmd.command_id, reply));
        effects
    }

    /// One control period against the current world state.
    pub fn tick(&mut self, world: &WorldGrid) -> Vec<Effect> {
        let mut effects = Vec::new();
        self.tick = world.tick();
        let reading = read_sensors(world, &self.pose);

        let (counter, alert) = fire_check(&reading, &self.cfg.fire, self.fire_debounce);
        self.fire_debounce = counter;
        if alert {
            self.stats.fire_alerts += 1;
            let (tick, pose) = (self.tick, self.pose);
            self.record(
                RecordKind::FireAlert,
                |journal_seq| {
                    serde_json::to_vec(&FireAlert {
                        journal_seq,
                        tick,
                        smoke_ppm: reading.smoke_ppm,
                        temperature_c: reading.temperature_c,
                        pose,
                    })
                    .expect("fire alert serializes")
                },
                &mut effects,
            );
        }

        if self.mode != Mode::Idle {
            let frame = render_frame(world, &self.pose);
            if self.connected {
                self.stats.frames_sent += 1;
                effects.push(Effect::Frame(encode_frame_message(&frame)));
            }
            if let Some(detector) = self.detector.as_mut() {
                let out = detector.process(frame).expect("rendered frames share one size");
                if let Some(event) = out.event {
                    self.record_motion(event, &mut effects);
                }
                if let Some(clip) = out.clip {
                    self.record_clip(clip, &mut effects);
                }
            }
        }

        let interval = self.cfg.status_interval_ticks;
        if self.connected && interval > 0 && self.tick % interval == 0 {
            self.record_status(reading, &mut effects);
        }
        effects
    }

    /// Link state change. Coming up reports a fresh STATUS.
    pub fn set_connected(&mut self, connected: bool, world: &WorldGrid) -> Vec<Effect> {
        let was = self.connected;
        self.connected = connected;
        let mut effects = Vec::new();
        if connected && !was {
            let sensors = read_sensors(world, &self.pose);
            self.record_status(sensors, &mut effects);
        }
        effects
    }

    /// Server acknowledged a journaled record.
    pub fn acknowledge(&mut self, journal_seq: u64) -> bool {
        self.journal.acknowledge(journal_seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::decode_clip_upload;
    use crate::world::{Fire, Heading, MoveDir, Scenario};

    fn open_world() -> (WorldGrid, RobotPose) {
        Scenario::empty(16, 16, RobotPose { x: 8, y: 8, heading: Heading::N }).build().unwrap()
    }

    fn agent(pose: RobotPose) -> AgentState {
        AgentState::new(pose, BackupJournal::in_memory(journal::DEFAULT_CAPACITY), AgentConfig::default())
    }

    fn reply_of(effects: &[Effect]) -> (MsgType, serde_json::Value) {
        match &effects[0] {
            Effect::Reply { msg_type, payload } => (*msg_type, serde_json::from_slice(payload).unwrap()),
            other => panic!("expected reply first, got {other:?}"),
        }
    }

    fn cmd(kind: CommandKind) -> Command {
        let direction = (kind == CommandKind::Move).then_some(MoveDir::Forward);
        Command::new(kind, direction)
    }

    fn put_in(a: &mut AgentState, mode: Mode, world: &WorldGrid) {
        let start = match mode {
            Mode::Idle => return,
            Mode::MotionDetection => CommandKind::StartMotionDetection,
            Mode::Streaming => CommandKind::StartStreaming,
        };
        a.handle_command(&cmd(start), world);
        assert_eq!(a.mode(), mode);
    }

    #[test]
    fn transition_table() {
        use CommandKind::*;
        use Mode::*;
        let expected = [
            (Idle, Move, Idle, None),
            (Idle, StartMotionDetection, MotionDetection, None),
            (Idle, StartStreaming, Streaming, None),
            (Idle, Stop, Idle, None),
            (Idle, StatusRequest, Idle, None),
            (MotionDetection, Move, MotionDetection, None),
            (MotionDetection, StartMotionDetection, MotionDetection, None),
            (MotionDetection, StartStreaming, MotionDetection, Some(ErrorReason::ModeConflict)),
            (MotionDetection, Stop, Idle, None),
            (MotionDetection, StatusRequest, MotionDetection, None),
            (Streaming, Move, Streaming, None),
            (Streaming, StartMotionDetection, Streaming, Some(ErrorReason::ModeConflict)),
            (Streaming, StartStreaming, Streaming, None),
            (Streaming, Stop, Idle, None),
            (Streaming, StatusRequest, Streaming, None),
        ];
        let (world, pose) = open_world();
        for (from, kind, to, err) in expected {
            let mut a = agent(pose);
            put_in(&mut a, from, &world);
            let effects = a.handle_command(&cmd(kind), &world);
            assert_eq!(a.mode(), to, "{from:?} + {kind:?}");
            assert_eq!(a.has_detector(), to == MotionDetection);
            let (t, body) = reply_of(&effects);
            match err {
                None => assert_eq!(t, MsgType::Ack, "{from:?} + {kind:?}"),
                Some(reason) => {
                    assert_eq!(t, MsgType::Error);
                    assert_eq!(body["reason"], serde_json::to_value(reason).unwrap());
                }
            }
            if kind == Move {
                assert_eq!(a.pose().y, 7);
            }
            if kind == StatusRequest {
                assert!(effects.iter().any(|e| matches!(e, Effect::Recorded { kind: RecordKind::Status, .. })));
            }
        }
    }

    #[test]
    fn blocked_move_is_refused_and_pose_kept() {
        let (world, _) = open_world();
        let pose = RobotPose { x: 0, y: 0, heading: Heading::N };
        let mut a = agent(pose);
        let effects = a.handle_command(&cmd(CommandKind::Move), &world);
        let (t, body) = reply_of(&effects);
        assert_eq!((t, body["reason"].as_str()), (MsgType::Error, Some("Blocked")));
        assert_eq!(a.pose(), pose);
        assert_eq!(effects.len(), 1);
    }

    #[test]
    fn duplicate_command_id_replays_reply_only() {
        let (world, pose) = open_world();
        let mut a = agent(pose);
        let c = Command::movement(MoveDir::Forward);
        let first = a.handle_command(&c, &world);
        let again = a.handle_command(&c, &world);
        assert_eq!(a.pose().y, 7);
        assert_eq!(again, vec![first[0].clone()]);
    }

    #[test]
    fn invalid_command_is_bad_command() {
        let (world, pose) = open_world();
        let mut a = agent(pose);
        let c = Command::new(CommandKind::Stop, Some(MoveDir::Forward));
        let (t, body) = reply_of(&a.handle_command(&c, &world));
        assert_eq!((t, body["reason"].as_str()), (MsgType::Error, Some("BadCommand")));
    }

    #[test]
    fn fire_watchdog_in_every_mode() {
        for mode in [Mode::Idle, Mode::MotionDetection, Mode::Streaming] {
            let mut scenario = Scenario::empty(16, 16, RobotPose { x: 8, y: 8, heading: Heading::N });
            scenario.fires.push(Fire { cell: (8, 8), ignition_tick: 2 });
            let (mut world, pose) = scenario.build().unwrap();
            let mut a = agent(pose);
            put_in(&mut a, mode, &world);
            let mut alerts = Vec::new();
            for _ in 0..10 {
                world.step();
                let n = a
                    .tick(&world)
                    .iter()
                    .filter(|e| matches!(e, Effect::Recorded { kind: RecordKind::FireAlert, .. }))
                    .count();
                alerts.push(n);
            }
            // burning from tick 2: over threshold on ticks 2, 3, 4 -> alert at tick 4
            let expected: Vec<usize> = (1..=10).map(|t| usize::from(t == 4)).collect();
            assert_eq!(alerts, expected, "{mode:?}");
            assert_eq!(a.mode(), mode);
        }
    }

    #[test]
    fn streaming_emits_one_frame_per_tick_only_when_connected() {
        let (mut world, pose) = open_world();
        let mut a = agent(pose);
        put_in(&mut a, Mode::Streaming, &world);
        world.step();
        assert!(!a.tick(&world).iter().any(|e| matches!(e, Effect::Frame(_))));
        a.set_connected(true, &world);
        for _ in 0..5 {
            world.step();
            let frames = a.tick(&world).iter().filter(|e| matches!(e, Effect::Frame(_))).count();
            assert_eq!(frames, 1);
        }
        assert_eq!(a.journal().records().filter(|r| r.kind != RecordKind::Status).count(), 0);
    }

    #[test]
    fn offline_records_wait_for_ack() {
        let mut scenario = Scenario::empty(16, 16, RobotPose { x: 8, y: 8, heading: Heading::N });
        scenario.fires.push(Fire { cell: (8, 8), ignition_tick: 0 });
        let (mut world, pose) = scenario.build().unwrap();
        let mut a = agent(pose);
        for _ in 0..5 {
            world.step();
            a.tick(&world);
        }
        let seqs: Vec<u64> = a.journal().records().map(|r| r.seq).collect();
        assert_eq!(seqs.len(), 1);
        assert!(a.acknowledge(seqs[0]));
        assert!(a.journal().is_empty());
    }

    #[test]
    fn stop_flushes_open_clip() {
        let mut cfg = AgentConfig::default();
        cfg.detector.area_fraction = 0.0005;
        cfg.detector.post_roll = 50;
        let mut scenario = Scenario::empty(16, 16, RobotPose { x: 8, y: 12, heading: Heading::N });
        scenario.intruders.push(crate::world::IntruderSpec {
            id: "walker".into(),
            path: vec![(6, 4), (7, 4), (8, 4), (9, 4)],
            random_walk: false,
            active_from: 10,
            active_until: 1000,
        });
        let (mut world, pose) = scenario.build().unwrap();
        let mut a = AgentState::new(pose, BackupJournal::in_memory(journal::DEFAULT_CAPACITY), cfg);
        put_in(&mut a, Mode::MotionDetection, &world);
        for _ in 0..15 {
            world.step();
            a.tick(&world);
        }
        assert_eq!(a.stats().motion_events, 1);
        assert!(a.stats().clips.is_empty());
        a.handle_command(&cmd(CommandKind::Stop), &world);
        assert_eq!(a.stats().clips.len(), 1);
        let clip = a.journal().records().find(|r| r.kind == RecordKind::ClipUpload).unwrap();
        let (meta, container) = decode_clip_upload(&clip.payload).unwrap();
        let motion = a.journal().records().find(|r| r.kind == RecordKind::MotionEvent).unwrap();
        assert_eq!(meta.event_journal_seq, motion.seq);
        assert_eq!(meta.sha256, hex::encode(sha256(container)));
        assert_eq!(meta.sha256, a.stats().clips[0]);
    }
}
