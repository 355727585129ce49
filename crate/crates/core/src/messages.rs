//! Application payloads carried inside envelopes and on the operator API.
//!
//! Control messages are JSON objects. `FRAME` and `CLIP_UPLOAD` carry binary
//! bodies, described on their codecs below.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::vision::{BoundingBox, Frame, VisionError};
use crate::world::{MoveDir, RobotPose, SensorReading};

#[derive(Debug, Error, PartialEq)]
pub enum MessageError {
    #[error("invalid json: {0}")]
    Json(String),
    #[error("invalid command: {0}")]
    Command(&'static str),
    #[error("truncated or inconsistent binary payload")]
    Binary,
    #[error(transparent)]
    Vision(#[from] VisionError),
}

impl From<serde_json::Error> for MessageError {
    fn from(e: serde_json::Error) -> Self {
        MessageError::Json(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Idle,
    MotionDetection,
    Streaming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    Move,
    StartMotionDetection,
    StartStreaming,
    Stop,
    StatusRequest,
}

impl CommandKind {
    pub const ALL: [CommandKind; 5] = [
        CommandKind::Move,
        CommandKind::StartMotionDetection,
        CommandKind::StartStreaming,
        CommandKind::Stop,
        CommandKind::StatusRequest,
    ];
}

/// `{"kind":"Move","direction":"Forward","command_id":"..."}`
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    pub kind: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<MoveDir>,
    pub command_id: Uuid,
}

impl Command {
    pub fn new(kind: CommandKind, direction: Option<MoveDir>) -> Self {
        Self {
            kind,
            direction,
            command_id: Uuid::new_v4(),
        }
    }

    pub fn movement(direction: MoveDir) -> Self {
        Self::new(CommandKind::Move, Some(direction))
    }

    /// A direction is required for `Move` and forbidden otherwise.
    pub fn validate(&self) -> Result<(), MessageError> {
        match (self.kind, self.direction) {
            (CommandKind::Move, None) => Err(MessageError::Command("Move requires a direction")),
            (CommandKind::Move, Some(_)) => Ok(()),
            (_, Some(_)) => Err(MessageError::Command("direction is only valid for Move")),
            (_, None) => Ok(()),
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, MessageError> {
        let cmd: Command = serde_json::from_slice(bytes)?;
        cmd.validate()?;
        Ok(cmd)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("command serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorReason {
    Blocked,
    ModeConflict,
    BadCommand,
}

/// Robot reply to a command it refused.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandError {
    pub command_id: Option<Uuid>,
    pub reason: ErrorReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// `ACK` body. The robot acknowledges commands by `command_id`; the server
/// acknowledges journaled records by `journal_seq`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_id: Option<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub journal_seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub journal_seq: u64,
    pub mode: Mode,
    pub pose: RobotPose,
    pub sensors: SensorReading,
    pub tick: u64,
    pub backlog: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FireAlert {
    pub journal_seq: u64,
    pub tick: u64,
    pub smoke_ppm: f64,
    pub temperature_c: f64,
    pub pose: RobotPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionAlert {
    pub journal_seq: u64,
    pub tick: u64,
    pub frame_index: u64,
    pub changed_fraction: f64,
    pub bbox: BoundingBox,
    pub pose: RobotPose,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub journal_seq: u64,
    /// `journal_seq` of the motion event this clip belongs to.
    pub event_journal_seq: u64,
    /// Lowercase hex SHA-256 of the SVC1 bytes.
    pub sha256: String,
    pub frame_count: u32,
    pub first_frame_index: u64,
}

/// Just enough of a journaled JSON payload to acknowledge it.
#[derive(Deserialize)]
struct JournalSeqOnly {
    journal_seq: u64,
}

pub fn journal_seq_of(json: &[u8]) -> Result<u64, MessageError> {
    Ok(serde_json::from_slice::<JournalSeqOnly>(json)?.journal_seq)
}

/// `CLIP_UPLOAD` body: u32-BE meta length | meta JSON | SVC1 container.
pub fn encode_clip_upload(meta: &ClipMeta, container: &[u8]) -> Vec<u8> {
    let meta = serde_json::to_vec(meta).expect("clip meta serializes");
    let mut out = Vec::with_capacity(4 + meta.len() + container.len());
    out.extend_from_slice(&(meta.len() as u32).to_be_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(container);
    out
}

pub fn decode_clip_upload(bytes: &[u8]) -> Result<(ClipMeta, &[u8]), MessageError> {
    let len = bytes
        .get(..4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
        .ok_or(MessageError::Binary)?;
    let meta = bytes.get(4..4 + len).ok_or(MessageError::Binary)?;
    Ok((serde_json::from_slice(meta)?, &bytes[4 + len..]))
}

pub const FRAME_HEADER_LEN: usize = 2 + 2 + 8 + 8;

/// Live frame as sent in `FRAME` envelopes and on the stream WebSocket:
/// u16-BE width | u16-BE height | u64-BE frame_index | u64-BE timestamp_ms | pixels.
pub fn encode_frame_message(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + frame.pixel_count());
    out.extend_from_slice(&frame.width().to_be_bytes());
    out.extend_from_slice(&frame.height().to_be_bytes());
    out.extend_from_slice(&frame.frame_index.to_be_bytes());
    out.extend_from_slice(&frame.timestamp_ms.to_be_bytes());
    out.extend_from_slice(frame.pixels());
    out
}

pub fn decode_frame_message(bytes: &[u8]) -> Result<Frame, MessageError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(MessageError::Binary);
    }
    let width = u16::from_be_bytes([bytes[0], bytes[1]]);
    let height = u16::from_be_bytes([bytes[2], bytes[3]]);
    let frame_index = u64::from_be_bytes(bytes[4..12].try_into().unwrap());
    let timestamp_ms = u64::from_be_bytes(bytes[12..20].try_into().unwrap());
    Ok(Frame::new(width, height, bytes[FRAME_HEADER_LEN..].to_vec(), frame_index, timestamp_ms)?)
}
