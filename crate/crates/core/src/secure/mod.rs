//! Authenticated, optionally encrypted channel between robot and server.
//!
//! Each connection starts with a signed ECDH handshake using fresh
//! ephemeral keys; the session key is SHA-256 of the shared x-coordinate.
//! Afterwards every message travels in an [`Envelope`] whose protection
//! class is dictated by the [`ChannelPolicy`]: plain, ECDSA-signed, or
//! AES-256-CBC encrypted and then signed over the ciphertext.

pub mod crypto;
pub mod envelope;
pub mod framing;
pub mod handshake;
pub mod keys;
pub mod session;

use thiserror::Error;
use uuid::Uuid;

pub use envelope::{Envelope, MsgType, SecurityClass};
pub use p256::ecdsa::VerifyingKey;
pub use handshake::{robot_handshake, server_handshake, HandshakeError, HANDSHAKE_TIMEOUT};
pub use keys::{StaticIdentity, TrustedKeys};
pub use session::{open, seal, ChannelPolicy, Opened, Opener, Sealer, Session, SessionKeys};

/// Reasons a message is refused. Each variant has a stable [`code`](Self::code).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown sender {0}")]
    UnknownSender(Uuid),
    #[error("{msg_type:?} sent as {class:?}, policy requires {required:?}")]
    PolicyViolation {
        msg_type: MsgType,
        class: SecurityClass,
        required: SecurityClass,
    },
    #[error("signature verification failed")]
    BadSignature,
    #[error("replayed or stale seq {seq} (highest accepted {high})")]
    Replay { seq: u64, high: u64 },
    #[error("bad padding")]
    BadPadding,
    #[error("encryption failed: {0}")]
    Encryption(String),
    #[error("invalid curve point")]
    InvalidPoint,
}

impl ChannelError {
    pub fn code(&self) -> &'static str {
        match self {
            ChannelError::Malformed(_) => "malformed",
            ChannelError::UnknownSender(_) => "unknown_sender",
            ChannelError::PolicyViolation { .. } => "policy",
            ChannelError::BadSignature => "bad_signature",
            ChannelError::Replay { .. } => "replay",
            ChannelError::BadPadding => "bad_padding",
            ChannelError::Encryption(_) => "encryption",
            ChannelError::InvalidPoint => "invalid_point",
        }
    }
}
