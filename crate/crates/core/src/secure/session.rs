//! Per-session sealing and opening of envelopes.

use std::collections::HashMap;
use std::sync::Arc;

use p256::ecdsa::VerifyingKey;
use rand::rngs::OsRng;
use rand::RngCore;
use uuid::Uuid;

use super::crypto::{decrypt_cbc, encrypt_cbc, sign, verify};
use super::envelope::{Envelope, MsgType, SecurityClass};
use super::keys::{StaticIdentity, TrustedKeys};
use super::ChannelError;

/// Minimum protection class per message type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelPolicy {
    minimum: HashMap<MsgType, SecurityClass>,
}

impl Default for ChannelPolicy {
    fn default() -> Self {
        use MsgType::*;
        use SecurityClass::*;
        let minimum = [
            (Hello, Signed),
            (HelloAck, Signed),
            (Command, Signed),
            (Status, EncryptedSigned),
            (Frame, Plain),
            (FireAlert, Signed),
            (MotionEvent, Signed),
            (ClipUpload, EncryptedSigned),
            (Ack, Signed),
            (Error, Signed),
        ]
        .into_iter()
        .collect();
        Self { minimum }
    }
}

impl ChannelPolicy {
    pub fn minimum(&self, msg_type: MsgType) -> SecurityClass {
        self.minimum
            .get(&msg_type)
            .copied()
            .unwrap_or(SecurityClass::EncryptedSigned)
    }

    /// The class a sender uses by default: exactly the policy minimum.
    pub fn class_for(&self, msg_type: MsgType) -> SecurityClass {
        self.minimum(msg_type)
    }

    pub fn check(&self, msg_type: MsgType, class: SecurityClass) -> Result<(), ChannelError> {
        let required = self.minimum(msg_type);
        if class < required {
            return Err(ChannelError::PolicyViolation {
                msg_type,
                class,
                required,
            });
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct SessionKeys {
    aes_key: [u8; 32],
    pub send_seq: u64,
    pub recv_seq_high: u64,
    pub peer_public: VerifyingKey,
}

impl std::fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKeys")
            .field("send_seq", &self.send_seq)
            .field("recv_seq_high", &self.recv_seq_high)
            .finish_non_exhaustive()
    }
}

impl SessionKeys {
    /// Counters start so that the first sealed message carries seq 1.
    pub fn new(aes_key: [u8; 32], peer_public: VerifyingKey) -> Self {
        Self {
            aes_key,
            send_seq: 1,
            recv_seq_high: 0,
            peer_public,
        }
    }

    pub fn aes_key(&self) -> &[u8; 32] {
        &self.aes_key
    }
}

/// An authenticated message recovered by [`open`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opened {
    pub msg_type: MsgType,
    pub class: SecurityClass,
    pub sender_id: Uuid,
    pub seq: u64,
    pub payload: Vec<u8>,
}

/// Builds and signs an envelope without touching session counters.
pub(crate) fn build_envelope(
    payload: &[u8],
    msg_type: MsgType,
    class: SecurityClass,
    seq: u64,
    aes_key: Option<&[u8; 32]>,
    identity: &StaticIdentity,
) -> Result<Envelope, ChannelError> {
    let (iv, body) = if class == SecurityClass::EncryptedSigned {
        let key = aes_key.ok_or_else(|| ChannelError::Encryption("no session key".into()))?;
        let mut iv = [0u8; 16];
        OsRng
            .try_fill_bytes(&mut iv)
            .map_err(|e| ChannelError::Encryption(e.to_string()))?;
        (iv, encrypt_cbc(key, &iv, payload))
    } else {
        ([0u8; 16], payload.to_vec())
    };
    let mut env = Envelope {
        msg_type,
        class,
        sender_id: identity.id(),
        seq,
        iv,
        payload: body,
        signature: [0; 64],
    };
    if class != SecurityClass::Plain {
        env.signature = sign(identity.signing_key(), &env.signed_bytes());
    }
    Ok(env)
}

/// Seals `payload` as one wire frame and advances `send_seq`.
///
/// Encrypted envelopes are signed over the ciphertext, so a receiver can
/// authenticate before it decrypts.
pub fn seal(
    payload: &[u8],
    msg_type: MsgType,
    class: SecurityClass,
    keys: &mut SessionKeys,
    identity: &StaticIdentity,
    policy: &ChannelPolicy,
) -> Result<Vec<u8>, ChannelError> {
    policy.check(msg_type, class)?;
    let env = build_envelope(payload, msg_type, class, keys.send_seq, Some(&keys.aes_key), identity)?;
    keys.send_seq += 1;
    Ok(env.encode())
}

/// Parses and authenticates one wire frame.
///
/// Checks run in a fixed order: framing, sender, policy, signature,
/// sequence, then decryption. Only a fully accepted message advances
/// `recv_seq_high`.
pub fn open(
    bytes: &[u8],
    keys: &mut SessionKeys,
    trusted: &TrustedKeys,
    policy: &ChannelPolicy,
) -> Result<Opened, ChannelError> {
    let env = Envelope::decode(bytes)?;
    let sender_key = trusted
        .get(&env.sender_id)
        .ok_or(ChannelError::UnknownSender(env.sender_id))?;
    policy.check(env.msg_type, env.class)?;
    if env.class != SecurityClass::Plain && !verify(sender_key, &env.signed_bytes(), &env.signature) {
        return Err(ChannelError::BadSignature);
    }
    if env.seq <= keys.recv_seq_high {
        return Err(ChannelError::Replay {
            seq: env.seq,
            high: keys.recv_seq_high,
        });
    }
    let payload = if env.class == SecurityClass::EncryptedSigned {
        decrypt_cbc(&keys.aes_key, &env.iv, &env.payload)?
    } else {
        env.payload
    };
    keys.recv_seq_high = env.seq;
    Ok(Opened {
        msg_type: env.msg_type,
        class: env.class,
        sender_id: env.sender_id,
        seq: env.seq,
        payload,
    })
}

/// Everything one end of an established session needs.
#[derive(Clone, Debug)]
pub struct Session {
    pub keys: SessionKeys,
    pub identity: Arc<StaticIdentity>,
    pub trusted: Arc<TrustedKeys>,
    pub policy: Arc<ChannelPolicy>,
    pub peer_id: Uuid,
}

impl Session {
    pub fn seal(&mut self, payload: &[u8], msg_type: MsgType) -> Result<Vec<u8>, ChannelError> {
        let class = self.policy.class_for(msg_type);
        self.seal_with(payload, msg_type, class)
    }

    pub fn seal_with(
        &mut self,
        payload: &[u8],
        msg_type: MsgType,
        class: SecurityClass,
    ) -> Result<Vec<u8>, ChannelError> {
        seal(payload, msg_type, class, &mut self.keys, &self.identity, &self.policy)
    }

    pub fn open(&mut self, bytes: &[u8]) -> Result<Opened, ChannelError> {
        open(bytes, &mut self.keys, &self.trusted, &self.policy)
    }

    /// Splits into independently owned sending and receiving halves.
    pub fn split(self) -> (Sealer, Opener) {
        (Sealer(self.clone()), Opener(self))
    }
}

/// Sending half of a session; the sole owner of `send_seq`.
#[derive(Debug)]
pub struct Sealer(Session);

impl Sealer {
    pub fn seal(&mut self, payload: &[u8], msg_type: MsgType) -> Result<Vec<u8>, ChannelError> {
        self.0.seal(payload, msg_type)
    }

    pub fn peer_id(&self) -> Uuid {
        self.0.peer_id
    }
}

/// Receiving half of a session; the sole owner of `recv_seq_high`.
#[derive(Debug)]
pub struct Opener(Session);

impl Opener {
    pub fn open(&mut self, bytes: &[u8]) -> Result<Opened, ChannelError> {
        self.0.open(bytes)
    }

    pub fn peer_id(&self) -> Uuid {
        self.0.peer_id
    }
}
