//! Session establishment.
//!
//! The robot opens with `HELLO`: a signed envelope (seq 0) whose payload is
//! its ephemeral ECDH public key, its static ECDSA public key and a fresh
//! 16-byte nonce. The server checks the static key against its allowlist
//! and answers with `HELLO_ACK` of the same shape, carrying its own keys and
//! echoing the robot's nonce inside the signed body. Both ends then derive
//! the AES key from the ephemeral pair.

use std::io;
use std::sync::Arc;
use std::time::Duration;

use p256::ecdsa::VerifyingKey;
use p256::SecretKey;
use rand::rngs::OsRng;
use rand::RngCore;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite};
use uuid::Uuid;

use super::crypto::{derive_session_key, encode_ecdh_public, parse_public_key, parse_verifying_key, verify, PUBLIC_KEY_LEN};
use super::envelope::{Envelope, MsgType, SecurityClass};
use super::framing::{read_frame, write_frame};
use super::keys::{id_for_public_key, StaticIdentity, TrustedKeys};
use super::session::{build_envelope, ChannelPolicy, Session, SessionKeys};
use super::ChannelError;

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
pub const NONCE_LEN: usize = 16;
const HELLO_PAYLOAD_LEN: usize = 2 * PUBLIC_KEY_LEN + NONCE_LEN;

#[derive(Debug, Error)]
pub enum HandshakeError {
    #[error("peer static key is not trusted")]
    UnknownStaticKey,
    #[error("handshake signature invalid")]
    BadSignature,
    #[error("HELLO_ACK did not echo our nonce")]
    NonceMismatch,
    #[error("handshake timed out")]
    Timeout,
    #[error("unexpected handshake message: {0}")]
    Unexpected(String),
    #[error("connection closed during handshake")]
    Closed,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("transport error: {0}")]
    Io(#[from] io::Error),
}

/// Decoded body of a `HELLO` or `HELLO_ACK`.
#[derive(Clone, Debug)]
pub struct Hello {
    pub sender_id: Uuid,
    pub ephemeral_public: [u8; PUBLIC_KEY_LEN],
    pub static_key: VerifyingKey,
    pub nonce: [u8; NONCE_LEN],
    envelope: Envelope,
}

impl Hello {
    fn signature_valid(&self) -> bool {
        verify(&self.static_key, &self.envelope.signed_bytes(), &self.envelope.signature)
    }
}

pub fn encode_hello(
    msg_type: MsgType,
    identity: &StaticIdentity,
    ephemeral_public: &[u8; PUBLIC_KEY_LEN],
    nonce: &[u8; NONCE_LEN],
) -> Vec<u8> {
    let mut payload = Vec::with_capacity(HELLO_PAYLOAD_LEN);
    payload.extend_from_slice(ephemeral_public);
    payload.extend_from_slice(&identity.public_bytes());
    payload.extend_from_slice(nonce);
    build_envelope(&payload, msg_type, SecurityClass::Signed, 0, None, identity)
        .expect("signed envelopes need no session key")
        .encode()
}

/// Parses a handshake message. Structure is validated here; trust and
/// signature checks are left to the caller so each side can order them.
pub fn decode_hello(bytes: &[u8], expected: MsgType) -> Result<Hello, HandshakeError> {
    let envelope = Envelope::decode(bytes)?;
    if envelope.msg_type != expected {
        return Err(HandshakeError::Unexpected(format!(
            "expected {expected:?}, got {:?}",
            envelope.msg_type
        )));
    }
    if envelope.class != SecurityClass::Signed || envelope.payload.len() != HELLO_PAYLOAD_LEN {
        return Err(HandshakeError::Unexpected("bad handshake envelope shape".into()));
    }
    let p = &envelope.payload;
    let ephemeral_public: [u8; PUBLIC_KEY_LEN] = p[..PUBLIC_KEY_LEN].try_into().unwrap();
    parse_public_key(&ephemeral_public)?;
    let static_key = parse_verifying_key(&p[PUBLIC_KEY_LEN..2 * PUBLIC_KEY_LEN])?;
    let nonce: [u8; NONCE_LEN] = p[2 * PUBLIC_KEY_LEN..].try_into().unwrap();
    if id_for_public_key(&static_key) != envelope.sender_id {
        return Err(HandshakeError::UnknownStaticKey);
    }
    Ok(Hello {
        sender_id: envelope.sender_id,
        ephemeral_public,
        static_key,
        nonce,
        envelope,
    })
}

async fn next_frame<S: AsyncRead + Unpin>(stream: &mut S) -> Result<Vec<u8>, HandshakeError> {
    read_frame(stream).await?.ok_or(HandshakeError::Closed)
}

fn fresh_nonce() -> Result<[u8; NONCE_LEN], HandshakeError> {
    let mut nonce = [0u8; NONCE_LEN];
    OsRng
        .try_fill_bytes(&mut nonce)
        .map_err(|e| HandshakeError::Io(io::Error::other(e.to_string())))?;
    Ok(nonce)
}

/// Robot side. `server_key` is the pinned server static key.
pub async fn robot_handshake<S>(
    stream: &mut S,
    identity: Arc<StaticIdentity>,
    server_key: &VerifyingKey,
    policy: Arc<ChannelPolicy>,
    timeout: Duration,
) -> Result<Session, HandshakeError>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let exchange = async {
        let ephemeral = SecretKey::random(&mut OsRng);
        let nonce = fresh_nonce()?;
        let hello = encode_hello(MsgType::Hello, &identity, &encode_ecdh_public(&ephemeral), &nonce);
        write_frame(stream, &hello).await?;

        let ack = decode_hello(&next_frame(stream).await?, MsgType::HelloAck)?;
        if ack.static_key != *server_key {
            return Err(HandshakeError::UnknownStaticKey);
        }
        if !ack.signature_valid() {
            return Err(HandshakeError::BadSignature);
        }
        if ack.nonce != nonce {
            return Err(HandshakeError::NonceMismatch);
        }
        let aes_key = derive_session_key(&ephemeral, &ack.ephemeral_public)?;
        Ok(Session {
            keys: SessionKeys::new(aes_key, ack.static_key),
            identity: identity.clone(),
            trusted: Arc::new(TrustedKeys::from_keys([ack.static_key])),
            policy: policy.clone(),
            peer_id: ack.sender_id,
        })
    };
    tokio::time::timeout(timeout, exchange)
        .await
        .map_err(|_| HandshakeError::Timeout)?
}

/// Server side. Returns the authenticated robot id with its session.
pub async fn server_handshake<S>(
    stream: &mut S,
    identity: Arc<StaticIdentity>,
    allowlist: &TrustedKeys,
    policy: Arc<ChannelPolicy>,
    timeout: Duration,
) -> Result<Session, HandshakeError>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let exchange = async {
        let hello = decode_hello(&next_frame(stream).await?, MsgType::Hello)?;
        if allowlist.get(&hello.sender_id) != Some(&hello.static_key) {
            return Err(HandshakeError::UnknownStaticKey);
        }
        if !hello.signature_valid() {
            return Err(HandshakeError::BadSignature);
        }
        let ephemeral = SecretKey::random(&mut OsRng);
        let aes_key = derive_session_key(&ephemeral, &hello.ephemeral_public)?;
        let ack = encode_hello(MsgType::HelloAck, &identity, &encode_ecdh_public(&ephemeral), &hello.nonce);
        write_frame(stream, &ack).await?;
        Ok(Session {
            keys: SessionKeys::new(aes_key, hello.static_key),
            identity: identity.clone(),
            trusted: Arc::new(TrustedKeys::from_keys([hello.static_key])),
            policy: policy.clone(),
            peer_id: hello.sender_id,
        })
    };
    tokio::time::timeout(timeout, exchange)
        .await
        .map_err(|_| HandshakeError::Timeout)?
}
