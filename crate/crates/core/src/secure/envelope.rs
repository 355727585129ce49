//! Bit-exact wire record carried on every robot/server connection.
//!
//! ```text
//! u32 remaining-length | u8 msg_type | u8 class | 16B sender_id | u64 seq
//! | 16B iv | u32 payload_len | payload | 64B signature (r || s)
//! ```
//!
//! All integers are big-endian. The remaining-length counts every byte
//! after itself.

use uuid::Uuid;

use super::ChannelError;

pub const LENGTH_PREFIX: usize = 4;
/// msg_type, class, sender_id, seq, iv, payload_len
pub const HEADER_LEN: usize = 1 + 1 + 16 + 8 + 16 + 4;
pub const SIGNATURE_LEN: usize = 64;
/// Largest accepted `remaining-length`.
pub const MAX_FRAME_LEN: usize = 32 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    HelloAck = 0x02,
    Command = 0x03,
    Status = 0x04,
    Frame = 0x05,
    FireAlert = 0x06,
    MotionEvent = 0x07,
    ClipUpload = 0x08,
    Ack = 0x09,
    Error = 0x0A,
}

impl MsgType {
    pub const ALL: [MsgType; 10] = [
        MsgType::Hello,
        MsgType::HelloAck,
        MsgType::Command,
        MsgType::Status,
        MsgType::Frame,
        MsgType::FireAlert,
        MsgType::MotionEvent,
        MsgType::ClipUpload,
        MsgType::Ack,
        MsgType::Error,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for MsgType {
    type Error = ChannelError;

    fn try_from(code: u8) -> Result<Self, ChannelError> {
        MsgType::ALL
            .into_iter()
            .find(|t| t.code() == code)
            .ok_or_else(|| ChannelError::Malformed(format!("unknown msg_type 0x{code:02x}")))
    }
}

/// Protection level applied to an envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum SecurityClass {
    Plain = 0,
    Signed = 1,
    /// AES-256-CBC encrypted, then signed over the ciphertext.
    EncryptedSigned = 2,
}

impl TryFrom<u8> for SecurityClass {
    type Error = ChannelError;

    fn try_from(code: u8) -> Result<Self, ChannelError> {
        match code {
            0 => Ok(SecurityClass::Plain),
            1 => Ok(SecurityClass::Signed),
            2 => Ok(SecurityClass::EncryptedSigned),
            other => Err(ChannelError::Malformed(format!("unknown class {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub msg_type: MsgType,
    pub class: SecurityClass,
    pub sender_id: Uuid,
    pub seq: u64,
    pub iv: [u8; 16],
    pub payload: Vec<u8>,
    pub signature: [u8; SIGNATURE_LEN],
}

impl Envelope {
    /// Bytes covered by the signature: msg_type | class | sender_id | seq | iv | payload.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN - 4 + self.payload.len());
        out.push(self.msg_type.code());
        out.push(self.class as u8);
        out.extend_from_slice(self.sender_id.as_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn encoded_len(&self) -> usize {
        LENGTH_PREFIX + HEADER_LEN + self.payload.len() + SIGNATURE_LEN
    }

    pub fn encode(&self) -> Vec<u8> {
        let remaining = (HEADER_LEN + self.payload.len() + SIGNATURE_LEN) as u32;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&remaining.to_be_bytes());
        out.push(self.msg_type.code());
        out.push(self.class as u8);
        out.extend_from_slice(self.sender_id.as_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.signature);
        out
    }

    /// Decodes one complete frame, length prefix included.
    pub fn decode(bytes: &[u8]) -> Result<Self, ChannelError> {
        let malformed = |why: &str| ChannelError::Malformed(why.to_string());
        if bytes.len() < LENGTH_PREFIX {
            return Err(malformed("truncated length prefix"));
        }
        let remaining = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        let body = &bytes[LENGTH_PREFIX..];
        if remaining != body.len() {
            return Err(malformed("length prefix does not match frame size"));
        }
        if remaining < HEADER_LEN + SIGNATURE_LEN {
            return Err(malformed("frame shorter than fixed fields"));
        }
        let msg_type = MsgType::try_from(body[0])?;
        let class = SecurityClass::try_from(body[1])?;
        let sender_id = Uuid::from_bytes(body[2..18].try_into().unwrap());
        let seq = u64::from_be_bytes(body[18..26].try_into().unwrap());
        let iv: [u8; 16] = body[26..42].try_into().unwrap();
        let payload_len = u32::from_be_bytes(body[42..46].try_into().unwrap()) as usize;
        if HEADER_LEN + payload_len + SIGNATURE_LEN != remaining {
            return Err(malformed("payload length does not match frame size"));
        }
        let payload = body[HEADER_LEN..HEADER_LEN + payload_len].to_vec();
        let signature: [u8; SIGNATURE_LEN] = body[HEADER_LEN + payload_len..].try_into().unwrap();

        let zero_iv = iv == [0; 16];
        let zero_sig = signature == [0; SIGNATURE_LEN];
        match class {
            SecurityClass::Plain if !zero_iv || !zero_sig => {
                return Err(malformed("plain envelope carries iv or signature"))
            }
            SecurityClass::Signed if !zero_iv => return Err(malformed("signed envelope carries iv")),
            SecurityClass::Signed | SecurityClass::EncryptedSigned if zero_sig => {
                return Err(malformed("missing signature"))
            }
            SecurityClass::EncryptedSigned if payload.is_empty() || payload.len() % 16 != 0 => {
                return Err(malformed("ciphertext is not a whole number of blocks"))
            }
            _ => {}
        }

        Ok(Self {
            msg_type,
            class,
            sender_id,
            seq,
            iv,
            payload,
            signature,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Envelope {
        Envelope {
            msg_type: MsgType::Command,
            class: SecurityClass::Signed,
            sender_id: Uuid::from_bytes([7; 16]),
            seq: 0x0102030405060708,
            iv: [0; 16],
            payload: b"hi".to_vec(),
            signature: [9; 64],
        }
    }

    #[test]
    fn layout_is_exact() {
        let bytes = sample().encode();
        let mut expected = vec![0, 0, 0, (46 + 2 + 64) as u8, 0x03, 0x01];
        expected.extend_from_slice(&[7; 16]);
        expected.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8]);
        expected.extend_from_slice(&[0; 16]);
        expected.extend_from_slice(&[0, 0, 0, 2]);
        expected.extend_from_slice(b"hi");
        expected.extend_from_slice(&[9; 64]);
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), sample().encoded_len());
    }

    #[test]
    fn rejects_inconsistent_frames() {
        let good = sample().encode();
        assert!(Envelope::decode(&good[..good.len() - 1]).is_err());
        let mut bad_type = good.clone();
        bad_type[4] = 0x0B;
        assert!(Envelope::decode(&bad_type).is_err());
        let mut bad_class = good.clone();
        bad_class[5] = 3;
        assert!(Envelope::decode(&bad_class).is_err());
        let mut plain_with_sig = good.clone();
        plain_with_sig[5] = 0;
        assert!(Envelope::decode(&plain_with_sig).is_err());
        let mut odd_cipher = good;
        odd_cipher[5] = 2;
        assert!(Envelope::decode(&odd_cipher).is_err());
        assert!(Envelope::decode(&[0, 0, 0, 1, 0]).is_err());
    }

    fn arb_envelope() -> impl Strategy<Value = Envelope> {
        (0usize..10, 0u8..3, any::<[u8; 16]>(), any::<u64>(), any::<[u8; 16]>(), proptest::collection::vec(any::<u8>(), 0..300), any::<[u8; 32]>())
            .prop_map(|(t, class, id, seq, iv, mut payload, sig_half)| {
                let class = SecurityClass::try_from(class).unwrap();
                let mut signature = [0u8; 64];
                if class != SecurityClass::Plain {
                    signature[..32].copy_from_slice(&sig_half);
                    signature[63] = 1;
                }
                let iv = if class == SecurityClass::EncryptedSigned {
                    payload.resize((payload.len() / 16 + 1) * 16, 0);
                    iv
                } else {
                    [0; 16]
                };
                Envelope { msg_type: MsgType::ALL[t], class, sender_id: Uuid::from_bytes(id), seq, iv, payload, signature }
            })
    }

    proptest! {
        #[test]
        fn codec_round_trip(env in arb_envelope()) {
            let bytes = env.encode();
            prop_assert_eq!(Envelope::decode(&bytes).unwrap(), env);
        }

        #[test]
        fn encode_is_injective(a in arb_envelope(), b in arb_envelope()) {
            prop_assert_eq!(a == b, a.encode() == b.encode());
        }
    }
}
