//! Thin wrappers over the vetted primitives: SHA-256, AES-256-CBC with
//! PKCS#7 padding, ECDSA and ECDH on P-256.

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use p256::{PublicKey, SecretKey};
use sha2::{Digest, Sha256};

use super::ChannelError;

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;

/// Uncompressed SEC1 point length.
pub const PUBLIC_KEY_LEN: usize = 65;

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

pub fn encrypt_cbc(key: &[u8; 32], iv: &[u8; 16], plaintext: &[u8]) -> Vec<u8> {
    Aes256CbcEnc::new(key.into(), iv.into()).encrypt_padded_vec_mut::<Pkcs7>(plaintext)
}

pub fn decrypt_cbc(key: &[u8; 32], iv: &[u8; 16], ciphertext: &[u8]) -> Result<Vec<u8>, ChannelError> {
    Aes256CbcDec::new(key.into(), iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(ciphertext)
        .map_err(|_| ChannelError::BadPadding)
}

/// Parses a 65-byte uncompressed SEC1 point, rejecting anything off the
/// curve or the identity.
pub fn parse_public_key(bytes: &[u8]) -> Result<PublicKey, ChannelError> {
    if bytes.len() != PUBLIC_KEY_LEN || bytes[0] != 0x04 {
        return Err(ChannelError::InvalidPoint);
    }
    PublicKey::from_sec1_bytes(bytes).map_err(|_| ChannelError::InvalidPoint)
}

pub fn parse_verifying_key(bytes: &[u8]) -> Result<VerifyingKey, ChannelError> {
    Ok(VerifyingKey::from(parse_public_key(bytes)?))
}

pub fn encode_public_key(key: &VerifyingKey) -> [u8; PUBLIC_KEY_LEN] {
    key.to_encoded_point(false)
        .as_bytes()
        .try_into()
        .expect("uncompressed P-256 point is 65 bytes")
}

pub fn encode_ecdh_public(secret: &SecretKey) -> [u8; PUBLIC_KEY_LEN] {
    encode_public_key(&VerifyingKey::from(secret.public_key()))
}

/// Raw ECDH shared secret: the big-endian x-coordinate of `own * peer`.
pub fn ecdh_shared_x(own: &SecretKey, peer_public: &[u8]) -> Result<[u8; 32], ChannelError> {
    let peer = parse_public_key(peer_public)?;
    let shared = p256::ecdh::diffie_hellman(own.to_nonzero_scalar(), peer.as_affine());
    Ok((*shared.raw_secret_bytes()).into())
}

/// Session key: SHA-256 of the shared x-coordinate.
pub fn derive_session_key(own: &SecretKey, peer_public: &[u8]) -> Result<[u8; 32], ChannelError> {
    Ok(sha256(&ecdh_shared_x(own, peer_public)?))
}

/// ECDSA-P256 over SHA-256, returned as fixed-width `r || s`.
pub fn sign(key: &SigningKey, message: &[u8]) -> [u8; 64] {
    let sig: Signature = key.sign(message);
    sig.to_bytes().into()
}

pub fn verify(key: &VerifyingKey, message: &[u8], signature: &[u8; 64]) -> bool {
    Signature::from_slice(signature)
        .map(|sig| key.verify(message, &sig).is_ok())
        .unwrap_or(false)
}
