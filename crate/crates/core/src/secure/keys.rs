//! Long-lived signing identities and their hex-armored key files.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use p256::ecdsa::{SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;
use uuid::Uuid;

use super::crypto::{encode_public_key, parse_verifying_key, sha256, PUBLIC_KEY_LEN};

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("entropy source failed: {0}")]
    Entropy(String),
    #[error("key file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("key file {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("refusing to overwrite existing key file {0}")]
    Exists(PathBuf),
}

/// A party's static ECDSA identity. The id is derived from the public key.
#[derive(Clone)]
pub struct StaticIdentity {
    id: Uuid,
    signing: SigningKey,
}

impl std::fmt::Debug for StaticIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StaticIdentity").field("id", &self.id).finish_non_exhaustive()
    }
}

/// UUIDv8 built from the first 16 bytes of SHA-256 over the SEC1 public key.
pub fn id_for_public_key(public: &VerifyingKey) -> Uuid {
    let digest = sha256(&encode_public_key(public));
    uuid::Builder::from_custom_bytes(digest[..16].try_into().unwrap()).into_uuid()
}

impl StaticIdentity {
    /// Fresh keypair. A seed gives a reproducible key (tests, fixtures);
    /// otherwise the OS entropy source is used.
    pub fn generate(seed: Option<[u8; 32]>) -> Result<Self, KeyError> {
        let signing = match seed {
            Some(seed) => SigningKey::random(&mut ChaCha20Rng::from_seed(seed)),
            None => {
                let mut probe = [0u8; 32];
                OsRng
                    .try_fill_bytes(&mut probe)
                    .map_err(|e| KeyError::Entropy(e.to_string()))?;
                SigningKey::random(&mut OsRng)
            }
        };
        Ok(Self::from_signing_key(signing))
    }

    pub fn from_signing_key(signing: SigningKey) -> Self {
        let id = id_for_public_key(signing.verifying_key());
        Self { id, signing }
    }

    pub fn from_private_bytes(bytes: &[u8]) -> Option<Self> {
        SigningKey::from_slice(bytes).ok().map(Self::from_signing_key)
    }

    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn signing_key(&self) -> &SigningKey {
        &self.signing
    }

    pub fn verifying_key(&self) -> &VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn public_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        encode_public_key(self.verifying_key())
    }

    pub fn private_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }
}

/// Peers whose signatures we accept, keyed by their derived id.
#[derive(Clone, Debug, Default)]
pub struct TrustedKeys {
    keys: HashMap<Uuid, VerifyingKey>,
}

impl TrustedKeys {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_keys(keys: impl IntoIterator<Item = VerifyingKey>) -> Self {
        let mut out = Self::new();
        for key in keys {
            out.insert(key);
        }
        out
    }

    pub fn insert(&mut self, key: VerifyingKey) -> Uuid {
        let id = id_for_public_key(&key);
        self.keys.insert(id, key);
        id
    }

    pub fn get(&self, id: &Uuid) -> Option<&VerifyingKey> {
        self.keys.get(id)
    }

    pub fn contains(&self, id: &Uuid) -> bool {
        self.keys.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &Uuid> {
        self.keys.keys()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KeyError + '_ {
    move |source| KeyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(path: &Path, reason: impl Into<String>) -> KeyError {
    KeyError::Invalid {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn hex_lines(path: &Path) -> Result<Vec<Vec<u8>>, KeyError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| hex::decode(l).map_err(|e| invalid(path, format!("bad hex: {e}"))))
        .collect()
}

fn write_new(path: &Path, contents: &str, mode: u32, force: bool) -> Result<(), KeyError> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true);
    if force {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(mode);
    }
    #[cfg(not(unix))]
    let _ = mode;
    let mut file = opts.open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            KeyError::Exists(path.to_path_buf())
        } else {
            KeyError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        file.set_permissions(fs::Permissions::from_mode(mode))
            .map_err(io_err(path))?;
    }
    file.write_all(contents.as_bytes()).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

pub fn write_private_key(path: &Path, identity: &StaticIdentity, force: bool) -> Result<(), KeyError> {
    write_new(path, &format!("{}\n", hex::encode(identity.private_bytes())), 0o600, force)
}

pub fn write_public_key(path: &Path, key: &VerifyingKey, force: bool) -> Result<(), KeyError> {
    write_new(path, &format!("{}\n", hex::encode(encode_public_key(key))), 0o644, force)
}

pub fn read_private_key(path: &Path) -> Result<StaticIdentity, KeyError> {
    match hex_lines(path)?.as_slice() {
        [bytes] if bytes.len() == 32 => {
            StaticIdentity::from_private_bytes(bytes).ok_or_else(|| invalid(path, "scalar out of range"))
        }
        [_] => Err(invalid(path, "private key must be 32 bytes")),
        _ => Err(invalid(path, "expected exactly one hex line")),
    }
}

pub fn read_public_key(path: &Path) -> Result<VerifyingKey, KeyError> {
    match hex_lines(path)?.as_slice() {
        [bytes] => parse_verifying_key(bytes).map_err(|_| invalid(path, "not an uncompressed P-256 point")),
        _ => Err(invalid(path, "expected exactly one hex line")),
    }
}

/// Reads an allowlist: one hex public key per line, `#` comments allowed.
pub fn read_allowlist(path: &Path) -> Result<TrustedKeys, KeyError> {
    let mut trusted = TrustedKeys::new();
    for bytes in hex_lines(path)? {
        let key = parse_verifying_key(&bytes)
            .map_err(|_| invalid(path, "not an uncompressed P-256 point"))?;
        trusted.insert(key);
    }
    Ok(trusted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secure::crypto::{sign, verify};

    #[test]
    fn generated_keys_are_valid_and_distinct() {
        let a = StaticIdentity::generate(None).unwrap();
        let b = StaticIdentity::generate(None).unwrap();
        assert_ne!(a.private_bytes(), b.private_bytes());
        assert_ne!(a.id(), b.id());
        // parsing validates the point is on the curve
        parse_verifying_key(&a.public_bytes()).unwrap();
        let sig = sign(a.signing_key(), b"msg");
        assert!(verify(a.verifying_key(), b"msg", &sig));
        assert!(!verify(b.verifying_key(), b"msg", &sig));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = StaticIdentity::generate(Some([3; 32])).unwrap();
        let b = StaticIdentity::generate(Some([3; 32])).unwrap();
        assert_eq!(a.private_bytes(), b.private_bytes());
        assert_eq!(a.id().get_version_num(), 8);
    }

    #[test]
    fn key_files_round_trip_and_refuse_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let id = StaticIdentity::generate(None).unwrap();
        let key = dir.path().join("robot.key");
        let public = dir.path().join("robot.pub");
        write_private_key(&key, &id, false).unwrap();
        write_public_key(&public, id.verifying_key(), false).unwrap();
        assert!(matches!(write_private_key(&key, &id, false), Err(KeyError::Exists(_))));
        write_private_key(&key, &id, true).unwrap();

        let loaded = read_private_key(&key).unwrap();
        assert_eq!(loaded.id(), id.id());
        assert_eq!(read_public_key(&public).unwrap(), *id.verifying_key());
        let text = fs::read_to_string(&public).unwrap();
        assert_eq!(hex::decode(text.trim()).unwrap().len(), 65);

        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = fs::metadata(&key).unwrap().permissions().mode() & 0o777;
            assert_eq!(mode, 0o600);
        }
    }

    #[test]
    fn allowlist_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let a = StaticIdentity::generate(None).unwrap();
        let b = StaticIdentity::generate(None).unwrap();
        let path = dir.path().join("allow");
        fs::write(
            &path,
            format!("# robots\n{}\n\n{}\n", hex::encode(a.public_bytes()), hex::encode(b.public_bytes())),
        )
        .unwrap();
        let list = read_allowlist(&path).unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(list.get(&a.id()), Some(a.verifying_key()));
        fs::write(&path, "zz\n").unwrap();
        assert!(read_allowlist(&path).is_err());
        assert!(matches!(read_private_key(&dir.path().join("missing")), Err(KeyError::Io { .. })));
    }
}
