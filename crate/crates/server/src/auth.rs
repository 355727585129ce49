//! Operator accounts and bearer tokens.
//!
//! Passwords are stored as Argon2id PHC strings in an append-only JSON-lines
//! file. Tokens are 32 random bytes, hex encoded; the server keeps only
//! their SHA-256, so a leaked token table cannot be replayed.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sentinel_core::secure::crypto::sha256;

pub const MIN_PASSWORD_LEN: usize = 8;
const MAX_USERNAME_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("username already taken")]
    Duplicate,
    #[error("invalid username or password")]
    BadCredentials,
    #[error("{0}")]
    Invalid(&'static str),
    #[error("user store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("password hashing failed: {0}")]
    Hash(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserAccount {
    pub username: String,
    pub password_hash: String,
    pub created_at_ms: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_millis() as u64
}

struct Session {
    username: String,
    expires_at_ms: u64,
}

pub struct AuthStore {
    path: Option<PathBuf>,
    file: Mutex<Option<File>>,
    users: Mutex<HashMap<String, UserAccount>>,
    tokens: Mutex<HashMap<[u8; 32], Session>>,
    token_ttl: Duration,
    // verified against for unknown usernames so both paths cost one hash
    decoy_hash: String,
}

fn hash_password(password: &str) -> Result<String, AuthError> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| AuthError::Hash(e.to_string()))
}

fn check_username(name: &str) -> Result<(), AuthError> {
    let ok_char = |c: char| c.is_ascii_alphanumeric() || "._-@".contains(c);
    if name.is_empty() || name.len() > MAX_USERNAME_LEN || !name.chars().all(ok_char) {
        return Err(AuthError::Invalid(
            "username must be 1-64 characters of letters, digits, '.', '_', '-', '@'",
        ));
    }
    Ok(())
}

impl AuthStore {
    /// Loads accounts from `path` (created if missing), or keeps them in
    /// memory only when `path` is `None`.
    pub fn open(path: Option<&Path>, token_ttl: Duration) -> Result<Self, AuthError> {
        let mut users = HashMap::new();
        let mut file = None;
        if let Some(path) = path {
            if path.exists() {
                for line in BufReader::new(File::open(path)?).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    // a torn final line from a crash is skipped
                    if let Ok(user) = serde_json::from_str::<UserAccount>(&line) {
                        users.insert(user.username.clone(), user);
                    }
                }
            }
            file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }
        Ok(Self {
            path: path.map(Path::to_path_buf),
            file: Mutex::new(file),
            users: Mutex::new(users),
            tokens: Mutex::new(HashMap::new()),
            token_ttl,
            decoy_hash: hash_password("decoy password")?,
        })
    }

    pub fn user_count(&self) -> usize {
        self.users.lock().unwrap().len()
    }

    pub fn register(&self, username: &str, password: &str) -> Result<UserAccount, AuthError> {
        check_username(username)?;
        if password.chars().count() < MIN_PASSWORD_LEN {
            return Err(AuthError::Invalid("password must be at least 8 characters"));
        }
        if self.users.lock().unwrap().contains_key(username) {
            return Err(AuthError::Duplicate);
        }
        let account = UserAccount {
            username: username.to_string(),
            password_hash: hash_password(password)?,
            created_at_ms: now_ms(),
        };
        // re-check under the lock: hashing above ran unlocked
        let mut users = self.users.lock().unwrap();
        if users.contains_key(username) {
            return Err(AuthError::Duplicate);
        }
        if let Some(file) = self.file.lock().unwrap().as_mut() {
            let mut line = serde_json::to_vec(&account).expect("account serializes");
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        users.insert(account.username.clone(), account.clone());
        Ok(account)
    }

    /// Checks credentials and issues a token with its expiry (unix ms).
    pub fn login(&self, username: &str, password: &str) -> Result<(String, u64), AuthError> {
        let stored = self.users.lock().unwrap().get(username).map(|u| u.password_hash.clone());
        let hash = stored.as_deref().unwrap_or(&self.decoy_hash);
        let parsed = PasswordHash::new(hash).map_err(|e| AuthError::Hash(e.to_string()))?;
        let verified = Argon2::default().verify_password(password.as_bytes(), &parsed).is_ok();
        if !(verified && stored.is_some()) {
            return Err(AuthError::BadCredentials);
        }
        let mut raw = [0u8; 32];
        OsRng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let expires_at_ms = now_ms() + self.token_ttl.as_millis() as u64;
        self.tokens.lock().unwrap().insert(
            sha256(token.as_bytes()),
            Session {
                username: username.to_string(),
                expires_at_ms,
            },
        );
        Ok((token, expires_at_ms))
    }

    /// The user a live token belongs to. Expired tokens are purged.
    pub fn authenticate(&self, token: &str) -> Option<String> {
        let key = sha256(token.as_bytes());
        let mut tokens = self.tokens.lock().unwrap();
        let session = tokens.get(&key)?;
        if session.expires_at_ms <= now_ms() {
            tokens.remove(&key);
            return None;
        }
        Some(session.username.clone())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}
