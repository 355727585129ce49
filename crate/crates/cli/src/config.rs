//! Command-line flags and the JSON config file they override.
//!
//! Precedence is flag, then file, then built-in default. Every flag has a
//! field of the same meaning in the file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sentinel_robot::RobotConfig;
use sentinel_server::ServerConfig;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "sentinel", version, about = "Simulated surveillance robots and their control server")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the control server.
    Serve(ServeArgs),
    /// Run one simulated robot against a scenario.
    Robot(RobotArgs),
    /// Generate a static identity key pair.
    Keygen(KeygenArgs),
    /// Run a JSON script of API calls and print a transcript.
    Client(ClientArgs),
}

/// The config file. Both sections may live in one file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub server: ServerConfig,
    pub server_identity: Option<PathBuf>,
    pub allowlist: Option<PathBuf>,
    pub robot: RobotConfig,
    pub robot_identity: Option<PathBuf>,
    pub server_public_key: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    fn load_optional(path: Option<&Path>) -> Result<Self, CliError> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }
}

/// `:8080` listens on all interfaces.
pub fn normalize_addr(addr: &str) -> String {
    match addr.strip_prefix(':') {
        Some(port) => format!("0.0.0.0:{port}"),
        None => addr.to_string(),
    }
}

#[derive(Debug, Default, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SENTINEL_CONFIG")]
    pub config: Option<PathBuf>,
    /// HTTP listener, e.g. `:8080` or `127.0.0.1:8080`.
    #[arg(long)]
    pub http: Option<String>,
    /// Robot listener, e.g. `:7700`.
    #[arg(long)]
    pub robots: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Server private key file.
    #[arg(long)]
    pub identity: Option<PathBuf>,
    /// File of allowed robot public keys, one hex key per line.
    #[arg(long)]
    pub allowlist: Option<PathBuf>,
    #[arg(long)]
    pub token_ttl_secs: Option<u64>,
    #[arg(long)]
    pub handshake_timeout_ms: Option<u64>,
    #[arg(long)]
    pub max_consecutive_faults: Option<u32>,
    #[arg(long)]
    pub stream_queue_frames: Option<usize>,
    #[arg(long)]
    pub events_page_size: Option<usize>,
    #[arg(long)]
    pub fsync: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServeSettings {
    pub server: ServerConfig,
    pub identity: PathBuf,
    pub allowlist: PathBuf,
}

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("{what} is required (flag or config file)")))
}

impl ServeArgs {
    pub fn resolve(self) -> Result<ServeSettings, CliError> {
        let file = FileConfig::load_optional(self.config.as_deref())?;
        let mut s = file.server;
        if let Some(v) = self.http {
            s.http_addr = v;
        }
        if let Some(v) = self.robots {
            s.robot_addr = v;
        }
        s.http_addr = normalize_addr(&s.http_addr);
        s.robot_addr = normalize_addr(&s.robot_addr);
        if self.data_dir.is_some() {
            s.data_dir = self.data_dir;
        }
        if self.static_dir.is_some() {
            s.static_dir = self.static_dir;
        }
        s.token_ttl_secs = self.token_ttl_secs.unwrap_or(s.token_ttl_secs);
        s.handshake_timeout_ms = self.handshake_timeout_ms.unwrap_or(s.handshake_timeout_ms);
        s.max_consecutive_faults = self.max_consecutive_faults.unwrap_or(s.max_consecutive_faults);
        s.stream_queue_frames = self.stream_queue_frames.unwrap_or(s.stream_queue_frames);
        s.events_page_size = self.events_page_size.unwrap_or(s.events_page_size);
        s.fsync = self.fsync.unwrap_or(s.fsync);
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(ServeSettings {
            server: s,
            identity: required(self.identity.or(file.server_identity), "--identity")?,
            allowlist: required(self.allowlist.or(file.allowlist), "--allowlist")?,
        })
    }
}

#[derive(Debug, Default, Args)]
pub struct RobotArgs {
    #[arg(long, env = "SENTINEL_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Server robot listener, host:port.
    #[arg(long)]
    pub server: Option<String>,
    /// Robot private key file.
    #[arg(long)]
    pub identity: Option<PathBuf>,
    /// The server's public key file (pinned).
    #[arg(long)]
    pub server_key: Option<PathBuf>,
    #[arg(long)]
    pub tick_rate: Option<f64>,
    #[arg(long)]
    pub journal: Option<PathBuf>,
    #[arg(long)]
    pub journal_capacity_bytes: Option<usize>,
    #[arg(long)]
    pub journal_durable: Option<bool>,
    #[arg(long)]
    pub max_ticks: Option<u64>,
    #[arg(long)]
    pub drain_timeout_ms: Option<u64>,
    #[arg(long)]
    pub backoff_initial_ms: Option<u64>,
    #[arg(long)]
    pub backoff_max_ms: Option<u64>,
    #[arg(long)]
    pub handshake_timeout_ms: Option<u64>,
    #[arg(long)]
    pub status_interval_ticks: Option<u64>,
    #[arg(long)]
    pub pixel_threshold: Option<u8>,
    #[arg(long)]
    pub area_fraction: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub warmup_frames: Option<u64>,
    #[arg(long)]
    pub pre_roll: Option<usize>,
    #[arg(long)]
    pub post_roll: Option<usize>,
    #[arg(long)]
    pub smoke_threshold_ppm: Option<f64>,
    #[arg(long)]
    pub temperature_threshold_c: Option<f64>,
    #[arg(long)]
    pub debounce_ticks: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotSettings {
    pub robot: RobotConfig,
    pub scenario: PathBuf,
    pub identity: PathBuf,
    pub server_key: PathBuf,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RobotArgs {
    pub fn resolve(self) -> Result<RobotSettings, CliError> {
        let file = FileConfig::load_optional(self.config.as_deref())?;
        let mut r = file.robot;
        set(&mut r.server_addr, self.server);
        set(&mut r.tick_rate_hz, self.tick_rate);
        if self.journal.is_some() {
            r.journal_path = self.journal;
        }
        set(&mut r.journal_capacity_bytes, self.journal_capacity_bytes);
        set(&mut r.journal_durable, self.journal_durable);
        if self.max_ticks.is_some() {
            r.max_ticks = self.max_ticks;
        }
        set(&mut r.drain_timeout_ms, self.drain_timeout_ms);
        set(&mut r.backoff_initial_ms, self.backoff_initial_ms);
        set(&mut r.backoff_max_ms, self.backoff_max_ms);
        set(&mut r.handshake_timeout_ms, self.handshake_timeout_ms);
        let a = &mut r.agent;
        set(&mut a.status_interval_ticks, self.status_interval_ticks);
        set(&mut a.detector.pixel_threshold, self.pixel_threshold);
        set(&mut a.detector.area_fraction, self.area_fraction);
        set(&mut a.detector.learning_rate, self.learning_rate);
        set(&mut a.detector.warmup_frames, self.warmup_frames);
        set(&mut a.detector.pre_roll, self.pre_roll);
        set(&mut a.detector.post_roll, self.post_roll);
        set(&mut a.fire.smoke_threshold_ppm, self.smoke_threshold_ppm);
        set(&mut a.fire.temperature_threshold_c, self.temperature_threshold_c);
        set(&mut a.fire.debounce_ticks, self.debounce_ticks);
        r.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(RobotSettings {
            robot: r,
            scenario: required(self.scenario.or(file.scenario), "--scenario")?,
            identity: required(self.identity.or(file.robot_identity), "--identity")?,
            server_key: required(self.server_key.or(file.server_public_key), "--server-key")?,
        })
    }
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    /// Path prefix; writes `<out>.key` (private) and `<out>.pub`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing key files.
    #[arg(long)]
    pub force: bool,
    /// Also append the public key to this allowlist file.
    #[arg(long)]
    pub append_to: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Server base URL; overrides the script's `base_url`.
    #[arg(long)]
    pub url: Option<String>,
    /// Script file, or `-` for stdin.
    pub script: PathBuf,
}
