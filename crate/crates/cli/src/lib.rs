//! The `sentinel` command: serve, robot, keygen and client.

pub mod client;
pub mod config;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use thiserror::Error;
use tracing::info;

use sentinel_core::secure::keys::{
    read_allowlist, read_private_key, read_public_key, write_private_key, write_public_key,
};
use sentinel_core::secure::StaticIdentity;
use sentinel_core::world::Scenario;
use sentinel_robot::{spawn_agent, RobotSetup, TcpConnector};

use crate::client::{run_script, Script};
use crate::config::{ClientArgs, KeygenArgs, RobotSettings, ServeSettings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for usage or configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Line-delimited JSON logs on stderr; level from `SENTINEL_LOG`.
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("SENTINEL_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        if let Ok(mut term) = signal(SignalKind::terminate()) {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            return;
        }
    }
    let _ = tokio::signal::ctrl_c().await;
}

pub async fn serve(settings: ServeSettings) -> Result<(), CliError> {
    let identity = read_private_key(&settings.identity).map_err(usage)?;
    let allowlist = read_allowlist(&settings.allowlist).map_err(usage)?;
    let handle = sentinel_server::start(settings.server, Arc::new(identity), allowlist)
        .await
        .map_err(|e| match e {
            sentinel_server::ServerError::Config(_) => usage(e),
            other => CliError::Runtime(other.to_string()),
        })?;
    let cancel = handle.cancel_token();
    tokio::select! {
        _ = shutdown_signal() => info!("shutting down"),
        _ = cancel.cancelled() => {}
    }
    handle.shutdown().await;
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read scenario {}: {e}", path.display())))?;
    Scenario::parse(&text).map_err(|e| usage(format!("scenario {}: {e}", path.display())))
}

/// Runs a robot until a signal, or until `max_ticks` and the journal drain.
/// Prints the final agent snapshot as JSON on stdout.
pub async fn robot(settings: RobotSettings) -> Result<(), CliError> {
    let scenario = load_scenario(&settings.scenario)?;
    let (world, pose) = scenario.build().map_err(usage)?;
    let identity = Arc::new(read_private_key(&settings.identity).map_err(usage)?);
    let server_key = read_public_key(&settings.server_key).map_err(usage)?;
    info!(robot_id = %identity.id(), server = %settings.robot.server_addr, "robot starting");
    let connector = TcpConnector::new(settings.robot.server_addr.clone());
    let setup = RobotSetup {
        world,
        pose,
        identity,
        server_key,
    };
    let mut handle = spawn_agent(setup, connector, settings.robot);
    let finished = tokio::select! {
        r = &mut handle.join => Some(r),
        _ = shutdown_signal() => None,
    };
    let result = match finished {
        Some(r) => r.map_err(|e| CliError::Runtime(format!("agent task failed: {e}")))?,
        None => handle.stop().await,
    };
    let snapshot = result.map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{}", serde_json::to_string(&snapshot).expect("snapshot serializes"));
    Ok(())
}

pub fn key_paths(out: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut p = out.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    (with(".key"), with(".pub"))
}

/// Writes `<out>.key` and `<out>.pub`; returns the summary printed on stdout.
pub fn keygen(args: &KeygenArgs) -> Result<serde_json::Value, CliError> {
    let (private, public) = key_paths(&args.out);
    if !args.force {
        for p in [&private, &public] {
            if p.exists() {
                return Err(usage(format!("{} exists; pass --force to overwrite", p.display())));
            }
        }
    }
    let identity = StaticIdentity::generate(None).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_private_key(&private, &identity, args.force).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_public_key(&public, identity.verifying_key(), args.force).map_err(|e| CliError::Runtime(e.to_string()))?;
    let public_hex = hex::encode(identity.public_bytes());
    if let Some(list) = &args.append_to {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(list)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", list.display())))?;
        writeln!(f, "{public_hex}").map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(json!({
        "id": identity.id(),
        "public_key": public_hex,
        "private_key_file": private,
        "public_key_file": public,
    }))
}

/// Runs a client script; prints the transcript and fails if any step did.
pub async fn client(args: &ClientArgs) -> Result<(), CliError> {
    let text = if args.script.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin()).map_err(usage)?
    } else {
        std::fs::read_to_string(&args.script)
            .map_err(|e| usage(format!("cannot read script {}: {e}", args.script.display())))?
    };
    let script = Script::parse(&text)?;
    let transcript = run_script(&script, args.url.as_deref()).await?;
    println!("{}", serde_json::to_string_pretty(&transcript).expect("transcript serializes"));
    if transcript.ok {
        Ok(())
    } else {
        let failed = transcript.steps.last().map(|s| s.index).unwrap_or(0);
        Err(CliError::Runtime(format!("script failed at step {failed}")))
    }
}
