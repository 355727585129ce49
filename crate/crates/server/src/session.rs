//! One robot connection: handshake, then a read/ingest/reply loop that also
//! forwards operator commands.

use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::io::{AsyncRead, AsyncWrite};
use tokio::sync::mpsc;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use sentinel_core::secure::framing::{read_frame, write_frame};
use sentinel_core::secure::{server_handshake, MsgType, Sealer};

use crate::state::AppState;

async fn send<W: AsyncWrite + Unpin>(
    writer: &mut W,
    sealer: &mut Sealer,
    msg_type: MsgType,
    payload: &[u8],
) -> Result<(), String> {
    let bytes = sealer.seal(payload, msg_type).map_err(|e| e.to_string())?;
    write_frame(writer, &bytes).await.map_err(|e| e.to_string())
}

pub async fn handle_robot_connection<S>(state: Arc<AppState>, mut stream: S, shutdown: CancellationToken)
where
    S: AsyncRead + AsyncWrite + Unpin + Send,
{
    let timeout = Duration::from_millis(state.cfg.handshake_timeout_ms);
    let session = match server_handshake(
        &mut stream,
        state.identity.clone(),
        &state.allowlist,
        state.policy.clone(),
        timeout,
    )
    .await
    {
        Ok(s) => s,
        Err(e) => {
            warn!(error = %e, "robot handshake rejected");
            return;
        }
    };
    let robot_id = session.peer_id;
    let (mut sealer, mut opener) = session.split();
    // commands and replies share one outbound queue drained by the writer
    let (tx, mut outbound) = mpsc::channel::<(MsgType, Vec<u8>)>(AppState::session_queue_capacity());
    let evicted = CancellationToken::new();
    let generation = state.attach_session(robot_id, tx.clone(), evicted.clone());
    info!(%robot_id, "robot session established");

    let (mut reader, mut writer) = tokio::io::split(stream);
    let writing = async {
        while let Some((msg_type, payload)) = outbound.recv().await {
            send(&mut writer, &mut sealer, msg_type, &payload).await?;
        }
        Ok::<(), String>(())
    };
    let reading = async {
        let mut faults = 0u32;
        loop {
            let bytes = match read_frame(&mut reader).await {
                Ok(Some(b)) => b,
                Ok(None) => return "robot closed the connection".to_string(),
                Err(e) => return format!("read failed: {e}"),
            };
            let started = Instant::now();
            let opened = match opener.open(&bytes) {
                Ok(o) => o,
                Err(e) => {
                    faults += 1;
                    warn!(%robot_id, error = %e, code = e.code(), faults, "envelope rejected");
                    if faults >= state.cfg.max_consecutive_faults {
                        return "too many consecutive faults".to_string();
                    }
                    continue;
                }
            };
            faults = 0;
            let replies = state.ingest(robot_id, opened);
            state.metrics.record(started.elapsed());
            for reply in replies {
                if tx.send(reply).await.is_err() {
                    return "writer gone".to_string();
                }
            }
        }
    };
    let reason = tokio::select! {
        _ = evicted.cancelled() => "replaced by newer session".to_string(),
        _ = shutdown.cancelled() => "server shutting down".to_string(),
        r = reading => r,
        w = writing => match w {
            Ok(()) => "outbound queue closed".to_string(),
            Err(e) => format!("write failed: {e}"),
        },
    };
    debug!(%robot_id, %reason, "session loop ended");
    state.detach_session(robot_id, generation);
    info!(%robot_id, %reason, "robot session closed");
}
