//! Reading and writing length-prefixed envelope frames on a byte stream.

use std::io;

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::envelope::{LENGTH_PREFIX, MAX_FRAME_LEN};

/// Reads one whole frame, length prefix included. `Ok(None)` means the
/// peer closed the stream cleanly between frames.
pub async fn read_frame<R: AsyncRead + Unpin>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; LENGTH_PREFIX];
    match reader.read_exact(&mut prefix).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit {MAX_FRAME_LEN}"),
        ));
    }
    let mut frame = vec![0u8; LENGTH_PREFIX + len];
    frame[..LENGTH_PREFIX].copy_from_slice(&prefix);
    reader.read_exact(&mut frame[LENGTH_PREFIX..]).await?;
    Ok(Some(frame))
}

pub async fn write_frame<W: AsyncWrite + Unpin>(writer: &mut W, frame: &[u8]) -> io::Result<()> {
    writer.write_all(frame).await?;
    writer.flush().await
}
