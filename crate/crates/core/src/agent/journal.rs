//! Durable store-and-forward queue for records awaiting a server ACK.
//!
//! File layout, repeated: u32-BE length | u64-BE seq | u8 kind | payload,
//! where length counts the seq, kind and payload bytes. A torn record at
//! the tail (crash mid-append) is dropped on load.
//!
//! Sequence numbers must never repeat, even after every record has been
//! acknowledged and the file is empty, because the server deduplicates on
//! them. A sidecar file `<journal>.seq` holds a reserved upper bound that is
//! bumped in blocks.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::secure::MsgType;

const RECORD_OVERHEAD: usize = 4 + 8 + 1;
const SEQ_BLOCK: u64 = 1024;
pub const DEFAULT_CAPACITY: usize = 64 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RecordKind {
    Status = 0x04,
    FireAlert = 0x06,
    MotionEvent = 0x07,
    ClipUpload = 0x08,
}

impl RecordKind {
    pub fn msg_type(self) -> MsgType {
        match self {
            RecordKind::Status => MsgType::Status,
            RecordKind::FireAlert => MsgType::FireAlert,
            RecordKind::MotionEvent => MsgType::MotionEvent,
            RecordKind::ClipUpload => MsgType::ClipUpload,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [RecordKind::Status, RecordKind::FireAlert, RecordKind::MotionEvent, RecordKind::ClipUpload]
            .into_iter()
            .find(|k| *k as u8 == code)
    }

    /// Alerts are never evicted to make room.
    pub fn is_alert(self) -> bool {
        matches!(self, RecordKind::FireAlert | RecordKind::MotionEvent)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JournalRecord {
    pub seq: u64,
    pub kind: RecordKind,
    pub payload: Vec<u8>,
}

impl JournalRecord {
    fn encoded_len(&self) -> usize {
        RECORD_OVERHEAD + self.payload.len()
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&((9 + self.payload.len()) as u32).to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.payload);
    }
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal full: record of {needed} bytes does not fit in {capacity}")]
    StorageFull { needed: usize, capacity: usize },
    #[error("journal i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Parses as many whole records as `bytes` holds. Returns them with the
/// length of the valid prefix.
pub fn parse_records(bytes: &[u8]) -> (Vec<JournalRecord>, usize) {
    let mut records = Vec::new();
    let mut at = 0;
    while bytes.len() - at >= 4 {
        let len = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if len < 9 || bytes.len() - at - 4 < len {
            break;
        }
        let body = &bytes[at + 4..at + 4 + len];
        let Some(kind) = RecordKind::from_code(body[8]) else { break };
        records.push(JournalRecord {
            seq: u64::from_be_bytes(body[..8].try_into().unwrap()),
            kind,
            payload: body[9..].to_vec(),
        });
        at += 4 + len;
    }
    (records, at)
}

#[derive(Debug)]
struct Backing {
    path: PathBuf,
    file: File,
    durable: bool,
}

#[derive(Debug)]
pub struct BackupJournal {
    backing: Option<Backing>,
    records: VecDeque<JournalRecord>,
    bytes: usize,
    capacity: usize,
    next_seq: u64,
    reserved: u64,
    dirty: bool,
    evicted: u64,
}

fn seq_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".seq");
    PathBuf::from(name)
}

impl BackupJournal {
    /// A journal that lives only in memory; used by simulations and tests.
    pub fn in_memory(capacity: usize) -> Self {
        Self::in_memory_from(capacity, 1)
    }

    /// In-memory journal whose first record gets `first_seq`.
    pub fn in_memory_from(capacity: usize, first_seq: u64) -> Self {
        Self {
            backing: None,
            records: VecDeque::new(),
            bytes: 0,
            capacity,
            next_seq: first_seq.max(1),
            reserved: u64::MAX,
            dirty: false,
            evicted: 0,
        }
    }

    /// Opens or creates the journal at `path`, reloading surviving records.
    /// With `durable` every append is synced to disk before returning.
    pub fn open(path: &Path, capacity: usize, durable: bool) -> Result<Self, JournalError> {
        let io_err = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(e)),
        };
        let (records, valid) = parse_records(&bytes);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        if valid < bytes.len() {
            file.set_len(valid as u64).map_err(io_err)?;
        }
        let sidecar = match fs::read_to_string(seq_path(path)) {
            Ok(text) => text.trim().parse::<u64>().unwrap_or(1),
            Err(e) if e.kind() == io::ErrorKind::NotFound => 1,
            Err(e) => return Err(io_err(e)),
        };
        let after_last = records.last().map_or(1, |r| r.seq + 1);
        let next_seq = sidecar.max(after_last).max(1);
        Ok(Self {
            bytes: records.iter().map(JournalRecord::encoded_len).sum(),
            records: records.into(),
            backing: Some(Backing {
                path: path.to_path_buf(),
                file,
                durable,
            }),
            capacity,
            next_seq,
            reserved: next_seq,
            dirty: false,
            evicted: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn records(&self) -> impl Iterator<Item = &JournalRecord> {
        self.records.iter()
    }

    /// Records with a seq greater than `cursor`, oldest first.
    pub fn after(&self, cursor: u64) -> impl Iterator<Item = &JournalRecord> {
        self.records.iter().filter(move |r| r.seq > cursor)
    }

    fn io_err(&self, source: io::Error) -> JournalError {
        JournalError::Io {
            path: self.backing.as_ref().map(|b| b.path.clone()).unwrap_or_default(),
            source,
        }
    }

    fn oldest_of(&self, kind: RecordKind) -> Option<usize> {
        self.records.iter().position(|r| r.kind == kind)
    }

    fn make_room(&mut self, needed: usize, kind: RecordKind) -> Result<(), JournalError> {
        if self.bytes + needed <= self.capacity {
            return Ok(());
        }
        let evictable: usize = self
            .records
            .iter()
            .filter(|r| !r.kind.is_alert())
            .map(JournalRecord::encoded_len)
            .sum();
        if !kind.is_alert() && self.bytes - evictable + needed > self.capacity {
            return Err(JournalError::StorageFull {
                needed,
                capacity: self.capacity,
            });
        }
        while self.bytes + needed > self.capacity {
            let Some(idx) = self
                .oldest_of(RecordKind::ClipUpload)
                .or_else(|| self.oldest_of(RecordKind::Status))
            else {
                // only alerts remain; they are kept even past capacity
                break;
            };
            let gone = self.records.remove(idx).expect("index in range");
            self.bytes -= gone.encoded_len();
            self.evicted += 1;
            self.dirty = true;
        }
        self.compact()
    }

    fn reserve(&mut self, seq: u64) -> Result<(), JournalError> {
        if seq < self.reserved {
            return Ok(());
        }
        let Some(backing) = &self.backing else { return Ok(()) };
        let upto = seq + SEQ_BLOCK;
        let path = seq_path(&backing.path);
        let tmp = path.with_extension("seq.tmp");
        let durable = backing.durable;
        let write = || -> io::Result<()> {
            let mut f = File::create(&tmp)?;
            writeln!(f, "{upto}")?;
            if durable {
                f.sync_all()?;
            }
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| self.io_err(e))?;
        self.reserved = upto;
        Ok(())
    }

    /// Appends a record whose payload may embed its own seq. The record is
    /// on disk (synced, if durable) when this returns.
    pub fn append_with(
        &mut self,
        kind: RecordKind,
        payload: impl FnOnce(u64) -> Vec<u8>,
    ) -> Result<u64, JournalError> {
        let seq = self.next_seq;
        let record = JournalRecord {
            seq,
            kind,
            payload: payload(seq),
        };
        let needed = record.encoded_len();
        self.make_room(needed, kind)?;
        self.reserve(seq)?;
        if let Some(backing) = self.backing.as_mut() {
            let mut buf = Vec::with_capacity(needed);
            record.encode_into(&mut buf);
            let res = backing
                .file
                .write_all(&buf)
                .and_then(|_| if backing.durable { backing.file.sync_data() } else { Ok(()) });
            res.map_err(|e| self.io_err(e))?;
        }
        self.bytes += needed;
        self.records.push_back(record);
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn append(&mut self, kind: RecordKind, payload: Vec<u8>) -> Result<u64, JournalError> {
        self.append_with(kind, |_| payload)
    }

    /// Drops an acknowledged record. The file is rewritten lazily by
    /// [`compact`](Self::compact); until then a crash only causes a resend.
    pub fn acknowledge(&mut self, seq: u64) -> bool {
        let Some(idx) = self.records.iter().position(|r| r.seq == seq) else {
            return false;
        };
        let gone = self.records.remove(idx).expect("index in range");
        self.bytes -= gone.encoded_len();
        self.dirty = true;
        true
    }

    /// Rewrites the backing file to hold exactly the live records.
    pub fn compact(&mut self) -> Result<(), JournalError> {
        if !self.dirty {
            return Ok(());
        }
        let Some(backing) = &self.backing else {
            self.dirty = false;
            return Ok(());
        };
        let path = backing.path.clone();
        let durable = backing.durable;
        let tmp = path.with_extension("tmp");
        let mut buf = Vec::with_capacity(self.bytes);
        for r in &self.records {
            r.encode_into(&mut buf);
        }
        let rewrite = || -> io::Result<File> {
            let mut f = File::create(&tmp)?;
            f.write_all(&buf)?;
            if durable {
                f.sync_all()?;
            }
            fs::rename(&tmp, &path)?;
            OpenOptions::new().append(true).open(&path)
        };
        let file = rewrite().map_err(|e| self.io_err(e))?;
        self.backing.as_mut().expect("backed journal").file = file;
        self.dirty = false;
        Ok(())
    }
}
