//! File-backed event log and content-addressed clip store.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Motion,
    Fire,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: Uuid,
    pub robot_id: Uuid,
    pub kind: EventKind,
    /// Server receive time, unix ms.
    pub timestamp_ms: u64,
    pub journal_seq: u64,
    /// The robot's alert body (sensor values or bounding box).
    pub details: serde_json::Value,
    pub clip_id: Option<String>,
    pub stream_link: String,
}

pub fn stream_link(robot_id: Uuid) -> String {
    format!("/api/robots/{robot_id}/stream")
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
enum LogEntry {
    Event(EventRecord),
    ClipLink { event_id: Uuid, clip_id: String },
}

fn append_line<T: Serialize>(file: &mut File, value: &T, fsync: bool) -> io::Result<()> {
    let mut line = serde_json::to_vec(value).expect("log entry serializes");
    line.push(b'\n');
    file.write_all(&line)?;
    if fsync {
        file.sync_data()?;
    }
    Ok(())
}

/// Reads JSON lines, skipping blank lines and a torn trailing record.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(v) = serde_json::from_str(&line) {
            out.push(v);
        }
    }
    Ok(out)
}

fn open_append(path: &Path) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

pub struct EventStore {
    file: Option<File>,
    fsync: bool,
    events: Vec<EventRecord>,
    by_id: HashMap<Uuid, usize>,
}

impl EventStore {
    pub fn open(path: Option<&Path>, fsync: bool) -> io::Result<Self> {
        let mut store = Self {
            file: None,
            fsync,
            events: Vec::new(),
            by_id: HashMap::new(),
        };
        if let Some(path) = path {
            for entry in read_lines::<LogEntry>(path)? {
                match entry {
                    LogEntry::Event(e) => store.insert(e),
                    LogEntry::ClipLink { event_id, clip_id } => store.set_clip(event_id, clip_id),
                }
            }
            store.file = Some(open_append(path)?);
        }
        Ok(store)
    }

    fn insert(&mut self, event: EventRecord) {
        self.by_id.insert(event.event_id, self.events.len());
        self.events.push(event);
    }

    fn set_clip(&mut self, event_id: Uuid, clip_id: String) {
        if let Some(&i) = self.by_id.get(&event_id) {
            self.events[i].clip_id = Some(clip_id);
        }
    }

    pub fn append(&mut self, event: EventRecord) -> io::Result<()> {
        if let Some(file) = self.file.as_mut() {
            append_line(file, &LogEntry::Event(event.clone()), self.fsync)?;
        }
        self.insert(event);
        Ok(())
    }

    pub fn link_clip(&mut self, event_id: Uuid, clip_id: &str) -> io::Result<()> {
        if let Some(file) = self.file.as_mut() {
            let entry = LogEntry::ClipLink {
                event_id,
                clip_id: clip_id.to_string(),
            };
            append_line(file, &entry, self.fsync)?;
        }
        self.set_clip(event_id, clip_id.to_string());
        Ok(())
    }

    pub fn get(&self, event_id: Uuid) -> Option<&EventRecord> {
        self.by_id.get(&event_id).map(|&i| &self.events[i])
    }

    pub fn find(&self, robot_id: Uuid, journal_seq: u64) -> Option<&EventRecord> {
        self.events
            .iter()
            .rev()
            .find(|e| e.robot_id == robot_id && e.journal_seq == journal_seq)
    }

    pub fn all(&self) -> &[EventRecord] {
        &self.events
    }

    /// Newest first, filtered, then paged. Returns the page and the
    /// number of matching events.
    pub fn query(
        &self,
        kind: Option<EventKind>,
        robot: Option<Uuid>,
        page: usize,
        per_page: usize,
    ) -> (Vec<EventRecord>, usize) {
        let matching: Vec<&EventRecord> = self
            .events
            .iter()
            .rev()
            .filter(|e| kind.is_none_or(|k| e.kind == k) && robot.is_none_or(|r| e.robot_id == r))
            .collect();
        let total = matching.len();
        let page = matching
            .into_iter()
            .skip(page.saturating_mul(per_page))
            .take(per_page)
            .cloned()
            .collect();
        (page, total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    /// Lowercase hex SHA-256 of the container bytes.
    pub clip_id: String,
    pub robot_id: Uuid,
    pub event_id: Option<Uuid>,
    pub journal_seq: u64,
    pub frame_count: u32,
    pub first_frame_index: u64,
    pub size: usize,
}

pub fn is_clip_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

pub struct ClipStore {
    dir: Option<PathBuf>,
    index: Option<File>,
    fsync: bool,
    entries: HashMap<String, ClipEntry>,
    memory: HashMap<String, Vec<u8>>,
}

impl ClipStore {
    pub fn open(dir: Option<&Path>, fsync: bool) -> io::Result<Self> {
        let mut store = Self {
            dir: dir.map(Path::to_path_buf),
            index: None,
            fsync,
            entries: HashMap::new(),
            memory: HashMap::new(),
        };
        if let Some(dir) = dir {
            fs::create_dir_all(dir)?;
            let index = dir.join("index.jsonl");
            for entry in read_lines::<ClipEntry>(&index)? {
                // an index line whose file never made it to disk is ignored
                if is_clip_id(&entry.clip_id) && store.file_for(&entry.clip_id).is_some_and(|p| p.exists()) {
                    store.entries.insert(entry.clip_id.clone(), entry);
                }
            }
            store.index = Some(open_append(&index)?);
        }
        Ok(store)
    }

    fn file_for(&self, clip_id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{clip_id}.svc1")))
    }

    pub fn contains(&self, clip_id: &str) -> bool {
        self.entries.contains_key(clip_id)
    }

    pub fn entry(&self, clip_id: &str) -> Option<&ClipEntry> {
        self.entries.get(clip_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ClipEntry> {
        self.entries.values()
    }

    /// Stores `bytes` under their digest. The file is complete on disk
    /// before its index line is written; an existing clip is left untouched.
    pub fn put(&mut self, bytes: &[u8], entry: ClipEntry) -> io::Result<()> {
        debug_assert!(is_clip_id(&entry.clip_id));
        if self.entries.contains_key(&entry.clip_id) {
            return Ok(());
        }
        match self.file_for(&entry.clip_id) {
            Some(path) => {
                if !path.exists() {
                    let tmp = path.with_extension("tmp");
                    let mut f = File::create(&tmp)?;
                    f.write_all(bytes)?;
                    if self.fsync {
                        f.sync_all()?;
                    }
                    fs::rename(&tmp, &path)?;
                }
                append_line(self.index.as_mut().expect("index open"), &entry, self.fsync)?;
            }
            None => {
                self.memory.insert(entry.clip_id.clone(), bytes.to_vec());
            }
        }
        self.entries.insert(entry.clip_id.clone(), entry);
        Ok(())
    }

    pub fn get(&self, clip_id: &str) -> io::Result<Option<Vec<u8>>> {
        if !self.entries.contains_key(clip_id) {
            return Ok(None);
        }
        match self.file_for(clip_id) {
            Some(path) => fs::read(path).map(Some),
            None => Ok(self.memory.get(clip_id).cloned()),
        }
    }
}
