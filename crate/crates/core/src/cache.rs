//! The external cache of prior edits: a persistent, append-ordered store
//! indexable by camera trajectory (novel-view task) or by source-segment
//! descriptor (text-edit task).
//!
//! On disk a cache is a directory:
//!
//! ```text
//! root/
//!   manifest.jsonl        # header line + one JSON record per entry
//!   keys/<entry_id>.traj  # trajectory key (text format)
//!   keys/<entry_id>.emb   # or embedding key (binary format)
//!   payloads/<entry_id>.bin
//! ```
//!
//! The manifest is rewritten atomically (temp file + rename) on every
//! insert, so readers never observe a partially written state. Latent
//! payloads are opaque: only their shape metadata participates in
//! budgeting.

use crate::camera::CameraTrajectory;
use crate::feat::{read_embedding, write_embedding, SegmentDescriptor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

/// Current manifest format version.
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} at byte {offset}: {reason}")]
    ManifestParse { path: PathBuf, offset: usize, reason: String },
    #[error("manifest invariant violated: {0}")]
    ManifestInvariant(String),
    #[error("task mismatch: cache holds {cache:?} entries, tried to insert {entry:?}")]
    TaskMismatch { cache: Task, entry: Task },
    #[error("entry {entry_id}: key variant does not match task {task:?}")]
    KeyMismatch { entry_id: u64, task: Task },
    #[error("invalid latent shape {0}")]
    InvalidShape(String),
    #[error("entry {entry_id} key file: {reason}")]
    KeyFile { entry_id: u64, reason: String },
    #[error("cache already exists at {0}")]
    AlreadyExists(PathBuf),
}

fn io_err(path: &Path, source: io::Error) -> CacheError {
    CacheError::Io { path: path.to_path_buf(), source }
}

/// Editing task a cache serves; entries of one cache are homogeneous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NovelView,
    TextEdit,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::NovelView => write!(f, "novel_view"),
            Task::TextEdit => write!(f, "text_edit"),
        }
    }
}

/// Shape metadata of a latent video (frames, height, width, channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl LatentShape {
    pub fn new(frames: u32, height: u32, width: u32, channels: u32) -> Result<Self, CacheError> {
        let shape = Self { frames, height, width, channels };
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(CacheError::InvalidShape(shape.to_string()));
        }
        Ok(shape)
    }
}

impl fmt::Display for LatentShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.frames, self.height, self.width, self.channels)
    }
}

/// Retrieval key of a cached entry, matching its task.
#[derive(Debug, Clone, PartialEq)]
pub enum RetrievalKey {
    Trajectory(CameraTrajectory),
    Descriptor(SegmentDescriptor),
}

/// Key material supplied at insert time. Embeddings are provided per frame;
/// the descriptor is derived and the raw frames are persisted as the key
/// file.
#[derive(Debug, Clone)]
pub enum KeySource {
    Trajectory(CameraTrajectory),
    Embedding(Vec<Vec<f32>>),
}

/// One prior edit: shape metadata, retrieval key, optional opaque payload.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub entry_id: u64,
    pub task: Task,
    pub latent_shape: LatentShape,
    pub key: RetrievalKey,
    pub payload_ref: Option<String>,
    pub created_seq: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    manifest_version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    entry_id: u64,
    task: Task,
    latent_shape: LatentShape,
    key_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload_ref: Option<String>,
    created_seq: u64,
}

/// Immutable view of cache contents; cheap to clone and safe to share across
/// threads while the cache keeps accepting inserts.
#[derive(Debug, Clone)]
pub struct CacheSnapshot {
    entries: Arc<Vec<CacheEntry>>,
}

impl CacheSnapshot {
    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, entry_id: u64) -> Option<&CacheEntry> {
        self.entries.iter().find(|e| e.entry_id == entry_id)
    }

    /// Task of the entries, or `None` for an empty cache.
    pub fn task(&self) -> Option<Task> {
        self.entries.first().map(|e| e.task)
    }
}

type PreCommitHook = Box<dyn FnMut() -> io::Result<()> + Send>;

/// Files removed by [`Cache::gc`].
#[derive(Debug, Default)]
pub struct GcReport {
    pub removed: Vec<PathBuf>,
}

/// Single-writer, many-reader persistent cache.
pub struct Cache {
    root: PathBuf,
    manifest_version: u32,
    entries: Arc<Vec<CacheEntry>>,
    pre_commit_hook: Option<PreCommitHook>,
}

impl fmt::Debug for Cache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cache")
            .field("root", &self.root)
            .field("manifest_version", &self.manifest_version)
            .field("entries", &self.entries.len())
            .finish()
    }
}

impl Cache {
    /// Initializes an empty cache directory; fails if a manifest already
    /// exists there.
    pub fn create(root: &Path) -> Result<Self, CacheError> {
        let manifest = root.join("manifest.jsonl");
        if manifest.exists() {
            return Err(CacheError::AlreadyExists(root.to_path_buf()));
        }
        std::fs::create_dir_all(root.join("keys")).map_err(|e| io_err(root, e))?;
        std::fs::create_dir_all(root.join("payloads")).map_err(|e| io_err(root, e))?;
        let mut cache = Self {
            root: root.to_path_buf(),
            manifest_version: MANIFEST_VERSION,
            entries: Arc::new(Vec::new()),
            pre_commit_hook: None,
        };
        cache.persist_manifest(&cache.entries.clone())?;
        Ok(cache)
    }

    /// Loads a cache from its root directory. Unknown record fields are
    /// ignored for forward compatibility; a corrupt manifest reports the
    /// byte offset of the failure and yields no partial cache.
    pub fn load(root: &Path) -> Result<Self, CacheError> {
        let manifest_path = root.join("manifest.jsonl");
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;

        let mut entries = Vec::new();
        let mut header: Option<ManifestHeader> = None;
        let mut offset = 0usize;
        for line in text.split_inclusive('\n') {
            let line_start = offset;
            offset += line.len();
            let trimmed = line.trim_end_matches('\n').trim_end_matches('\r');
            if trimmed.is_empty() && offset == text.len() {
                break; // trailing newline
            }
            let parse_err = |e: &serde_json::Error| CacheError::ManifestParse {
                path: manifest_path.clone(),
                offset: line_start + e.column().saturating_sub(1),
                reason: e.to_string(),
            };
            match &header {
                None => {
                    let h: ManifestHeader = serde_json::from_str(trimmed).map_err(|e| parse_err(&e))?;
                    if h.manifest_version < 1 {
                        return Err(CacheError::ManifestParse {
                            path: manifest_path.clone(),
                            offset: line_start,
                            reason: format!("unsupported manifest_version {}", h.manifest_version),
                        });
                    }
                    header = Some(h);
                }
                Some(_) => {
                    let record: ManifestRecord = serde_json::from_str(trimmed).map_err(|e| parse_err(&e))?;
                    entries.push(Self::resolve_record(root, record)?);
                }
            }
        }
        let header = header.ok_or_else(|| CacheError::ManifestParse {
            path: manifest_path.clone(),
            offset: 0,
            reason: "missing manifest header".into(),
        })?;

        for pair in entries.windows(2) {
            if pair[1].created_seq <= pair[0].created_seq {
                return Err(CacheError::ManifestInvariant(format!(
                    "created_seq not strictly increasing: {} then {}",
                    pair[0].created_seq, pair[1].created_seq
                )));
            }
            if pair[1].task != pair[0].task {
                return Err(CacheError::ManifestInvariant("mixed tasks in one cache".into()));
            }
        }
        let mut ids: Vec<u64> = entries.iter().map(|e| e.entry_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != entries.len() {
            return Err(CacheError::ManifestInvariant("duplicate entry_id".into()));
        }

        Ok(Self {
            root: root.to_path_buf(),
            manifest_version: header.manifest_version,
            entries: Arc::new(entries),
            pre_commit_hook: None,
        })
    }

    fn resolve_record(root: &Path, record: ManifestRecord) -> Result<CacheEntry, CacheError> {
        LatentShape::new(
            record.latent_shape.frames,
            record.latent_shape.height,
            record.latent_shape.width,
            record.latent_shape.channels,
        )?;
        let key_path = root.join(&record.key_ref);
        let key = match key_path.extension().and_then(|e| e.to_str()) {
            Some("traj") => {
                if record.task != Task::NovelView {
                    return Err(CacheError::KeyMismatch { entry_id: record.entry_id, task: record.task });
                }
                let text = std::fs::read_to_string(&key_path).map_err(|e| io_err(&key_path, e))?;
                let traj = CameraTrajectory::from_text(&text, None).map_err(|e| CacheError::KeyFile {
                    entry_id: record.entry_id,
                    reason: e.to_string(),
                })?;
                RetrievalKey::Trajectory(traj)
            }
            Some("emb") => {
                if record.task != Task::TextEdit {
                    return Err(CacheError::KeyMismatch { entry_id: record.entry_id, task: record.task });
                }
                let bytes = std::fs::read(&key_path).map_err(|e| io_err(&key_path, e))?;
                let file = read_embedding(&bytes).map_err(|e| CacheError::KeyFile {
                    entry_id: record.entry_id,
                    reason: e.to_string(),
                })?;
                let desc = file.descriptor().map_err(|e| CacheError::KeyFile {
                    entry_id: record.entry_id,
                    reason: e.to_string(),
                })?;
                RetrievalKey::Descriptor(desc)
            }
            _ => {
                return Err(CacheError::KeyFile {
                    entry_id: record.entry_id,
                    reason: format!("unknown key file kind `{}`", record.key_ref),
                })
            }
        };
        Ok(CacheEntry {
            entry_id: record.entry_id,
            task: record.task,
            latent_shape: record.latent_shape,
            key,
            payload_ref: record.payload_ref,
            created_seq: record.created_seq,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_version(&self) -> u32 {
        self.manifest_version
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Immutable view unaffected by subsequent inserts.
    pub fn snapshot(&self) -> CacheSnapshot {
        CacheSnapshot { entries: Arc::clone(&self.entries) }
    }

    /// Fault-injection point for durability tests: runs after the temp
    /// manifest is written and before the rename that commits it.
    pub fn set_pre_commit_hook(&mut self, hook: Option<PreCommitHook>) {
        self.pre_commit_hook = hook;
    }

    /// Appends an entry: writes its key file (and payload, if any), then
    /// atomically rewrites the manifest. Assigns `entry_id = max + 1`.
    pub fn insert(
        &mut self,
        task: Task,
        latent_shape: LatentShape,
        key: KeySource,
        payload: Option<&[u8]>,
    ) -> Result<u64, CacheError> {
        if let Some(first) = self.entries.first() {
            if first.task != task {
                return Err(CacheError::TaskMismatch { cache: first.task, entry: task });
            }
        }
        match (&key, task) {
            (KeySource::Trajectory(_), Task::NovelView) | (KeySource::Embedding(_), Task::TextEdit) => {}
            _ => return Err(CacheError::KeyMismatch { entry_id: 0, task }),
        }
        let entry_id = self.entries.iter().map(|e| e.entry_id).max().unwrap_or(0) + 1;
        let created_seq = self.entries.iter().map(|e| e.created_seq).max().unwrap_or(0) + 1;

        let resolved_key = match key {
            KeySource::Trajectory(traj) => {
                let path = self.root.join(format!("keys/{entry_id}.traj"));
                std::fs::write(&path, traj.to_text()).map_err(|e| io_err(&path, e))?;
                RetrievalKey::Trajectory(traj)
            }
            KeySource::Embedding(frames) => {
                let path = self.root.join(format!("keys/{entry_id}.emb"));
                let bytes = write_embedding(&frames).map_err(|e| CacheError::KeyFile {
                    entry_id,
                    reason: e.to_string(),
                })?;
                std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
                let desc = crate::feat::descriptor(&frames).map_err(|e| CacheError::KeyFile {
                    entry_id,
                    reason: e.to_string(),
                })?;
                RetrievalKey::Descriptor(desc)
            }
        };

        let payload_ref = match payload {
            Some(bytes) => {
                let payload_ref = format!("payloads/{entry_id}.bin");
                let path = self.root.join(&payload_ref);
                std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
                Some(payload_ref)
            }
            None => None,
        };

        let mut entries: Vec<CacheEntry> = (*self.entries).clone();
        entries.push(CacheEntry {
            entry_id,
            task,
            latent_shape,
            key: resolved_key,
            payload_ref: payload_ref.clone(),
            created_seq,
        });
        let entries = Arc::new(entries);
        self.persist_manifest(&entries)?;
        self.entries = entries;
        Ok(entry_id)
    }

    fn persist_manifest(&mut self, entries: &Arc<Vec<CacheEntry>>) -> Result<(), CacheError> {
        let mut text = String::new();
        text.push_str(
            &serde_json::to_string(&ManifestHeader { manifest_version: self.manifest_version })
                .expect("header serializes"),
        );
        text.push('\n');
        for entry in entries.iter() {
            let key_ref = match entry.key {
                RetrievalKey::Trajectory(_) => format!("keys/{}.traj", entry.entry_id),
                RetrievalKey::Descriptor(_) => format!("keys/{}.emb", entry.entry_id),
            };
            let record = ManifestRecord {
                entry_id: entry.entry_id,
                task: entry.task,
                latent_shape: entry.latent_shape,
                key_ref,
                payload_ref: entry.payload_ref.clone(),
                created_seq: entry.created_seq,
            };
            text.push_str(&serde_json::to_string(&record).expect("record serializes"));
            text.push('\n');
        }

        let manifest_path = self.root.join("manifest.jsonl");
        let tmp_path = self.root.join("manifest.jsonl.tmp");
        std::fs::write(&tmp_path, text).map_err(|e| io_err(&tmp_path, e))?;
        if let Some(hook) = &mut self.pre_commit_hook {
            hook().map_err(|e| io_err(&tmp_path, e))?;
        }
        std::fs::rename(&tmp_path, &manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        Ok(())
    }

    /// Removes key and payload files not referenced by any entry.
    pub fn gc(&self) -> Result<GcReport, CacheError> {
        let mut referenced: Vec<PathBuf> = Vec::new();
        for entry in self.entries.iter() {
            let key_ref = match entry.key {
                RetrievalKey::Trajectory(_) => format!("keys/{}.traj", entry.entry_id),
                RetrievalKey::Descriptor(_) => format!("keys/{}.emb", entry.entry_id),
            };
            referenced.push(self.root.join(key_ref));
            if let Some(p) = &entry.payload_ref {
                referenced.push(self.root.join(p));
            }
        }
        let mut report = GcReport::default();
        for dir in ["keys", "payloads"] {
            let dir_path = self.root.join(dir);
            let iter = match std::fs::read_dir(&dir_path) {
                Ok(iter) => iter,
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(io_err(&dir_path, e)),
            };
            for item in iter {
                let item = item.map_err(|e| io_err(&dir_path, e))?;
                let path = item.path();
                if !referenced.contains(&path) {
                    std::fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
                    report.removed.push(path);
                }
            }
        }
        Ok(report)
    }
}
