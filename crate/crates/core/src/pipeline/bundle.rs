//! Model bundle files.
//!
//! Layout: `FPRB`, format version (u32 LE), payload length (u64 LE), CBOR
//! payload, SHA-256 of the payload.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::TaskModel;
use super::task::Task;
use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: [u8; 4] = *b"FPRB";
pub const BUNDLE_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8;
const DIGEST_LEN: usize = 32;

/// Trained heads, at most one per task, kept in task order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    models: Vec<TaskModel>,
}

impl Bundle {
    pub fn new(models: impl IntoIterator<Item = TaskModel>) -> Self {
        let mut b = Bundle::default();
        for m in models {
            b.insert(m);
        }
        b
    }

    /// Adds a head, replacing any head for the same task.
    pub fn insert(&mut self, model: TaskModel) {
        match self.models.binary_search_by_key(&model.task, |m| m.task) {
            Ok(i) => self.models[i] = model,
            Err(i) => self.models.insert(i, model),
        }
    }

    pub fn get(&self, task: Task) -> Option<&TaskModel> {
        self.models.iter().find(|m| m.task == task)
    }

    pub fn models(&self) -> &[TaskModel] {
        &self.models
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.models.iter().map(|m| m.task).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        ciborium::into_writer(self, &mut payload).map_err(|e| Error::Bundle(format!("encoding failed: {e}")))?;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
        out.extend_from_slice(&BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != BUNDLE_MAGIC {
            return Err(Error::Bundle("not a model bundle (bad magic bytes)".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Bundle("file is truncated inside the header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != BUNDLE_VERSION {
            return Err(Error::BundleVersion {
                expected: BUNDLE_VERSION,
                found: version,
            });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let expected_total = (HEADER_LEN as u64)
            .checked_add(len)
            .and_then(|n| n.checked_add(DIGEST_LEN as u64));
        match expected_total {
            Some(total) if total == bytes.len() as u64 => {}
            Some(total) if total > bytes.len() as u64 => {
                return Err(Error::Bundle(format!(
                    "file is truncated: {} of {total} bytes present",
                    bytes.len()
                )))
            }
            _ => return Err(Error::Bundle("trailing bytes after the checksum".into())),
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + len as usize];
        let digest = &bytes[HEADER_LEN + len as usize..];
        if Sha256::digest(payload).as_slice() != digest {
            return Err(Error::Bundle("checksum mismatch; the file is corrupt".into()));
        }
        let bundle: Bundle =
            ciborium::from_reader(payload).map_err(|e| Error::Bundle(format!("malformed payload: {e}")))?;
        for m in &bundle.models {
            m.validate()?;
        }
        if bundle.models.windows(2).any(|w| w[0].task >= w[1].task) {
            return Err(Error::Bundle("heads are duplicated or out of order".into()));
        }
        Ok(bundle)
    }
}

/// Writes a bundle via a temporary file in the target directory, so a
/// failed write never leaves a partial model behind.
pub fn save_models(path: impl AsRef<Path>, bundle: &Bundle) -> Result<()> {
    let path = path.as_ref();
    let bytes = bundle.encode()?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_models(path: impl AsRef<Path>) -> Result<Bundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Bundle::decode(&bytes)
}

/// Loads the head for `task`, failing with a task mismatch when the
/// bundle only holds other tasks.
pub fn load_task_model(path: impl AsRef<Path>, task: Task) -> Result<TaskModel> {
    let bundle = load_models(path)?;
    bundle.get(task).cloned().ok_or_else(|| Error::TaskMismatch {
        expected: task.to_string(),
        found: bundle
            .tasks()
            .into_iter()
            .map(Task::token)
            .collect::<Vec<_>>()
            .join(", "),
    })
}
