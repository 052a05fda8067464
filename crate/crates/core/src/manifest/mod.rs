//! Dataset data model: sequences of frame files grouped by patient.
//!
//! A manifest is a UTF-8 file with one JSON record per line. An optional
//! first line `{"metadata": {...}}` carries free-form string pairs; every
//! other line describes one sequence:
//!
//! ```text
//! {"metadata":{"name":"han"}}
//! {"patient_id":"p01","sequence_id":"p01-s1","class_label":"tumor","frames":["p01/s1/0000.pgm"]}
//! ```
//!
//! Frame paths are stored as written. Relative paths resolve against the
//! directory holding the manifest. Blank lines are ignored.

mod frame;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frame::{load_frame, rec601_luma, Frame, FrameError};
pub use split::{make_lopo_splits, write_split_plans, SplitError, SplitPlan};

pub const MANIFEST_FILE_NAME: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("line {line}: duplicate sequence_id {sequence_id:?}")]
    DuplicateSequence { line: usize, sequence_id: String },
    #[error("sequence {sequence_id:?} has no frames")]
    EmptySequence { sequence_id: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Tumor,
    Healthy,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Tumor, ClassLabel::Healthy];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Tumor => "tumor",
            ClassLabel::Healthy => "healthy",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tumor" => Ok(ClassLabel::Tumor),
            "healthy" => Ok(ClassLabel::Healthy),
            other => Err(format!("unknown class label {other:?}")),
        }
    }
}

/// One acquisition: an ordered list of frame files from a single patient.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRecord {
    pub patient_id: String,
    pub sequence_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<ClassLabel>,
    pub frames: Vec<PathBuf>,
}

#[derive(Serialize)]
struct MetadataLine<'a> {
    metadata: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OwnedMetadataLine {
    metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub metadata: BTreeMap<String, String>,
    sequences: Vec<SequenceRecord>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest, checking id uniqueness and non-empty sequences.
    pub fn new(
        metadata: BTreeMap<String, String>,
        sequences: Vec<SequenceRecord>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self, ManifestError> {
        let mut seen = HashSet::new();
        for (i, seq) in sequences.iter().enumerate() {
            if seq.frames.is_empty() {
                return Err(ManifestError::EmptySequence {
                    sequence_id: seq.sequence_id.clone(),
                });
            }
            if !seen.insert(seq.sequence_id.as_str()) {
                return Err(ManifestError::DuplicateSequence {
                    line: i + 1,
                    sequence_id: seq.sequence_id.clone(),
                });
            }
        }
        Ok(Self {
            metadata,
            sequences,
            base_dir: base_dir.into(),
        })
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let mut metadata = None;
        let mut sequences: Vec<SequenceRecord> = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parse_err = |detail: String| ManifestError::Parse { line, detail };
            let value: serde_json::Value =
                serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
            if value.get("metadata").is_some() {
                if metadata.is_some() || !sequences.is_empty() {
                    return Err(parse_err(
                        "metadata must be the first record and appear once".into(),
                    ));
                }
                let meta: OwnedMetadataLine =
                    serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
                metadata = Some(meta.metadata);
                continue;
            }
            let record: SequenceRecord =
                serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            if record.frames.is_empty() {
                return Err(ManifestError::EmptySequence {
                    sequence_id: record.sequence_id,
                });
            }
            if !seen.insert(record.sequence_id.clone()) {
                return Err(ManifestError::DuplicateSequence {
                    line,
                    sequence_id: record.sequence_id,
                });
            }
            sequences.push(record);
        }
        Ok(Self {
            metadata: metadata.unwrap_or_default(),
            sequences,
            base_dir: base_dir.into(),
        })
    }

    /// Reads a manifest file. Frame files are not opened.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if !self.metadata.is_empty() {
            let line = MetadataLine {
                metadata: &self.metadata,
            };
            out.push_str(&serde_json::to_string(&line).expect("metadata serializes"));
            out.push('\n');
        }
        for seq in &self.sequences {
            out.push_str(&serde_json::to_string(seq).expect("sequence record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        std::fs::write(path, self.to_jsonl()).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn sequences(&self) -> &[SequenceRecord] {
        &self.sequences
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn sequence(&self, sequence_id: &str) -> Option<&SequenceRecord> {
        self.sequences.iter().find(|s| s.sequence_id == sequence_id)
    }

    /// Resolves a frame locator against the manifest directory.
    pub fn resolve(&self, frame: &Path) -> PathBuf {
        if frame.is_absolute() {
            frame.to_path_buf()
        } else {
            self.base_dir.join(frame)
        }
    }

    /// Distinct patient ids in sorted order.
    pub fn patients(&self) -> Vec<&str> {
        self.sequences
            .iter()
            .map(|s| s.patient_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }
}
