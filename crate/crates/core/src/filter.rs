//! Key-frame chaining over downscaled SSIM.
//!
//! Each sequence starts with frame 0 as the key. Every later frame is
//! compared against the current key; the first one scoring strictly below
//! `tau` is kept and becomes the next key. Comparisons are never made
//! against the previous frame, so slow drift accumulates against the key.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{downscale, ssim, ImagingError, ScaleFactor, SsimParams};
use crate::manifest::{
    load_frame, DatasetManifest, Frame, FrameError, ManifestError, SequenceRecord,
};

pub const DEFAULT_TAU: f64 = 0.411;
pub const REPORT_FILE_NAME: &str = "report.json";
pub const PER_SEQUENCE_FILE_NAME: &str = "per_sequence.csv";

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("sequence {sequence_id:?} has no frames")]
    EmptySequence { sequence_id: String },
    #[error(
        "sequence {sequence_id:?} frame {index}: dimensions {found:?} differ from {expected:?}"
    )]
    DimensionMismatch {
        sequence_id: String,
        index: usize,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("sequence {sequence_id:?} frame {index}: {source}")]
    Frame {
        sequence_id: String,
        index: usize,
        #[source]
        source: FrameError,
    },
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub tau: f64,
    pub scale: ScaleFactor,
    pub ssim: SsimParams,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            scale: ScaleFactor::DEFAULT,
            ssim: SsimParams::default(),
        }
    }
}

impl FilterConfig {
    pub fn with_tau(self, tau: f64) -> Self {
        Self { tau, ..self }
    }

    pub fn with_scale(self, scale: ScaleFactor) -> Self {
        Self { scale, ..self }
    }

    /// `tau` may lie outside [-1, 1]: below -1 keeps only the first
    /// frame, above 1 keeps every frame.
    pub fn validate(&self) -> Result<(), FilterError> {
        if !self.tau.is_finite() {
            return Err(FilterError::InvalidConfig(format!(
                "tau must be finite, got {}",
                self.tau
            )));
        }
        self.ssim.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairClass {
    Duplicate,
    Novel,
}

/// Novel iff the pair score is strictly below `tau`.
pub fn classify_score(score: f64, tau: f64) -> PairClass {
    if score < tau {
        PairClass::Novel
    } else {
        PairClass::Duplicate
    }
}

pub fn classify_pair(
    key: &Frame,
    candidate: &Frame,
    config: &FilterConfig,
) -> Result<PairClass, ImagingError> {
    let score = crate::imaging::pair_score(key, candidate, config.scale, &config.ssim)?;
    Ok(classify_score(score, config.tau))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceFilterResult {
    pub sequence_id: String,
    pub kept_indices: Vec<usize>,
    pub total_frames: usize,
}

/// Incremental key chain. Holds only the downscaled current key.
pub struct KeyChain<'a> {
    sequence_id: &'a str,
    config: &'a FilterConfig,
    key: Option<Frame>,
    dims: (u32, u32),
    seen: usize,
    kept: Vec<usize>,
}

impl<'a> KeyChain<'a> {
    pub fn new(sequence_id: &'a str, config: &'a FilterConfig) -> Self {
        Self {
            sequence_id,
            config,
            key: None,
            dims: (0, 0),
            seen: 0,
            kept: Vec::new(),
        }
    }

    /// Feeds the next frame of the sequence.
    pub fn push(&mut self, frame: &Frame) -> Result<PairClass, FilterError> {
        let index = self.seen;
        let small = downscale(frame, self.config.scale);
        let class = match &self.key {
            None => {
                self.dims = frame.dims();
                PairClass::Novel
            }
            Some(key) => {
                if frame.dims() != self.dims {
                    return Err(FilterError::DimensionMismatch {
                        sequence_id: self.sequence_id.to_string(),
                        index,
                        expected: self.dims,
                        found: frame.dims(),
                    });
                }
                classify_score(ssim(key, &small, &self.config.ssim)?.value, self.config.tau)
            }
        };
        if class == PairClass::Novel {
            self.key = Some(small);
            self.kept.push(index);
        }
        self.seen += 1;
        Ok(class)
    }

    pub fn finish(self) -> Result<SequenceFilterResult, FilterError> {
        if self.seen == 0 {
            return Err(FilterError::EmptySequence {
                sequence_id: self.sequence_id.to_string(),
            });
        }
        Ok(SequenceFilterResult {
            sequence_id: self.sequence_id.to_string(),
            kept_indices: self.kept,
            total_frames: self.seen,
        })
    }
}

pub fn filter_sequence(
    sequence_id: &str,
    frames: &[Frame],
    config: &FilterConfig,
) -> Result<SequenceFilterResult, FilterError> {
    config.validate()?;
    let mut chain = KeyChain::new(sequence_id, config);
    for frame in frames {
        chain.push(frame)?;
    }
    chain.finish()
}

/// Streams one manifest sequence from disk through a key chain.
pub fn filter_manifest_sequence(
    manifest: &DatasetManifest,
    record: &SequenceRecord,
    config: &FilterConfig,
) -> Result<SequenceFilterResult, FilterError> {
    let mut chain = KeyChain::new(&record.sequence_id, config);
    for (index, locator) in record.frames.iter().enumerate() {
        let frame =
            load_frame(&manifest.resolve(locator)).map_err(|source| FilterError::Frame {
                sequence_id: record.sequence_id.clone(),
                index,
                source,
            })?;
        chain.push(&frame)?;
    }
    chain.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionStats {
    pub frames_in: usize,
    pub frames_out: usize,
    pub kept_fraction: f64,
    pub reduction_factor: f64,
}

impl ReductionStats {
    /// An empty corpus reports both ratios as 1.
    pub fn from_counts(frames_in: usize, frames_out: usize) -> Self {
        let (kept_fraction, reduction_factor) = if frames_in == 0 {
            (1.0, 1.0)
        } else {
            (
                frames_out as f64 / frames_in as f64,
                frames_in as f64 / frames_out as f64,
            )
        };
        Self {
            frames_in,
            frames_out,
            kept_fraction,
            reduction_factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub per_sequence: Vec<SequenceFilterResult>,
    #[serde(flatten)]
    pub stats: ReductionStats,
    pub config: FilterConfig,
    pub warnings: Vec<String>,
}

impl FilterReport {
    pub fn new(per_sequence: Vec<SequenceFilterResult>, config: FilterConfig) -> Self {
        let frames_in = per_sequence.iter().map(|r| r.total_frames).sum();
        let frames_out = per_sequence.iter().map(|r| r.kept_indices.len()).sum();
        Self {
            per_sequence,
            stats: ReductionStats::from_counts(frames_in, frames_out),
            config,
            warnings: Vec::new(),
        }
    }

    /// Writes `report.json` (corpus totals) and `per_sequence.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), FilterError> {
        #[derive(Serialize)]
        struct Summary<'a> {
            sequences: usize,
            #[serde(flatten)]
            stats: &'a ReductionStats,
            tau: f64,
            scale_inverse: u32,
            ssim: &'a SsimParams,
            warnings: &'a [String],
        }
        let summary = Summary {
            sequences: self.per_sequence.len(),
            stats: &self.stats,
            tau: self.config.tau,
            scale_inverse: self.config.scale.inverse(),
            ssim: &self.config.ssim,
            warnings: &self.warnings,
        };
        let path = dir.join(REPORT_FILE_NAME);
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|source| FilterError::Io { path, source })?;

        let path = dir.join(PER_SEQUENCE_FILE_NAME);
        let io_err = |path: &Path, e: csv::Error| FilterError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut writer = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        writer
            .write_record(["sequence_id", "total", "kept", "kept_indices"])
            .map_err(|e| io_err(&path, e))?;
        for r in &self.per_sequence {
            let indices = r
                .kept_indices
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" ");
            writer
                .write_record([
                    r.sequence_id.as_str(),
                    &r.total_frames.to_string(),
                    &r.kept_indices.len().to_string(),
                    &indices,
                ])
                .map_err(|e| io_err(&path, e))?;
        }
        writer
            .flush()
            .map_err(|source| FilterError::Io { path, source })
    }
}

/// Filters every sequence of `manifest` on a pool of `workers` threads.
///
/// Results are assembled in manifest order whatever the completion order,
/// and the first failing sequence (in manifest order) is reported. No
/// partial output is produced on error.
pub fn filter_dataset(
    manifest: &DatasetManifest,
    config: &FilterConfig,
    workers: usize,
) -> Result<(FilterReport, DatasetManifest), FilterError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| FilterError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<SequenceFilterResult, FilterError>> = pool.install(|| {
        manifest
            .sequences()
            .par_iter()
            .map(|record| {
                let result = filter_manifest_sequence(manifest, record, config);
                if let Ok(r) = &result {
                    log::debug!(
                        "{}: kept {}/{} frames",
                        r.sequence_id,
                        r.kept_indices.len(),
                        r.total_frames
                    );
                }
                result
            })
            .collect()
    });
    let results = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let sequences = manifest
        .sequences()
        .iter()
        .zip(&results)
        .map(|(record, result)| SequenceRecord {
            frames: result
                .kept_indices
                .iter()
                .map(|&i| record.frames[i].clone())
                .collect(),
            ..record.clone()
        })
        .collect();
    let mut metadata = manifest.metadata.clone();
    metadata.insert("filter.tau".into(), config.tau.to_string());
    metadata.insert(
        "filter.scale_inverse".into(),
        config.scale.inverse().to_string(),
    );
    let filtered = DatasetManifest::new(metadata, sequences, manifest.base_dir())?;
    Ok((FilterReport::new(results, *config), filtered))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Only the filtered manifest, pointing at the original frame files.
    #[default]
    ManifestOnly,
    /// Copy kept frames under `frames/<patient>/<sequence>/`.
    Copy,
    /// Hard-link kept frames, copying where linking fails.
    Link,
}

impl std::str::FromStr for OutputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manifest_only" | "manifest-only" | "manifest" => Ok(OutputMode::ManifestOnly),
            "copy" => Ok(OutputMode::Copy),
            "link" => Ok(OutputMode::Link),
            other => Err(format!("unknown output mode {other:?}")),
        }
    }
}

/// Writes `manifest.jsonl` into `dest` and, for copy/link, the kept frames.
///
/// Frame paths in the written manifest are the resolved source paths for
/// [`OutputMode::ManifestOnly`] and paths relative to `dest` otherwise.
/// Link failures fall back to copying and are noted in `report.warnings`.
pub fn write_filtered_output(
    report: &mut FilterReport,
    filtered: &DatasetManifest,
    mode: OutputMode,
    dest: &Path,
) -> Result<PathBuf, FilterError> {
    write_filtered_output_with(report, filtered, mode, dest, |src, dst| {
        std::fs::hard_link(src, dst)
    })
}

fn write_filtered_output_with(
    report: &mut FilterReport,
    filtered: &DatasetManifest,
    mode: OutputMode,
    dest: &Path,
    link: impl Fn(&Path, &Path) -> std::io::Result<()>,
) -> Result<PathBuf, FilterError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FilterError::Io { path, source }
    };
    std::fs::create_dir_all(dest).map_err(io(dest))?;

    let mut link_failures = 0usize;
    let mut first_link_error = None;
    let mut sequences = Vec::with_capacity(filtered.sequences().len());
    for record in filtered.sequences() {
        let kept = report
            .per_sequence
            .iter()
            .find(|r| r.sequence_id == record.sequence_id)
            .map(|r| r.kept_indices.as_slice())
            .unwrap_or(&[]);
        let mut frames = Vec::with_capacity(record.frames.len());
        for (pos, locator) in record.frames.iter().enumerate() {
            let src = filtered.resolve(locator);
            if mode == OutputMode::ManifestOnly {
                // the new manifest lives elsewhere, so relative sources must be anchored
                frames.push(std::path::absolute(&src).map_err(io(&src))?);
                continue;
            }
            let name = src
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "frame".into());
            let index = kept.get(pos).copied().unwrap_or(pos);
            let rel = PathBuf::from("frames")
                .join(path_component(&record.patient_id))
                .join(path_component(&record.sequence_id))
                .join(format!("{index:06}_{name}"));
            let dst = dest.join(&rel);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(io(parent))?;
            }
            let linked = mode == OutputMode::Link
                && match link(&src, &dst) {
                    Ok(()) => true,
                    Err(e) => {
                        link_failures += 1;
                        first_link_error.get_or_insert_with(|| format!("{}: {e}", src.display()));
                        false
                    }
                };
            if !linked {
                std::fs::copy(&src, &dst).map_err(io(&src))?;
            }
            frames.push(rel);
        }
        sequences.push(SequenceRecord {
            frames,
            ..record.clone()
        });
    }
    if link_failures > 0 {
        let warning = format!(
            "hard links unavailable for {link_failures} frame(s), copied instead (first error: {})",
            first_link_error.unwrap_or_default()
        );
        log::warn!("{warning}");
        report.warnings.push(warning);
    }

    let out = DatasetManifest::new(filtered.metadata.clone(), sequences, dest)?;
    let path = dest.join(crate::manifest::MANIFEST_FILE_NAME);
    out.write(&path)?;
    Ok(path)
}

fn path_component(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    match cleaned.as_str() {
        "" | "." | ".." => format!("_{cleaned}"),
        _ => cleaned,
    }
}
