//! Synthetic frame sequences with known scene boundaries.
//!
//! Every scene is an independent texture: uniform white noise, box-blurred
//! with wrap-around over `texture_grain` pixels, then linearly stretched
//! to span `texture_contrast` of the 8-bit range around mid-gray. Frame `j`
//! of a scene is that texture rolled left by `j * drift_step` pixels (with
//! wrap-around) plus i.i.d. Gaussian noise of `noise_sigma`, rounded and
//! clamped to [0, 255].
//!
//! Randomness comes from one ChaCha8 stream seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`. Per scene the draws are, in order:
//! the scene length, `frame_size^2` uniform texture samples in row-major
//! order, then `frame_size^2` standard normals per frame (skipped when
//! `noise_sigma == 0`).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{
    DatasetManifest, Frame, FrameError, ManifestError, SequenceRecord, MANIFEST_FILE_NAME,
};

pub const GROUND_TRUTH_FILE_NAME: &str = "ground_truth.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Side length of the square frames.
    pub frame_size: u32,
    pub num_scenes: usize,
    /// Inclusive range of frames per scene.
    pub min_frames_per_scene: usize,
    pub max_frames_per_scene: usize,
    pub noise_sigma: f64,
    /// Horizontal translation per frame, in pixels.
    pub drift_step: u32,
    /// Box blur width applied to the white-noise texture.
    pub texture_grain: u32,
    /// Fraction of the 8-bit range spanned by a texture, in (0, 1].
    pub texture_contrast: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frame_size: 256,
            num_scenes: 3,
            min_frames_per_scene: 5,
            max_frames_per_scene: 5,
            noise_sigma: 10.0,
            drift_step: 0,
            texture_grain: 32,
            texture_contrast: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.frame_size == 0 {
            return fail("frame_size must be at least 1".into());
        }
        if self.num_scenes == 0 {
            return fail("num_scenes must be at least 1".into());
        }
        if self.min_frames_per_scene == 0 || self.max_frames_per_scene < self.min_frames_per_scene {
            return fail(format!(
                "frames per scene range {}..={} is empty or starts at 0",
                self.min_frames_per_scene, self.max_frames_per_scene
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        if self.texture_grain == 0 {
            return fail("texture_grain must be at least 1".into());
        }
        if !(self.texture_contrast > 0.0 && self.texture_contrast <= 1.0) {
            return fail(format!(
                "texture_contrast must lie in (0, 1], got {}",
                self.texture_contrast
            ));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    pub scene_start_indices: Vec<usize>,
    pub scene_of_frame: Vec<usize>,
}

/// A scene texture as floating-point intensities, row-major.
#[derive(Clone, Debug)]
pub struct Texture {
    size: usize,
    values: Vec<f64>,
}

impl Texture {
    pub fn generate(rng: &mut impl Rng, size: usize, grain: usize, contrast: f64) -> Self {
        let noise: Vec<f64> = (0..size * size).map(|_| rng.random::<f64>()).collect();
        let blurred = box_blur_wrap(&noise, size, grain);
        let lo = blurred.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = blurred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let half = 127.5 * contrast;
        let values = if hi > lo {
            blurred
                .iter()
                .map(|v| 127.5 + half * (2.0 * (v - lo) / (hi - lo) - 1.0))
                .collect()
        } else {
            vec![127.5; size * size]
        };
        Self { size, values }
    }

    /// Renders the texture rolled left by `shift` pixels with additive noise.
    pub fn render(&self, rng: &mut impl Rng, shift: usize, noise_sigma: f64) -> Frame {
        let n = self.size;
        let mut pixels = Vec::with_capacity(n * n);
        for y in 0..n {
            let row = &self.values[y * n..(y + 1) * n];
            for x in 0..n {
                let mut v = row[(x + shift) % n];
                if noise_sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    v += noise_sigma * z;
                }
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        Frame::new(n as u32, n as u32, pixels).expect("square texture")
    }
}

/// Separable box blur of width `k` with periodic boundaries.
fn box_blur_wrap(plane: &[f64], n: usize, k: usize) -> Vec<f64> {
    if k <= 1 {
        return plane.to_vec();
    }
    let blur_line = |get: &dyn Fn(usize) -> f64, out: &mut dyn FnMut(usize, f64)| {
        let half = k / 2;
        let at = |i: isize| get(i.rem_euclid(n as isize) as usize);
        let mut sum: f64 = (0..k).map(|j| at(j as isize - half as isize)).sum();
        for i in 0..n {
            out(i, sum / k as f64);
            let i = i as isize;
            sum += at(i + 1 + (k - half) as isize - 1) - at(i - half as isize);
        }
    };
    let mut horiz = vec![0.0; n * n];
    for y in 0..n {
        let row = &plane[y * n..(y + 1) * n];
        blur_line(&|x| row[x], &mut |x, v| horiz[y * n + x] = v);
    }
    let mut out = vec![0.0; n * n];
    for x in 0..n {
        blur_line(&|y| horiz[y * n + x], &mut |y, v| out[y * n + x] = v);
    }
    out
}

fn render_scene(rng: &mut ChaCha8Rng, config: &SynthConfig, len: usize, frames: &mut Vec<Frame>) {
    let n = config.frame_size as usize;
    let texture = Texture::generate(
        rng,
        n,
        config.texture_grain as usize,
        config.texture_contrast,
    );
    for j in 0..len {
        let shift = (j * config.drift_step as usize) % n;
        frames.push(texture.render(rng, shift, config.noise_sigma));
    }
}

/// Generates one sequence and its scene boundaries.
pub fn generate_sequence(
    config: &SynthConfig,
) -> Result<(Vec<Frame>, SynthGroundTruth), SynthError> {
    config.validate()?;
    Ok(sequence_from_rng(
        &mut ChaCha8Rng::seed_from_u64(config.seed),
        config,
    ))
}

fn sequence_from_rng(rng: &mut ChaCha8Rng, config: &SynthConfig) -> (Vec<Frame>, SynthGroundTruth) {
    let lengths = (0..config.num_scenes)
        .map(|_| None)
        .collect::<Vec<Option<usize>>>();
    sequence_with_lengths(rng, config, &lengths)
}

/// Renders scenes in order; `None` lengths are drawn from the configured range.
fn sequence_with_lengths(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    lengths: &[Option<usize>],
) -> (Vec<Frame>, SynthGroundTruth) {
    let mut frames = Vec::new();
    let mut truth = SynthGroundTruth {
        scene_start_indices: Vec::with_capacity(lengths.len()),
        scene_of_frame: Vec::new(),
    };
    for (scene, len) in lengths.iter().enumerate() {
        let len = len.unwrap_or_else(|| {
            rng.random_range(config.min_frames_per_scene..=config.max_frames_per_scene)
        });
        truth.scene_start_indices.push(frames.len());
        truth.scene_of_frame.extend(std::iter::repeat_n(scene, len));
        render_scene(rng, config, len, &mut frames);
    }
    (frames, truth)
}

/// Scene lengths of `floor(r)` or `ceil(r)` frames, averaging `r`.
fn planted_scene_lengths(
    rng: &mut ChaCha8Rng,
    scenes: usize,
    redundancy_factor: f64,
) -> Vec<usize> {
    let base = redundancy_factor.floor();
    let frac = redundancy_factor - base;
    (0..scenes)
        .map(|_| base as usize + usize::from(frac > 0.0 && rng.random::<f64>() < frac))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub patient_id: String,
    pub sequence_id: String,
    pub frames: Vec<Frame>,
    pub truth: SynthGroundTruth,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub sequences: Vec<SynthSequence>,
    pub config: SynthConfig,
    pub redundancy_factor: f64,
    /// `1 / redundancy_factor`.
    pub expected_kept_fraction: f64,
}

impl SynthCorpus {
    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    /// Scenes over frames as actually drawn.
    pub fn planted_kept_fraction(&self) -> f64 {
        let scenes: usize = self
            .sequences
            .iter()
            .map(|s| s.truth.scene_start_indices.len())
            .sum();
        scenes as f64 / self.frame_count() as f64
    }
}

/// A corpus of `sequences` sequences spread round-robin over `patients`
/// patients, where each scene holds on average `redundancy_factor` frames.
///
/// `config.num_scenes` scenes are planted per sequence; the per-scene
/// frame range in `config` is ignored. Sequence `i` draws from its own
/// ChaCha8 stream `i` under `config.seed`.
pub fn plant_redundancy_corpus(
    config: &SynthConfig,
    redundancy_factor: f64,
    sequences: usize,
    patients: usize,
) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    if !(redundancy_factor >= 1.0 && redundancy_factor.is_finite()) {
        return Err(SynthError::InvalidConfig(format!(
            "redundancy_factor must be finite and >= 1, got {redundancy_factor}"
        )));
    }
    if sequences == 0 || patients == 0 {
        return Err(SynthError::InvalidConfig(
            "sequences and patients must be at least 1".into(),
        ));
    }
    let corpus = build_corpus(config, sequences, patients, |rng| {
        let lengths: Vec<Option<usize>> =
            planted_scene_lengths(rng, config.num_scenes, redundancy_factor)
                .into_iter()
                .map(Some)
                .collect();
        sequence_with_lengths(rng, config, &lengths)
    });
    Ok(SynthCorpus {
        redundancy_factor,
        expected_kept_fraction: 1.0 / redundancy_factor,
        ..corpus
    })
}

/// Like [`plant_redundancy_corpus`] but with scene lengths drawn from the
/// configured range; the expected kept fraction is the planted one.
pub fn generate_corpus(
    config: &SynthConfig,
    sequences: usize,
    patients: usize,
) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    if sequences == 0 || patients == 0 {
        return Err(SynthError::InvalidConfig(
            "sequences and patients must be at least 1".into(),
        ));
    }
    let mut corpus = build_corpus(config, sequences, patients, |rng| {
        sequence_from_rng(rng, config)
    });
    let planted = corpus.planted_kept_fraction();
    corpus.expected_kept_fraction = planted;
    corpus.redundancy_factor = 1.0 / planted;
    Ok(corpus)
}

fn build_corpus(
    config: &SynthConfig,
    sequences: usize,
    patients: usize,
    make: impl Fn(&mut ChaCha8Rng) -> (Vec<Frame>, SynthGroundTruth),
) -> SynthCorpus {
    let sequences = (0..sequences)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let (frames, truth) = make(&mut rng);
            SynthSequence {
                patient_id: format!("p{:02}", i % patients),
                sequence_id: format!("s{i:03}"),
                frames,
                truth,
            }
        })
        .collect();
    SynthCorpus {
        sequences,
        config: *config,
        redundancy_factor: 1.0,
        expected_kept_fraction: 1.0,
    }
}

#[derive(Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub config: SynthConfig,
    pub redundancy_factor: f64,
    pub expected_kept_fraction: f64,
    pub planted_kept_fraction: f64,
    pub sequences: Vec<SequenceTruth>,
}

#[derive(Serialize, Deserialize)]
pub struct SequenceTruth {
    pub sequence_id: String,
    pub total_frames: usize,
    pub scene_start_indices: Vec<usize>,
}

/// Writes PGM frames under `frames/<sequence>/`, `manifest.jsonl` and
/// `ground_truth.json` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<DatasetManifest, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let mut records = Vec::with_capacity(corpus.sequences.len());
    for seq in &corpus.sequences {
        let rel_dir = PathBuf::from("frames").join(&seq.sequence_id);
        std::fs::create_dir_all(dir.join(&rel_dir)).map_err(io(&dir.join(&rel_dir)))?;
        let mut frames = Vec::with_capacity(seq.frames.len());
        for (i, frame) in seq.frames.iter().enumerate() {
            let rel = rel_dir.join(format!("{i:05}.pgm"));
            frame.save_pgm(&dir.join(&rel))?;
            frames.push(rel);
        }
        records.push(SequenceRecord {
            patient_id: seq.patient_id.clone(),
            sequence_id: seq.sequence_id.clone(),
            class_label: None,
            frames,
        });
    }
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("name".to_string(), "synthetic".to_string());
    metadata.insert("seed".to_string(), corpus.config.seed.to_string());
    let manifest = DatasetManifest::new(metadata, records, dir)?;
    manifest.write(&dir.join(MANIFEST_FILE_NAME))?;

    let truth = GroundTruthFile {
        config: corpus.config,
        redundancy_factor: corpus.redundancy_factor,
        expected_kept_fraction: corpus.expected_kept_fraction,
        planted_kept_fraction: corpus.planted_kept_fraction(),
        sequences: corpus
            .sequences
            .iter()
            .map(|s| SequenceTruth {
                sequence_id: s.sequence_id.clone(),
                total_frames: s.frames.len(),
                scene_start_indices: s.truth.scene_start_indices.clone(),
            })
            .collect(),
    };
    let path = dir.join(GROUND_TRUTH_FILE_NAME);
    let mut text = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(io(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            frame_size: 64,
            texture_grain: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_static_scene_is_constant() {
        let cfg = SynthConfig {
            num_scenes: 1,
            noise_sigma: 0.0,
            drift_step: 0,
            ..small()
        };
        let (frames, truth) = generate_sequence(&cfg).unwrap();
        assert_eq!(frames.len(), 5);
        assert!(frames.iter().all(|f| *f == frames[0]));
        assert_eq!(truth.scene_start_indices, vec![0]);
    }

    #[test]
    fn scene_starts_by_construction() {
        let (frames, truth) = generate_sequence(&small()).unwrap();
        assert_eq!(frames.len(), 15);
        assert_eq!(truth.scene_start_indices, vec![0, 5, 10]);
        assert_eq!(truth.scene_of_frame[4..6], [0, 1]);
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, _) = generate_sequence(&small()).unwrap();
        let (b, _) = generate_sequence(&small()).unwrap();
        let (c, _) = generate_sequence(&small().with_seed(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn drift_is_a_wrapped_roll() {
        let cfg = SynthConfig {
            num_scenes: 1,
            noise_sigma: 0.0,
            drift_step: 3,
            ..small()
        };
        let (frames, _) = generate_sequence(&cfg).unwrap();
        let (a, b) = (&frames[0], &frames[1]);
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(b.get(x, y), a.get((x + 3) % 64, y));
            }
        }
    }

    #[test]
    fn texture_spans_requested_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Texture::generate(&mut rng, 32, 4, 0.5);
        let lo = t.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 63.75).abs() < 1e-9 && (hi - 191.25).abs() < 1e-9);
    }

    #[test]
    fn box_blur_preserves_mean_and_flattens_constants() {
        let plane: Vec<f64> = (0..36).map(|i| (i * 7 % 11) as f64).collect();
        let out = box_blur_wrap(&plane, 6, 3);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&plane) - mean(&out)).abs() < 1e-12);
        // direct check of one pixel: 3x3 neighbourhood centred on (0,0), wrapping
        let mut direct = 0.0;
        for dy in [5usize, 0, 1] {
            for dx in [5usize, 0, 1] {
                direct += plane[dy * 6 + dx];
            }
        }
        assert!((out[0] - direct / 9.0).abs() < 1e-12);
        assert!(box_blur_wrap(&[4.0; 16], 4, 2)
            .iter()
            .all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig {
                frame_size: 0,
                ..small()
            },
            SynthConfig {
                num_scenes: 0,
                ..small()
            },
            SynthConfig {
                min_frames_per_scene: 0,
                ..small()
            },
            SynthConfig {
                max_frames_per_scene: 2,
                ..small()
            },
            SynthConfig {
                noise_sigma: -1.0,
                ..small()
            },
            SynthConfig {
                texture_grain: 0,
                ..small()
            },
            SynthConfig {
                texture_contrast: 0.0,
                ..small()
            },
        ] {
            assert!(matches!(
                generate_sequence(&cfg),
                Err(SynthError::InvalidConfig(_))
            ));
        }
        assert!(plant_redundancy_corpus(&small(), 0.5, 1, 1).is_err());
    }

    #[test]
    fn planted_lengths_average_factor() {
        let corpus = plant_redundancy_corpus(
            &SynthConfig {
                num_scenes: 400,
                frame_size: 8,
                texture_grain: 2,
                ..small()
            },
            2.5,
            1,
            1,
        )
        .unwrap();
        let lens: Vec<usize> = {
            let s = &corpus.sequences[0].truth.scene_start_indices;
            let total = corpus.sequences[0].frames.len();
            s.windows(2)
                .map(|w| w[1] - w[0])
                .chain([total - s[s.len() - 1]])
                .collect()
        };
        assert!(lens.iter().all(|&l| l == 2 || l == 3));
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        assert!((mean - 2.5).abs() < 0.1, "{mean}");
        let one = plant_redundancy_corpus(&small(), 1.0, 2, 1).unwrap();
        assert_eq!(one.expected_kept_fraction, 1.0);
        assert_eq!(one.planted_kept_fraction(), 1.0);
    }
}
