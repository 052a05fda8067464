//! Threshold and scale calibration from labeled frame pairs.
//!
//! The positive class is "dissimilar": a pair is predicted novel when its
//! score falls below the threshold. A false negative is a genuinely new
//! frame discarded as a duplicate; a false positive is a redundant frame
//! that survives filtering.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{pair_score, ImagingError, ScaleFactor, SsimParams};
use crate::manifest::{load_frame, Frame, FrameError};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("pairs file line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("pair {index} (line {line}): {source}")]
    Frame {
        index: usize,
        line: usize,
        #[source]
        source: FrameError,
    },
    #[error("pair {index}: {source}")]
    Imaging {
        index: usize,
        #[source]
        source: ImagingError,
    },
    #[error("no labeled pairs given")]
    NoPairs,
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("both classes are required, found only {present} pairs")]
    SingleClass { present: PairLabel },
    #[error("no scales given")]
    NoScales,
    #[error("target {0} must lie in [0, 1]")]
    InvalidTarget(f64),
    #[error("no threshold reaches {strategy} <= {target}; closest achievable is {closest}")]
    Unreachable {
        strategy: Strategy,
        target: f64,
        closest: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Similar,
    Dissimilar,
}

impl PairLabel {
    pub fn flipped(self) -> Self {
        match self {
            PairLabel::Similar => PairLabel::Dissimilar,
            PairLabel::Dissimilar => PairLabel::Similar,
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairLabel::Similar => "similar",
            PairLabel::Dissimilar => "dissimilar",
        })
    }
}

impl FromStr for PairLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "similar" => Ok(PairLabel::Similar),
            "dissimilar" => Ok(PairLabel::Dissimilar),
            other => Err(format!("unknown pair label {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledPair {
    pub ref_frame: PathBuf,
    pub cand_frame: PathBuf,
    pub label: PairLabel,
    /// 1-based line in the pairs file, 0 when built in memory.
    pub line: usize,
}

/// Reads `ref_path,cand_path,label` lines. Relative paths resolve against
/// the pairs file's directory; `#` starts a comment line and an optional
/// `ref_path,cand_path,label` header is skipped.
pub fn load_pairs(path: &Path) -> Result<Vec<LabeledPair>, CalibrationError> {
    let text = std::fs::read_to_string(path).map_err(|source| CalibrationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_pairs(&text, base)
}

pub fn parse_pairs(text: &str, base: &Path) -> Result<Vec<LabeledPair>, CalibrationError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |detail: String| CalibrationError::Parse { line, detail };
        let record = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(trimmed.as_bytes())
            .records()
            .next()
            .expect("non-empty line yields a record")
            .map_err(|e| parse_err(e.to_string()))?;
        if record.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 fields, found {}",
                record.len()
            )));
        }
        if pairs.is_empty() && &record[2] == "label" {
            continue;
        }
        let label = record[2].parse().map_err(parse_err)?;
        pairs.push(LabeledPair {
            ref_frame: base.join(&record[0]),
            cand_frame: base.join(&record[1]),
            label,
            line,
        });
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub score: f64,
    pub label: PairLabel,
}

/// A decoded pair, ready to be scored at any scale.
#[derive(Clone, Debug)]
pub struct FramePair {
    pub reference: Frame,
    pub candidate: Frame,
    pub label: PairLabel,
}

pub fn load_pair_frames(pairs: &[LabeledPair]) -> Result<Vec<FramePair>, CalibrationError> {
    if pairs.is_empty() {
        return Err(CalibrationError::NoPairs);
    }
    pairs
        .par_iter()
        .enumerate()
        .map(|(index, pair)| {
            let load = |p: &Path| {
                load_frame(p).map_err(|source| CalibrationError::Frame {
                    index,
                    line: pair.line,
                    source,
                })
            };
            Ok(FramePair {
                reference: load(&pair.ref_frame)?,
                candidate: load(&pair.cand_frame)?,
                label: pair.label,
            })
        })
        .collect()
}

pub fn score_frame_pairs(
    pairs: &[FramePair],
    scale: ScaleFactor,
    params: &SsimParams,
) -> Result<Vec<ScoredPair>, CalibrationError> {
    if pairs.is_empty() {
        return Err(CalibrationError::NoPairs);
    }
    pairs
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let score = pair_score(&p.reference, &p.candidate, scale, params)
                .map_err(|source| CalibrationError::Imaging { index, source })?;
            Ok(ScoredPair {
                score,
                label: p.label,
            })
        })
        .collect()
}

/// Loads and scores every pair, preserving input order.
pub fn score_pairs(
    pairs: &[LabeledPair],
    scale: ScaleFactor,
    params: &SsimParams,
) -> Result<Vec<ScoredPair>, CalibrationError> {
    score_frame_pairs(&load_pair_frames(pairs)?, scale, params)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub similar: Vec<usize>,
    pub dissimilar: Vec<usize>,
}

/// Per-class counts over equal-width bins spanning [min, max] score.
pub fn histogram(scores: &[ScoredPair], bins: usize) -> Result<Histogram, CalibrationError> {
    if bins == 0 {
        return Err(CalibrationError::NoBins);
    }
    if scores.is_empty() {
        return Err(CalibrationError::NoPairs);
    }
    let lo = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
    let hi = scores
        .iter()
        .map(|s| s.score)
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut similar = vec![0; bins];
    let mut dissimilar = vec![0; bins];
    for s in scores {
        let bin = if hi > lo {
            (((s.score - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
        } else {
            0
        };
        match s.label {
            PairLabel::Similar => similar[bin] += 1,
            PairLabel::Dissimilar => dissimilar[bin] += 1,
        }
    }
    Ok(Histogram {
        edges,
        similar,
        dissimilar,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fnr: f64,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    /// Ascending in threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Area under (fpr, 1 - fnr) by the trapezoid rule.
    pub fn trapezoid_auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                (b.fpr - a.fpr) * ((1.0 - a.fnr) + (1.0 - b.fnr)) / 2.0
            })
            .sum()
    }
}

fn split_by_class(scores: &[ScoredPair]) -> Result<(Vec<f64>, Vec<f64>), CalibrationError> {
    if scores.is_empty() {
        return Err(CalibrationError::NoPairs);
    }
    let (mut similar, mut dissimilar) = (Vec::new(), Vec::new());
    for s in scores {
        match s.label {
            PairLabel::Similar => similar.push(s.score),
            PairLabel::Dissimilar => dissimilar.push(s.score),
        }
    }
    if similar.is_empty() || dissimilar.is_empty() {
        return Err(CalibrationError::SingleClass {
            present: scores[0].label,
        });
    }
    similar.sort_by(f64::total_cmp);
    dissimilar.sort_by(f64::total_cmp);
    Ok((similar, dissimilar))
}

/// Probability that a random dissimilar pair scores below a random similar
/// pair, ties counted one half. Computed from mid-ranks (Mann-Whitney U).
pub fn rank_auc(scores: &[ScoredPair]) -> Result<f64, CalibrationError> {
    let (similar, dissimilar) = split_by_class(scores)?;
    let mut all: Vec<(f64, PairLabel)> = scores.iter().map(|s| (s.score, s.label)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_similar = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let n_sim = all[i..=j]
            .iter()
            .filter(|e| e.1 == PairLabel::Similar)
            .count();
        rank_sum_similar += mid_rank * n_sim as f64;
        i = j + 1;
    }
    let (ns, nd) = (similar.len() as f64, dissimilar.len() as f64);
    let u = rank_sum_similar - ns * (ns + 1.0) / 2.0;
    Ok(u / (ns * nd))
}

/// ROC over midpoint thresholds plus a sentinel on either side.
pub fn roc(scores: &[ScoredPair]) -> Result<RocCurve, CalibrationError> {
    let (similar, dissimilar) = split_by_class(scores)?;
    let mut distinct: Vec<f64> = scores.iter().map(|s| s.score).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut thresholds = Vec::with_capacity(distinct.len() + 1);
    thresholds.push(distinct[0] - 1.0);
    thresholds.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    thresholds.push(distinct[distinct.len() - 1] + 1.0);

    let (ns, nd) = (similar.len() as f64, dissimilar.len() as f64);
    let points = thresholds
        .into_iter()
        .map(|t| {
            let dissimilar_below = dissimilar.partition_point(|&s| s < t);
            let similar_below = similar.partition_point(|&s| s < t);
            RocPoint {
                threshold: t,
                fnr: (dissimilar.len() - dissimilar_below) as f64 / nd,
                fpr: similar_below as f64 / ns,
            }
        })
        .collect();
    Ok(RocCurve {
        points,
        auc: rank_auc(scores)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Minimal fpr subject to fnr <= target.
    TargetFnr,
    /// Minimal fnr subject to fpr <= target.
    TargetFpr,
    /// Maximal 1 - fnr - fpr.
    Youden,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::TargetFnr => "target_fnr",
            Strategy::TargetFpr => "target_fpr",
            Strategy::Youden => "youden",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "target_fnr" => Ok(Strategy::TargetFnr),
            "target_fpr" => Ok(Strategy::TargetFpr),
            "youden" => Ok(Strategy::Youden),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tau: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub strategy: Strategy,
}

/// Picks an operating point on `curve`. Ties go to the smallest threshold.
pub fn select_threshold(
    curve: &RocCurve,
    strategy: Strategy,
    target: f64,
) -> Result<OperatingPoint, CalibrationError> {
    if strategy != Strategy::Youden && !(0.0..=1.0).contains(&target) {
        return Err(CalibrationError::InvalidTarget(target));
    }
    // (constraint value, objective to minimize)
    let key = |p: &RocPoint| match strategy {
        Strategy::TargetFnr => (p.fnr, p.fpr),
        Strategy::TargetFpr => (p.fpr, p.fnr),
        Strategy::Youden => (0.0, -(1.0 - p.fnr - p.fpr)),
    };
    let mut best: Option<&RocPoint> = None;
    for p in &curve.points {
        let (constraint, objective) = key(p);
        if strategy != Strategy::Youden && constraint > target {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => objective < key(b).1 || (objective == key(b).1 && p.threshold < b.threshold),
        };
        if better {
            best = Some(p);
        }
    }
    match best {
        Some(p) => Ok(OperatingPoint {
            tau: p.threshold,
            fnr: p.fnr,
            fpr: p.fpr,
            strategy,
        }),
        None => Err(CalibrationError::Unreachable {
            strategy,
            target,
            closest: curve
                .points
                .iter()
                .map(|p| key(p).0)
                .fold(f64::INFINITY, f64::min),
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleSweep {
    pub entries: Vec<(ScaleFactor, f64)>,
    pub best: ScaleFactor,
}

/// AUC per scale; the best scale maximizes AUC, ties going to the coarser one.
pub fn sweep_scales(
    pairs: &[FramePair],
    scales: &[ScaleFactor],
    params: &SsimParams,
) -> Result<ScaleSweep, CalibrationError> {
    if scales.is_empty() {
        return Err(CalibrationError::NoScales);
    }
    let entries = scales
        .iter()
        .map(|&scale| {
            let scores = score_frame_pairs(pairs, scale, params)?;
            Ok((scale, rank_auc(&scores)?))
        })
        .collect::<Result<Vec<_>, CalibrationError>>()?;
    let best = entries
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|e| e.0)
        .expect("non-empty");
    Ok(ScaleSweep { entries, best })
}

impl ScaleSweep {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scale_inverse", "auc"])?;
        for (scale, auc) in &self.entries {
            w.write_record([scale.inverse().to_string(), auc.to_string()])?;
        }
        w.flush()
    }
}

/// Everything produced by one calibration run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub scale: ScaleFactor,
    pub scores: Vec<ScoredPair>,
    pub histogram: Histogram,
    pub curve: RocCurve,
    pub operating_point: OperatingPoint,
    pub target: f64,
}

impl Calibration {
    pub fn run(
        pairs: &[FramePair],
        scale: ScaleFactor,
        params: &SsimParams,
        strategy: Strategy,
        target: f64,
        bins: usize,
    ) -> Result<Self, CalibrationError> {
        let scores = score_frame_pairs(pairs, scale, params)?;
        let curve = roc(&scores)?;
        let histogram = histogram(&scores, bins)?;
        let operating_point = select_threshold(&curve, strategy, target)?;
        Ok(Self {
            scale,
            scores,
            histogram,
            curve,
            operating_point,
            target,
        })
    }

    /// Writes `scores.csv`, `histogram.csv`, `roc.csv` and `summary.json`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
        w.write_record(["index", "score", "label"])?;
        for (i, s) in self.scores.iter().enumerate() {
            w.write_record([i.to_string(), s.score.to_string(), s.label.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("histogram.csv"))?;
        w.write_record(["bin_low", "bin_high", "similar", "dissimilar"])?;
        let h = &self.histogram;
        for i in 0..h.similar.len() {
            w.write_record([
                h.edges[i].to_string(),
                h.edges[i + 1].to_string(),
                h.similar[i].to_string(),
                h.dissimilar[i].to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("roc.csv"))?;
        w.write_record(["threshold", "fnr", "fpr", "tpr"])?;
        for p in &self.curve.points {
            w.write_record([
                p.threshold.to_string(),
                p.fnr.to_string(),
                p.fpr.to_string(),
                (1.0 - p.fnr).to_string(),
            ])?;
        }
        w.flush()?;

        #[derive(Serialize)]
        struct Summary {
            auc: f64,
            tau: f64,
            fnr: f64,
            fpr: f64,
            strategy: Strategy,
            target: f64,
            scale_inverse: u32,
            pairs: usize,
            similar: usize,
            dissimilar: usize,
        }
        let similar = self
            .scores
            .iter()
            .filter(|s| s.label == PairLabel::Similar)
            .count();
        let summary = Summary {
            auc: self.curve.auc,
            tau: self.operating_point.tau,
            fnr: self.operating_point.fnr,
            fpr: self.operating_point.fpr,
            strategy: self.operating_point.strategy,
            target: self.target,
            scale_inverse: self.scale.inverse(),
            pairs: self.scores.len(),
            similar,
            dissimilar: self.scores.len() - similar,
        };
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        std::fs::write(dir.join("summary.json"), text)
    }
}
