//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vifi::calibration::{PairLabel, ScoredPair};
use vifi::filter::{classify_pair, FilterConfig, PairClass};
use vifi::Frame;

pub fn random_frame(rng: &mut impl Rng, w: u32, h: u32) -> Frame {
    let pixels = (0..w * h).map(|_| rng.random::<u8>()).collect();
    Frame::new(w, h, pixels).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Global SSIM straight from the definition, one pixel at a time.
pub fn naive_global_ssim(a: &Frame, b: &Frame, l: f64, k1: f64, k2: f64) -> f64 {
    let (w, h) = a.dims();
    let n = (w * h) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            sa += a.get(x, y) as f64;
            sb += b.get(x, y) as f64;
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let da = a.get(x, y) as f64 - ma;
            let db = b.get(x, y) as f64 - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    let c1 = (k1 * l) * (k1 * l);
    let c2 = (k2 * l) * (k2 * l);
    let luminance = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    let contrast_structure = (2.0 * cov + c2) / (va + vb + c2);
    luminance * contrast_structure
}

/// Box mean of every output pixel, computed pixel by pixel in f64.
pub fn brute_downscale(frame: &Frame, k: u32) -> Frame {
    let (w, h) = frame.dims();
    let (ow, oh) = (w.div_ceil(k), h.div_ceil(k));
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            let mut sum = 0.0;
            let mut count = 0.0;
            for y in oy * k..((oy + 1) * k).min(h) {
                for x in ox * k..((ox + 1) * k).min(w) {
                    sum += frame.get(x, y) as f64;
                    count += 1.0;
                }
            }
            // f64::round rounds half away from zero
            out.push((sum / count).round() as u8);
        }
    }
    Frame::new(ow, oh, out).unwrap()
}

/// Key-chain filter replayed with full-resolution `classify_pair` calls.
pub fn reference_filter(frames: &[Frame], config: &FilterConfig) -> Vec<usize> {
    let mut kept = vec![0];
    let mut key = 0;
    for i in 1..frames.len() {
        if classify_pair(&frames[key], &frames[i], config).unwrap() == PairClass::Novel {
            kept.push(i);
            key = i;
        }
    }
    kept
}

/// P(dissimilar < similar) + 0.5 P(tie) by counting every cross-class pair.
pub fn brute_auc(scores: &[ScoredPair]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for d in scores.iter().filter(|s| s.label == PairLabel::Dissimilar) {
        for s in scores.iter().filter(|s| s.label == PairLabel::Similar) {
            pairs += 1.0;
            if d.score < s.score {
                total += 1.0;
            } else if d.score == s.score {
                total += 0.5;
            }
        }
    }
    total / pairs
}

/// (fnr, fpr) of the rule "novel iff score < tau", by direct counting.
pub fn rates_at(scores: &[ScoredPair], tau: f64) -> (f64, f64) {
    let mut missed = 0usize;
    let mut dissimilar = 0usize;
    let mut false_alarms = 0usize;
    let mut similar = 0usize;
    for s in scores {
        match s.label {
            PairLabel::Dissimilar => {
                dissimilar += 1;
                if s.score >= tau {
                    missed += 1;
                }
            }
            PairLabel::Similar => {
                similar += 1;
                if s.score < tau {
                    false_alarms += 1;
                }
            }
        }
    }
    (
        missed as f64 / dissimilar as f64,
        false_alarms as f64 / similar as f64,
    )
}

/// Candidate thresholds: every score, every midpoint and one past either end.
pub fn all_thresholds(scores: &[ScoredPair]) -> Vec<f64> {
    let mut v: Vec<f64> = scores.iter().map(|s| s.score).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    let mut out = vec![v[0] - 1.0, v[v.len() - 1] + 1.0];
    out.extend(v.iter().copied());
    for i in 1..v.len() {
        out.push((v[i - 1] + v[i]) / 2.0);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Exhaustive target-fnr search over every candidate threshold.
///
/// Returns (tau, fnr, fpr): the lowest fpr reachable with fnr <= target,
/// reported at the smallest non-score candidate (midpoint or sentinel)
/// that reaches it.
pub fn exhaustive_target_fnr(scores: &[ScoredPair], target: f64) -> (f64, f64, f64) {
    let candidates = all_thresholds(scores);
    let best_fpr = candidates
        .iter()
        .map(|&t| rates_at(scores, t))
        .filter(|&(fnr, _)| fnr <= target)
        .map(|(_, fpr)| fpr)
        .fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .filter(|&&t| !scores.iter().any(|s| s.score == t))
        .map(|&t| (t, rates_at(scores, t)))
        .find(|&(_, (fnr, fpr))| fnr <= target && fpr == best_fpr)
        .map(|(t, (fnr, fpr))| (t, fnr, fpr))
        .expect("a midpoint or sentinel attains every achievable rate pair")
}

pub fn scored(values: &[(f64, PairLabel)]) -> Vec<ScoredPair> {
    values
        .iter()
        .map(|&(score, label)| ScoredPair { score, label })
        .collect()
}

/// Random score set with both classes present and optional ties.
pub fn random_scores(rng: &mut impl Rng, n: usize, ties: bool) -> Vec<ScoredPair> {
    assert!(n >= 2, "need room for both classes");
    loop {
        let v: Vec<ScoredPair> = (0..n)
            .map(|_| {
                let score = if ties {
                    (rng.random_range(0..10) as f64) / 10.0
                } else {
                    rng.random_range(-1.0..1.0)
                };
                let label = if rng.random_bool(0.5) {
                    PairLabel::Similar
                } else {
                    PairLabel::Dissimilar
                };
                ScoredPair { score, label }
            })
            .collect();
        if v.iter().any(|s| s.label == PairLabel::Similar)
            && v.iter().any(|s| s.label == PairLabel::Dissimilar)
        {
            return v;
        }
    }
}
