//! Leave-one-patient-out folds with a sequence-level train/val split.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClassLabel, DatasetManifest, SequenceRecord};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("leave-one-patient-out needs at least 2 patients, found {found}")]
    TooFewPatients { found: usize },
    #[error("val_fraction must lie in (0, 1), got {0}")]
    InvalidValFraction(f64),
    #[error(
        "fold {fold_id} (test patient {test_patient:?}) is infeasible: \
         {available} {class} sequence(s) outside the test patient, need at least 2 \
         to place one in both train and val"
    )]
    Infeasible {
        fold_id: usize,
        test_patient: String,
        class: ClassLabel,
        available: usize,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_id: usize,
    pub test_patient: String,
    pub train_sequences: Vec<String>,
    pub val_sequences: Vec<String>,
    pub test_sequences: Vec<String>,
    pub seed: u64,
}

/// One fold per patient, in sorted patient order.
///
/// The non-test sequences are shuffled with ChaCha8 seeded by `seed` on
/// stream `fold_id`, and the first `round(val_fraction * n)` become the
/// validation set. When the manifest carries class labels, every labeled
/// class must end up in both train and val; violations are repaired by
/// swapping sequences between the two sets, picking the smallest
/// sequence_id among eligible candidates.
pub fn make_lopo_splits(
    manifest: &DatasetManifest,
    seed: u64,
    val_fraction: f64,
) -> Result<Vec<SplitPlan>, SplitError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(SplitError::InvalidValFraction(val_fraction));
    }
    let patients = manifest.patients();
    if patients.len() < 2 {
        return Err(SplitError::TooFewPatients {
            found: patients.len(),
        });
    }
    let required: Vec<ClassLabel> = manifest
        .sequences()
        .iter()
        .filter_map(|s| s.class_label)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    patients
        .iter()
        .enumerate()
        .map(|(fold_id, &test_patient)| {
            let mut pool: Vec<&SequenceRecord> = Vec::new();
            let mut test_sequences = Vec::new();
            for seq in manifest.sequences() {
                if seq.patient_id == test_patient {
                    test_sequences.push(seq.sequence_id.clone());
                } else {
                    pool.push(seq);
                }
            }
            pool.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
            test_sequences.sort();

            for &class in &required {
                let available = pool.iter().filter(|s| s.class_label == Some(class)).count();
                if available < 2 {
                    return Err(SplitError::Infeasible {
                        fold_id,
                        test_patient: test_patient.to_string(),
                        class,
                        available,
                    });
                }
            }

            let n = pool.len();
            let k = required.len();
            let n_val = ((val_fraction * n as f64).round() as usize).clamp(k, n - k);

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(fold_id as u64);
            pool.shuffle(&mut rng);
            let (val, train) = pool.split_at(n_val);
            let mut val = val.to_vec();
            let mut train = train.to_vec();

            for &class in &required {
                ensure_class(&mut val, &mut train, class);
            }
            for &class in &required {
                ensure_class(&mut train, &mut val, class);
            }

            let ids = |set: &[&SequenceRecord]| {
                let mut v: Vec<String> = set.iter().map(|s| s.sequence_id.clone()).collect();
                v.sort();
                v
            };
            Ok(SplitPlan {
                fold_id,
                test_patient: test_patient.to_string(),
                train_sequences: ids(&train),
                val_sequences: ids(&val),
                test_sequences,
                seed,
            })
        })
        .collect()
}

/// Makes sure `target` holds a sequence of `class`, swapping with `donor` if not.
fn ensure_class<'a>(
    target: &mut [&'a SequenceRecord],
    donor: &mut [&'a SequenceRecord],
    class: ClassLabel,
) {
    if target.iter().any(|s| s.class_label == Some(class)) {
        return;
    }
    let Some(incoming) = smallest(donor, |s| s.class_label == Some(class)) else {
        return;
    };
    // A target entry is spare when removing it leaves its class represented.
    let spare = |s: &&SequenceRecord| match s.class_label {
        None => true,
        Some(c) => target.iter().filter(|t| t.class_label == Some(c)).count() >= 2,
    };
    let Some(outgoing) = smallest(target, spare) else {
        return;
    };
    std::mem::swap(&mut target[outgoing], &mut donor[incoming]);
}

fn smallest(set: &[&SequenceRecord], pred: impl Fn(&&SequenceRecord) -> bool) -> Option<usize> {
    set.iter()
        .enumerate()
        .filter(|(_, s)| pred(s))
        .min_by(|(_, a), (_, b)| a.sequence_id.cmp(&b.sequence_id))
        .map(|(i, _)| i)
}

/// Writes one `fold_NN.json` per plan into `dir`.
pub fn write_split_plans(plans: &[SplitPlan], dir: &Path) -> Result<Vec<PathBuf>, SplitError> {
    plans
        .iter()
        .map(|plan| {
            let path = dir.join(format!("fold_{:02}.json", plan.fold_id));
            let mut text = serde_json::to_string_pretty(plan).expect("plan serializes");
            text.push('\n');
            std::fs::write(&path, text).map_err(|source| SplitError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn seq(patient: &str, id: &str, label: Option<ClassLabel>) -> SequenceRecord {
        SequenceRecord {
            patient_id: patient.into(),
            sequence_id: id.into(),
            class_label: label,
            frames: vec![PathBuf::from(format!("{id}/0.pgm"))],
        }
    }

    fn manifest(seqs: Vec<SequenceRecord>) -> DatasetManifest {
        DatasetManifest::new(BTreeMap::new(), seqs, ".").unwrap()
    }

    #[test]
    fn two_patients_unlabeled_counts() {
        let mut seqs = Vec::new();
        for p in ["a", "b"] {
            for i in 0..10 {
                seqs.push(seq(p, &format!("{p}{i:02}"), None));
            }
        }
        let plans = make_lopo_splits(&manifest(seqs), 7, 0.2).unwrap();
        assert_eq!(plans.len(), 2);
        for plan in &plans {
            assert_eq!(plan.train_sequences.len(), 8);
            assert_eq!(plan.val_sequences.len(), 2);
            assert_eq!(plan.test_sequences.len(), 10);
            let other = if plan.test_patient == "a" { "b" } else { "a" };
            assert!(plan
                .train_sequences
                .iter()
                .chain(&plan.val_sequences)
                .all(|s| s.starts_with(other)));
        }
    }

    #[test]
    fn single_tumor_in_pool_is_infeasible() {
        let seqs = vec![
            seq("a", "a1", Some(ClassLabel::Healthy)),
            seq("b", "b1", Some(ClassLabel::Tumor)),
            seq("b", "b2", Some(ClassLabel::Healthy)),
            seq("b", "b3", Some(ClassLabel::Healthy)),
            seq("c", "c1", Some(ClassLabel::Healthy)),
        ];
        match make_lopo_splits(&manifest(seqs), 0, 0.2) {
            Err(SplitError::Infeasible {
                fold_id,
                class,
                available,
                ..
            }) => {
                assert_eq!(fold_id, 0);
                assert_eq!(class, ClassLabel::Tumor);
                assert_eq!(available, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn class_presence_repaired_by_swaps() {
        // 2 tumor + 8 healthy in every pool; a 20% val set of 2 often misses tumor.
        let mut seqs = Vec::new();
        for p in ["a", "b", "c"] {
            seqs.push(seq(p, &format!("{p}-t"), Some(ClassLabel::Tumor)));
            for i in 0..4 {
                seqs.push(seq(p, &format!("{p}-h{i}"), Some(ClassLabel::Healthy)));
            }
        }
        let m = manifest(seqs);
        for seed in 0..30 {
            for plan in make_lopo_splits(&m, seed, 0.2).unwrap() {
                assert_eq!(plan.val_sequences.len(), 2);
                for set in [&plan.train_sequences, &plan.val_sequences] {
                    for class in ClassLabel::ALL {
                        assert!(set
                            .iter()
                            .any(|id| m.sequence(id).unwrap().class_label == Some(class)));
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let one = manifest(vec![seq("a", "a1", None), seq("a", "a2", None)]);
        assert!(matches!(
            make_lopo_splits(&one, 0, 0.2),
            Err(SplitError::TooFewPatients { found: 1 })
        ));
        let two = manifest(vec![seq("a", "a1", None), seq("b", "b1", None)]);
        assert!(matches!(
            make_lopo_splits(&two, 0, 1.0),
            Err(SplitError::InvalidValFraction(_))
        ));
        assert!(matches!(
            make_lopo_splits(&two, 0, 0.0),
            Err(SplitError::InvalidValFraction(_))
        ));
    }

    #[test]
    fn seed_changes_partition_not_test_patient() {
        let mut seqs = Vec::new();
        for p in ["a", "b", "c"] {
            for i in 0..6 {
                seqs.push(seq(p, &format!("{p}{i}"), None));
            }
        }
        let m = manifest(seqs);
        let a = make_lopo_splits(&m, 1, 0.25).unwrap();
        let b = make_lopo_splits(&m, 2, 0.25).unwrap();
        assert_eq!(a, make_lopo_splits(&m, 1, 0.25).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.test_patient, y.test_patient);
            assert_eq!(x.test_sequences, y.test_sequences);
        }
        assert!(a
            .iter()
            .zip(&b)
            .any(|(x, y)| x.val_sequences != y.val_sequences));
    }
}
