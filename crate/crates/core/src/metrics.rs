//! Forget/retain/test accuracy, the confidence-threshold membership attack
//! and the average gap to the retrained reference.
//!
//! MIA orientation: the reported score is the percentage of the forget set
//! the attacker labels as *non-member*. Higher means the forget set looks
//! more like unseen data.

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, Split};
use crate::error::{Error, Result};
use crate::net::{argmax, Model};

pub const MIA_CONVENTION: &str =
    "mia = 100 * fraction of the forget set classified non-member by a max-softmax threshold attacker";

/// `100 * correct / N` with argmax ties resolved to the lowest class index.
pub fn accuracy(model: &Model, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("accuracy dataset"));
    }
    let logits = model.forward(data.features())?;
    let correct = logits
        .axis_iter(Axis(0))
        .zip(data.labels())
        .filter(|(z, &y)| argmax(z.as_slice().expect("standard layout")) == y)
        .count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Max-softmax confidence per row.
pub fn confidences(model: &Model, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(model.predict_proba(x)?.iter().map(|p| p.max()).collect())
}

/// Classifies a confidence as member iff it is `>= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAttacker {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    /// All fitting confidences were identical.
    pub degenerate: bool,
}

impl ThresholdAttacker {
    pub fn is_member(&self, confidence: f64) -> bool {
        confidence >= self.threshold
    }

    /// Percentage of `confidences` classified as non-members.
    pub fn non_member_rate(&self, confidences: &[f64]) -> f64 {
        if confidences.is_empty() {
            return 0.0;
        }
        let n = confidences.iter().filter(|&&c| !self.is_member(c)).count();
        100.0 * n as f64 / confidences.len() as f64
    }
}

/// `(TPR + TNR) / 2` of the rule `member iff c >= t`.
pub fn balanced_accuracy(threshold: f64, members: &[f64], non_members: &[f64]) -> f64 {
    let tp = members.iter().filter(|&&c| c >= threshold).count();
    let tn = non_members.iter().filter(|&&c| c < threshold).count();
    balanced_from_counts(tp, tn, members.len(), non_members.len())
}

fn balanced_from_counts(tp: usize, tn: usize, m: usize, n: usize) -> f64 {
    0.5 * (tp as f64 / m as f64 + tn as f64 / n as f64)
}

/// Midpoints between consecutive distinct pooled confidences, plus one
/// threshold below and one above all of them, ascending. Each candidate
/// separates the values below it from those at or above it.
pub fn candidate_thresholds(members: &[f64], non_members: &[f64]) -> Vec<f64> {
    let mut pooled: Vec<f64> = members.iter().chain(non_members).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let (Some(&lo), Some(&hi)) = (pooled.first(), pooled.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(pooled.len() + 1);
    out.push(lo - 1.0);
    out.extend(pooled.windows(2).map(|w| {
        // Adjacent floats have no midpoint strictly between them; the upper
        // value then induces the same split.
        let mid = w[0] + 0.5 * (w[1] - w[0]);
        if mid > w[0] {
            mid
        } else {
            w[1]
        }
    }));
    out.push(hi + 1.0);
    out
}

/// Fits the threshold maximizing balanced accuracy over
/// [`candidate_thresholds`]; ties go to the smallest threshold.
pub fn fit_threshold(members: &[f64], non_members: &[f64]) -> Result<ThresholdAttacker> {
    if members.is_empty() || non_members.is_empty() {
        return Err(Error::Empty("attacker fitting set"));
    }
    if let Some((index, &value)) = members
        .iter()
        .chain(non_members)
        .enumerate()
        .find(|(_, c)| !c.is_finite())
    {
        return Err(Error::NonFinite { index, value });
    }
    let candidates = candidate_thresholds(members, non_members);
    if candidates.len() == 2 {
        return Ok(ThresholdAttacker {
            threshold: candidates[0],
            balanced_accuracy: 0.5,
            degenerate: true,
        });
    }
    let mut m = members.to_vec();
    let mut n = non_members.to_vec();
    m.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let mut best = ThresholdAttacker {
        threshold: f64::NAN,
        balanced_accuracy: f64::NEG_INFINITY,
        degenerate: false,
    };
    for t in candidates {
        let tp = m.len() - m.partition_point(|&c| c < t);
        let tn = n.partition_point(|&c| c < t);
        let ba = balanced_from_counts(tp, tn, m.len(), n.len());
        if ba > best.balanced_accuracy {
            best.threshold = t;
            best.balanced_accuracy = ba;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    pub score: f64,
    pub attacker: ThresholdAttacker,
    pub degenerate: bool,
}

/// Fits the attacker on `member_probe` versus `non_members` and reports the
/// non-member rate on the forget set. Degenerate confidences give 50.
pub fn mia_score(
    model: &Model,
    forget: &LabeledSet,
    non_members: &LabeledSet,
    member_probe: &LabeledSet,
) -> Result<MiaResult> {
    let members = confidences(model, member_probe.features())?;
    let outsiders = confidences(model, non_members.features())?;
    let attacker = fit_threshold(&members, &outsiders)?;
    if attacker.degenerate {
        return Ok(MiaResult {
            score: 50.0,
            attacker,
            degenerate: true,
        });
    }
    let forget_conf = confidences(model, forget.features())?;
    Ok(MiaResult {
        score: attacker.non_member_rate(&forget_conf),
        attacker,
        degenerate: false,
    })
}

/// The four raw percentages of one model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawMetrics {
    pub fa: f64,
    pub ra: f64,
    pub ta: f64,
    pub mia: f64,
}

impl RawMetrics {
    pub fn as_array(&self) -> [f64; 4] {
        [self.fa, self.ra, self.ta, self.mia]
    }

    fn from_array([fa, ra, ta, mia]: [f64; 4]) -> Self {
        Self { fa, ra, ta, mia }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fa: f64,
    pub ra: f64,
    pub ta: f64,
    pub mia: f64,
    pub ag: f64,
    /// `|method - retrain|` per metric.
    pub gaps: RawMetrics,
}

impl MetricsReport {
    pub fn raw(&self) -> RawMetrics {
        RawMetrics {
            fa: self.fa,
            ra: self.ra,
            ta: self.ta,
            mia: self.mia,
        }
    }
}

/// Per-metric absolute gaps to the reference and their mean.
pub fn average_gap(method: &RawMetrics, retrain: &RawMetrics) -> MetricsReport {
    let a = method.as_array();
    let b = retrain.as_array();
    let gaps = [0, 1, 2, 3].map(|i| (a[i] - b[i]).abs());
    MetricsReport {
        fa: method.fa,
        ra: method.ra,
        ta: method.ta,
        mia: method.mia,
        ag: gaps.iter().sum::<f64>() / 4.0,
        gaps: RawMetrics::from_array(gaps),
    }
}

/// Which rows of a split the membership attack uses.
///
/// The first half of the test set is the attacker's non-member sample; the
/// second half is a fresh split it never sees. Members are the first rows of
/// the retain set, as many as there are non-members.
#[derive(Debug, Clone)]
pub struct MiaSets {
    pub member_probe: LabeledSet,
    pub non_members: LabeledSet,
    pub fresh: LabeledSet,
}

impl MiaSets {
    pub fn from_split(split: &Split) -> Result<Self> {
        let n = split.test.len();
        if n < 2 {
            return Err(Error::Data(
                "membership attack needs at least 2 test rows".into(),
            ));
        }
        let half = n / 2;
        let probe = half.min(split.retain.len());
        let first: Vec<usize> = (0..half).collect();
        let second: Vec<usize> = (half..n).collect();
        let members: Vec<usize> = (0..probe).collect();
        Ok(Self {
            member_probe: split.retain.subset(&members, "mia/members")?,
            non_members: split.test.subset(&first, "mia/non_members")?,
            fresh: split.test.subset(&second, "mia/fresh")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub raw: RawMetrics,
    pub mia: MiaResult,
    /// Attacker non-member rate on the fresh half of the test set.
    pub fresh_non_member_rate: f64,
}

pub fn evaluate(model: &Model, split: &Split) -> Result<Evaluation> {
    let sets = MiaSets::from_split(split)?;
    let mia = mia_score(model, &split.forget, &sets.non_members, &sets.member_probe)?;
    let fresh = confidences(model, sets.fresh.features())?;
    Ok(Evaluation {
        raw: RawMetrics {
            fa: accuracy(model, &split.forget)?,
            ra: accuracy(model, &split.retain)?,
            ta: accuracy(model, &split.test)?,
            mia: mia.score,
        },
        fresh_non_member_rate: if mia.degenerate {
            50.0
        } else {
            mia.attacker.non_member_rate(&fresh)
        },
        mia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Layer, NetConfig, ParameterSet, QuantPolicy};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    /// Identity network on K inputs: logits equal the features.
    fn identity_model(k: usize) -> Model {
        let layer = Layer {
            name: "fc0".into(),
            weights: Array2::eye(k),
            bias: ndarray::Array1::zeros(k),
        };
        let cfg = NetConfig::new(vec![k, k], QuantPolicy::full_precision()).unwrap();
        Model::new(cfg, ParameterSet::new(vec![layer]).unwrap()).unwrap()
    }

    fn set(features: Array2<f64>, labels: Vec<usize>, k: usize) -> LabeledSet {
        LabeledSet::new(features, labels, k, "t").unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let m = identity_model(3);
        let x = array![[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]];
        assert_eq!(
            accuracy(&m, &set(x.clone(), vec![0, 1, 2], 3)).unwrap(),
            100.0
        );

        let x10 = Array2::from_shape_fn((10, 3), |(i, j)| if j == i % 3 { 1.0 } else { 0.0 });
        let mut labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        labels[4] = 0;
        assert_eq!(accuracy(&m, &set(x10, labels, 3)).unwrap(), 90.0);
    }

    #[test]
    fn uniform_outputs_score_class_zero_frequency() {
        let m = identity_model(4);
        let labels: Vec<usize> = (0..40).map(|i| (i * 7) % 4).collect();
        let x = Array2::from_elem((40, 4), 0.25);
        let oracle = 100.0 * labels.iter().filter(|&&y| y == 0).count() as f64 / 40.0;
        assert_eq!(accuracy(&m, &set(x, labels, 4)).unwrap(), oracle);
    }

    #[test]
    fn average_gap_examples() {
        let r = RawMetrics {
            fa: 90.0,
            ra: 95.0,
            ta: 88.0,
            mia: 20.0,
        };
        assert_eq!(average_gap(&r, &r).ag, 0.0);
        let m = RawMetrics {
            fa: 90.2,
            ra: 95.14,
            ta: 88.33,
            mia: 21.64,
        };
        assert!((average_gap(&m, &r).ag - 0.5775).abs() < 1e-9);
        let m = RawMetrics {
            fa: 91.0,
            ra: 93.0,
            ta: 91.0,
            mia: 16.0,
        };
        assert_eq!(average_gap(&m, &r).ag, 2.5);
    }

    #[test]
    fn constant_confidences_are_degenerate() {
        let a = fit_threshold(&[0.7; 5], &[0.7; 8]).unwrap();
        assert!(a.degenerate);
        let m = identity_model(2);
        let x = Array2::from_elem((6, 2), 0.0);
        let s = set(x, vec![0, 1, 0, 1, 0, 1], 2);
        let r = mia_score(&m, &s, &s, &s).unwrap();
        assert_eq!(r.score, 50.0);
        assert!(r.degenerate);
    }

    #[test]
    fn separable_confidences_are_split_perfectly() {
        let a = fit_threshold(&[0.9, 0.95, 0.99], &[0.5, 0.6]).unwrap();
        assert_eq!(a.balanced_accuracy, 1.0);
        assert_eq!(a.threshold, 0.75);
        assert_eq!(a.non_member_rate(&[0.7, 0.8]), 50.0);
    }

    #[test]
    fn adjacent_floats_keep_their_own_split() {
        let lo = 0.9f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = candidate_thresholds(&[hi], &[lo]);
        assert_eq!(t.len(), 3);
        assert!(t[1] > lo && t[1] <= hi);
        let a = fit_threshold(&[hi, hi], &[lo, lo]).unwrap();
        assert_eq!(a.balanced_accuracy, 1.0);
        assert!(a.is_member(hi) && !a.is_member(lo));
    }

    /// Scans every candidate against every point.
    fn brute_force(members: &[f64], non_members: &[f64]) -> (f64, f64) {
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        for t in candidate_thresholds(members, non_members) {
            let ba = balanced_accuracy(t, members, non_members);
            if ba > best.1 {
                best = (t, ba);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn fitted_threshold_matches_exhaustive_scan(
            members in proptest::collection::vec(0.0f64..1.0, 1..40),
            non_members in proptest::collection::vec(0.0f64..1.0, 1..40),
            coarse in any::<bool>(),
        ) {
            // Coarse grids force ties between confidences.
            let snap = |v: Vec<f64>| if coarse {
                v.into_iter().map(|c| (c * 5.0).round() / 5.0).collect()
            } else { v };
            let (members, non_members): (Vec<f64>, Vec<f64>) = (snap(members), snap(non_members));
            let fit = fit_threshold(&members, &non_members).unwrap();
            if !fit.degenerate {
                let (t, ba) = brute_force(&members, &non_members);
                prop_assert_eq!(fit.threshold, t);
                prop_assert_eq!(fit.balanced_accuracy, ba);
                for c in candidate_thresholds(&members, &non_members) {
                    prop_assert!(balanced_accuracy(c, &members, &non_members) <= fit.balanced_accuracy);
                }
            }
        }

        #[test]
        fn average_gap_is_symmetric_and_bounded(
            a in proptest::array::uniform4(0.0f64..100.0),
            b in proptest::array::uniform4(0.0f64..100.0),
        ) {
            let (a, b) = (RawMetrics::from_array(a), RawMetrics::from_array(b));
            let ab = average_gap(&a, &b);
            prop_assert_eq!(ab.ag, average_gap(&b, &a).ag);
            prop_assert!(ab.ag >= 0.0);
            let mean = ab.gaps.as_array().iter().sum::<f64>() / 4.0;
            prop_assert!((ab.ag - mean).abs() <= 1e-9);
        }
    }
}
