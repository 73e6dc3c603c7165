//! Accuracy, confusion matrices and multi-run aggregates.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{ClassLabel, DatasetSplit, LabeledFrame, Partition};
use crate::error::{Error, Result};

pub type Pair = (ClassLabel, ClassLabel);

pub fn accuracy(pairs: &[Pair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Capacity(
            "accuracy of an empty prediction list".into(),
        ));
    }
    let correct = pairs.iter().filter(|(t, p)| t.id == p.id).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Rows are true classes, columns predicted classes, both in roster order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub roster: Vec<ClassLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(roster: &[ClassLabel]) -> Self {
        let n = roster.len();
        ConfusionMatrix {
            roster: roster.to_vec(),
            counts: vec![vec![0; n]; n],
        }
    }

    fn index_of(&self, label: &ClassLabel) -> Result<usize> {
        self.roster
            .iter()
            .position(|l| l.id == label.id)
            .ok_or_else(|| Error::Roster(format!("label {label} is not in the class roster")))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Adds another matrix over the same roster.
    pub fn accumulate(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.roster != other.roster {
            return Err(Error::Roster(
                "confusion matrices have different rosters".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// `true\pred,<codes>` header then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in &self.roster {
            out.push(',');
            out.push_str(&l.code);
        }
        out.push('\n');
        for (l, row) in self.roster.iter().zip(&self.counts) {
            out.push_str(&l.code);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(pairs: &[Pair], roster: &[ClassLabel]) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::zeros(roster);
    for (t, p) in pairs {
        let (i, j) = (m.index_of(t)?, m.index_of(p)?);
        m.counts[i][j] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunAggregate {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl RunAggregate {
    /// `mean ± std` at three significant figures, trailing zeros dropped.
    pub fn display(&self) -> String {
        format!("{}±{}", format_sig3(self.mean), format_sig3(self.std))
    }
}

/// Mean and sample (n-1) standard deviation; a single run has std 0.
pub fn aggregate(accuracies: &[f64]) -> Result<RunAggregate> {
    if accuracies.is_empty() {
        return Err(Error::Capacity("aggregate needs at least one run".into()));
    }
    if accuracies.iter().all(|&a| a == accuracies[0]) {
        return Ok(RunAggregate {
            accuracies: accuracies.to_vec(),
            mean: accuracies[0],
            std: 0.0,
        });
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(RunAggregate {
        accuracies: accuracies.to_vec(),
        mean,
        std,
    })
}

pub fn format_sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Extra metric: each sample is assigned the most frequent frame prediction (lowest id on
/// ties) and scored once. Frame accuracy remains the primary number.
pub fn majority_vote_accuracy(frames: &[LabeledFrame], predicted: &[ClassLabel]) -> Result<f64> {
    if frames.is_empty() || frames.len() != predicted.len() {
        return Err(Error::Capacity(format!(
            "majority vote over {} frames and {} predictions",
            frames.len(),
            predicted.len()
        )));
    }
    let mut votes: BTreeMap<&str, (usize, BTreeMap<usize, usize>)> = BTreeMap::new();
    for (f, p) in frames.iter().zip(predicted) {
        let entry = votes
            .entry(&f.sample_id)
            .or_insert((f.label.id, BTreeMap::new()));
        *entry.1.entry(p.id).or_default() += 1;
    }
    let correct = votes
        .values()
        .filter(|(truth, counts)| {
            let best = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(id, _)| *id);
            best == Some(*truth)
        })
        .count();
    Ok(correct as f64 / votes.len() as f64)
}

/// SHA-256 over labels and pixel bytes of every partition, in partition order.
pub fn data_hash(split: &DatasetSplit) -> String {
    let mut h = Sha256::new();
    for p in Partition::ALL {
        h.update(p.name().as_bytes());
        for f in split.partition(p) {
            h.update(f.sample_id.as_bytes());
            h.update((f.label.id as u64).to_le_bytes());
            h.update((f.frame_index as u64).to_le_bytes());
            for v in f.image.pixels() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub rank: String,
    pub view: String,
    pub data_hash: String,
    pub seed: u64,
}

/// Machine-readable result of several runs on one partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub run_count: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Summed over runs.
    pub confusion: Vec<Vec<u64>>,
    pub classes: Vec<String>,
    pub metadata: ReportMetadata,
}

impl EvaluationReport {
    pub fn from_runs(runs: &[(f64, ConfusionMatrix)], metadata: ReportMetadata) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Capacity("report needs at least one run".into()))?;
        let mut total = ConfusionMatrix::zeros(&first.1.roster);
        for (_, m) in runs {
            total.accumulate(m)?;
        }
        let agg = aggregate(&runs.iter().map(|r| r.0).collect::<Vec<_>>())?;
        Ok(EvaluationReport {
            run_count: runs.len(),
            accuracies: agg.accuracies,
            mean: agg.mean,
            std: agg.std,
            confusion: total.counts,
            classes: total.roster.iter().map(|l| l.code.clone()).collect(),
            metadata,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l(id: usize) -> ClassLabel {
        ClassLabel::new(id, format!("C{id}"))
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[(l(0), l(0)), (l(1), l(1))]).unwrap(), 1.0);
        assert_eq!(accuracy(&[(l(0), l(1))]).unwrap(), 0.0);
        let pairs = [(l(0), l(0)), (l(1), l(1)), (l(2), l(2)), (l(2), l(0))];
        assert_eq!(accuracy(&pairs).unwrap(), 0.75);
        assert!(matches!(accuracy(&[]), Err(Error::Capacity(_))));
    }

    #[test]
    fn perfect_predictions_give_a_diagonal() {
        let roster: Vec<_> = (0..5).map(l).collect();
        let pairs: Vec<_> = (0..500).map(|i| (l(i % 5), l(i % 5))).collect();
        let m = confusion(&pairs, &roster).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.counts[i][j], if i == j { 100 } else { 0 });
            }
        }
        assert!(matches!(
            confusion(&[(l(7), l(0))], &roster),
            Err(Error::Roster(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[0.9, 0.9, 0.9]).unwrap();
        assert_eq!((a.mean, a.std), (0.9, 0.0));
        let b = aggregate(&[0.8, 0.9]).unwrap();
        assert!((b.mean - 0.85).abs() < 1e-15);
        assert!((b.std - 0.1 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(aggregate(&[0.4]).unwrap().std, 0.0);
    }

    #[test]
    fn three_significant_figures() {
        assert_eq!(format_sig3(0.97), "0.97");
        assert_eq!(format_sig3(0.0271828), "0.0272");
        assert_eq!(format_sig3(1.0), "1");
        assert_eq!(format_sig3(0.0), "0");
        assert_eq!(format_sig3(0.8123), "0.812");
        assert_eq!(
            RunAggregate {
                accuracies: vec![],
                mean: 1.0,
                std: 0.0
            }
            .display(),
            "1±0"
        );
    }

    #[test]
    fn majority_vote_scores_samples() {
        let frame = |s: &str, id| LabeledFrame {
            image: crate::dataset::Image::zeros(1, 1),
            label: l(id),
            sample_id: s.into(),
            frame_index: 0,
        };
        let frames = [
            frame("a", 0),
            frame("a", 0),
            frame("a", 0),
            frame("b", 1),
            frame("b", 1),
        ];
        let predicted = [l(0), l(1), l(0), l(0), l(1)];
        // sample b ties 1:1 and falls to class 0
        assert_eq!(majority_vote_accuracy(&frames, &predicted).unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn trace_over_total_is_accuracy(raw in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let roster: Vec<_> = (0..4).map(l).collect();
            let pairs: Vec<_> = raw.iter().map(|&(t, p)| (l(t), l(p))).collect();
            let m = confusion(&pairs, &roster).unwrap();
            prop_assert_eq!(m.total() as usize, pairs.len());
            let acc = accuracy(&pairs).unwrap();
            prop_assert_eq!(m.trace() as f64 / m.total() as f64, acc);
        }

        #[test]
        fn aggregate_is_permutation_invariant(mut xs in prop::collection::vec(0.0f64..=1.0, 1..10), seed in any::<u64>()) {
            let a = aggregate(&xs).unwrap();
            prop_assert!(a.std >= 0.0);
            let n = xs.len();
            xs.rotate_left((seed % n as u64) as usize);
            xs.reverse();
            let b = aggregate(&xs).unwrap();
            prop_assert!((a.mean - b.mean).abs() <= 1e-15);
            prop_assert!((a.std - b.std).abs() <= 1e-12);
            let equal = xs.iter().all(|&x| x == xs[0]);
            prop_assert_eq!(a.std == 0.0, equal);
        }
    }
}
