//! Classification metrics: confusion matrix, ROC-AUC, precision/recall and
//! worst-group accuracy.
//!
//! Multiclass ROC-AUC is the macro average of one-vs-rest AUCs over the
//! classes present in the labels. Argmax ties resolve to the lowest class index.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// `classes x classes` counts, rows = true label, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(preds: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::LengthMismatch(preds.len(), labels.len()));
        }
        let mut counts = vec![0u64; classes * classes];
        for (&p, &t) in preds.iter().zip(labels) {
            for v in [p, t] {
                if v >= classes {
                    return Err(Error::LabelOutOfRange { label: v, classes });
                }
            }
            counts[t * classes + p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.classes)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        correct as f64 / self.total() as f64
    }

    /// Per-class recall; `None` for classes without samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let n: u64 = self.row(c).iter().sum();
                (n > 0).then(|| self.get(c, c) as f64 / n as f64)
            })
            .collect()
    }

    /// Row percentages rounded to integers by largest remainder, so every
    /// non-empty row sums to exactly 100.
    pub fn row_percentages(&self) -> Vec<Vec<u32>> {
        self.rows()
            .map(|row| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    return vec![0; row.len()];
                }
                let exact: Vec<f64> = row.iter().map(|&c| c as f64 * 100.0 / n as f64).collect();
                let mut out: Vec<u32> = exact.iter().map(|v| libm::floor(*v) as u32).collect();
                let short = 100 - out.iter().sum::<u32>();
                let mut order: Vec<usize> = (0..row.len()).collect();
                order.sort_by(|&a, &b| {
                    let ra = exact[a] - libm::floor(exact[a]);
                    let rb = exact[b] - libm::floor(exact[b]);
                    rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
                });
                for &i in order.iter().take(short as usize) {
                    out[i] += 1;
                }
                out
            })
            .collect()
    }

    /// Precision and recall of one class read off the matrix.
    pub fn precision_recall(&self, positive: usize) -> PrecisionRecall {
        let tp = self.get(positive, positive);
        let predicted: u64 = (0..self.classes).map(|t| self.get(t, positive)).sum();
        let actual: u64 = self.row(positive).iter().sum();
        PrecisionRecall::from_counts(tp, predicted - tp, actual - tp)
    }
}

/// Precision/recall with explicit flags for the undefined cases (reported as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

impl PrecisionRecall {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { (0.0, false) } else { (num as f64 / den as f64, true) };
        let (precision, precision_defined) = ratio(tp, tp + fp);
        let (recall, recall_defined) = ratio(tp, tp + fn_);
        Self { precision, recall, precision_defined, recall_defined }
    }
}

/// Precision and recall of `positive`, counted directly from predictions.
pub fn precision_recall(preds: &[usize], labels: &[usize], positive: usize) -> Result<PrecisionRecall> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in preds.iter().zip(labels) {
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(PrecisionRecall::from_counts(tp, fp, fn_))
}

/// Binary ROC-AUC from the Mann-Whitney rank statistic with midranks for ties.
/// `None` when either class is absent.
pub fn roc_auc_binary(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch(scores.len(), positive.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share the midrank.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

/// One-vs-rest ROC-AUC per class and its macro average.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RocAuc {
    pub macro_auc: f64,
    /// `None` where a class is absent from the labels (or every label is that class).
    pub per_class: Vec<Option<f64>>,
}

/// `probs` holds one row of `classes` scores per sample. With two classes the
/// result equals the binary AUC of the class-1 score.
pub fn roc_auc(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<RocAuc> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch(probs.len(), labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if let Some(row) = probs.iter().find(|r| r.len() != classes) {
        return Err(Error::LengthMismatch(row.len(), classes));
    }
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let auc = roc_auc_binary(&scores, &pos)?;
        if auc.is_none() {
            log::warn!("class {c} has no positive or no negative samples; skipped in macro ROC-AUC");
        }
        per_class.push(auc);
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::SingleClass);
    }
    let macro_auc = if classes == 2 {
        per_class[1].expect("both classes present")
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(RocAuc { macro_auc, per_class })
}

/// Minimum accuracy over groups that have at least one sample.
pub fn worst_group(per_group: &[Option<f64>]) -> Option<f64> {
    per_group.iter().flatten().copied().reduce(f64::min)
}

/// Everything reported for one evaluation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    /// `None` marks a class absent from the evaluated labels.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub worst_group_accuracy: f64,
    pub roc_auc: RocAuc,
    /// Per-class precision/recall (one-vs-rest).
    pub precision_recall: Vec<PrecisionRecall>,
    pub n_samples: usize,
}

impl MetricsReport {
    /// Build a report from class-probability rows and true labels.
    pub fn from_probabilities(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty);
        }
        let preds: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
        let confusion = ConfusionMatrix::new(&preds, labels, classes)?;
        let per_class_accuracy = confusion.per_class_accuracy();
        let worst_group_accuracy = worst_group(&per_class_accuracy).ok_or(Error::Empty)?;
        let roc_auc = roc_auc(probs, labels, classes)
            .unwrap_or_else(|_| RocAuc { macro_auc: f64::NAN, per_class: vec![None; classes] });
        let precision_recall = (0..classes).map(|c| confusion.precision_recall(c)).collect();
        Ok(Self {
            accuracy: confusion.accuracy(),
            confusion,
            per_class_accuracy,
            worst_group_accuracy,
            roc_auc,
            precision_recall,
            n_samples: labels.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Exhaustive pairwise AUC: wins plus half-ties over all (pos, neg) pairs.
    fn pairwise_auc(scores: &[f64], pos: &[bool]) -> Option<f64> {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        (pairs > 0.0).then(|| wins / pairs)
    }

    #[test]
    fn perfect_predictions_fill_the_diagonal() {
        let labels = [0, 1, 2, 3, 1, 2];
        let cm = ConfusionMatrix::new(&labels, &labels, 4).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                if t != p {
                    assert_eq!(cm.get(t, p), 0);
                }
            }
        }
        assert_eq!(cm.accuracy(), 1.0);
    }

    #[test]
    fn all_zero_predictions_fill_one_column() {
        let labels = [0, 1, 2, 3, 3];
        let cm = ConfusionMatrix::new(&[0; 5], &labels, 4).unwrap();
        for t in 0..4 {
            for p in 1..4 {
                assert_eq!(cm.get(t, p), 0);
            }
        }
        assert_eq!(cm.per_class_accuracy(), vec![Some(1.0), Some(0.0), Some(0.0), Some(0.0)]);
    }

    #[test]
    fn percentages_sum_to_one_hundred() {
        let preds = [0, 1, 2, 0, 1, 2, 2, 1, 0, 0, 1];
        let labels = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
        let cm = ConfusionMatrix::new(&preds, &labels, 4).unwrap();
        let pct = cm.row_percentages();
        for row in &pct[..3] {
            assert_eq!(row.iter().sum::<u32>(), 100);
        }
        assert_eq!(pct[0], vec![34, 33, 33, 0]);
        assert_eq!(pct[3], vec![0, 0, 0, 0]);
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(ConfusionMatrix::new(&[0], &[0, 1], 2), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(ConfusionMatrix::new(&[0], &[4], 4), Err(Error::LabelOutOfRange { label: 4, classes: 4 })));
    }

    #[test]
    fn auc_examples() {
        let pos = [false, false, true, true];
        assert_eq!(roc_auc_binary(&[0.1, 0.2, 0.8, 0.9], &pos).unwrap(), Some(1.0));
        assert_eq!(roc_auc_binary(&[0.5; 4], &pos).unwrap(), Some(0.5));
        assert_eq!(roc_auc_binary(&[0.1, 0.4, 0.35, 0.8], &pos).unwrap(), Some(0.75));
        assert_eq!(roc_auc_binary(&[0.1, 0.2], &[true, true]).unwrap(), None);
    }

    #[test]
    fn multiclass_skips_absent_class() {
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.2, 0.7, 0.1], vec![0.6, 0.3, 0.1], vec![0.1, 0.8, 0.1]];
        let auc = roc_auc(&probs, &[0, 1, 0, 1], 3).unwrap();
        assert_eq!(auc.per_class[2], None);
        assert_eq!(auc.macro_auc, 1.0);
    }

    #[test]
    fn precision_recall_examples() {
        let labels = [1, 0, 1, 0];
        let pr = precision_recall(&labels, &labels, 1).unwrap();
        assert_eq!((pr.precision, pr.recall), (1.0, 1.0));
        let pr = precision_recall(&[1, 1, 1, 1], &labels, 1).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.5, 1.0));
        let pr = precision_recall(&[0, 0], &[0, 0], 1).unwrap();
        assert!(!pr.precision_defined && !pr.recall_defined);
        assert_eq!(pr.precision, 0.0);
    }

    #[test]
    fn worst_group_examples() {
        assert_eq!(worst_group(&[Some(0.9), Some(0.4), Some(0.8)]), Some(0.4));
        assert_eq!(worst_group(&[Some(0.7)]), Some(0.7));
        assert_eq!(worst_group(&[Some(0.9), None, Some(0.6)]), Some(0.6));
        assert_eq!(worst_group(&[None]), None);
    }

    #[test]
    fn report_accuracy_matches_direct_count() {
        let probs = vec![vec![0.6, 0.4], vec![0.5, 0.5], vec![0.1, 0.9], vec![0.8, 0.2]];
        let labels = [0, 1, 1, 1];
        let r = MetricsReport::from_probabilities(&probs, &labels, 2).unwrap();
        // Tie in row 2 resolves to class 0.
        assert_eq!(r.confusion.get(1, 0), 2);
        assert_eq!(r.accuracy, 0.5);
        assert_abs_diff_eq!(r.worst_group_accuracy, 1.0 / 3.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            data in proptest::collection::vec((0u8..5, any::<bool>()), 2..12),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 4.0).collect();
            let pos: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
            let fast = roc_auc_binary(&scores, &pos).unwrap();
            let slow = pairwise_auc(&scores, &pos);
            match (fast, slow) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            data in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..20),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let pos: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
            let warped: Vec<f64> = scores.iter().map(|s| libm::exp(*s) * 3.0 + 1.0).collect();
            prop_assert_eq!(roc_auc_binary(&scores, &pos).unwrap(), roc_auc_binary(&warped, &pos).unwrap());
        }

        #[test]
        fn swapping_labels_complements_auc(
            data in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..20),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let pos: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
            let neg: Vec<bool> = pos.iter().map(|p| !p).collect();
            if let (Some(a), Some(b)) = (roc_auc_binary(&scores, &pos).unwrap(), roc_auc_binary(&scores, &neg).unwrap()) {
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn precision_recall_agree_with_confusion(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
            positive in 0usize..4,
        ) {
            let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let cm = ConfusionMatrix::new(&preds, &labels, 4).unwrap();
            prop_assert_eq!(cm.precision_recall(positive), precision_recall(&preds, &labels, positive).unwrap());
            let direct = preds.iter().zip(&labels).filter(|(p, t)| p == t).count() as f64 / preds.len() as f64;
            prop_assert_eq!(cm.accuracy(), direct);
        }

        #[test]
        fn metrics_are_permutation_invariant(
            rows in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0usize..3), 3..30),
            rot in 0usize..30,
        ) {
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1, r.2]).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.3).collect();
            let k = rot % rows.len();
            let mut p2 = probs.clone();
            let mut l2 = labels.clone();
            p2.rotate_left(k);
            l2.rotate_left(k);
            let a = MetricsReport::from_probabilities(&probs, &labels, 3).unwrap();
            let b = MetricsReport::from_probabilities(&p2, &l2, 3).unwrap();
            prop_assert_eq!(a.confusion, b.confusion);
            prop_assert_eq!(a.roc_auc.per_class, b.roc_auc.per_class);
        }
    }
}
