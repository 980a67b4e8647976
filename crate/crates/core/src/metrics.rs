//! Segmentation metrics over a confusion matrix.
//!
//! `counts[i][j]` is the number of pixels of true class `i` predicted as
//! class `j`; `t_i` denotes the ground-truth pixel count of class `i` (the
//! row sum). The four metrics:
//!
//! - pixel accuracy: `sum_i n_ii / sum_i t_i`
//! - mean accuracy: mean of `n_ii / t_i` over classes with `t_i > 0`
//! - mean IU: mean of `n_ii / (t_i + pred_i - n_ii)` over classes present
//!   in the truth or the prediction
//! - frequency-weighted IU: the same per-class IUs weighted by `t_i / total`
//!
//! Classes absent from the ground truth are excluded from the means rather
//! than contributing 0/0. One matrix is normally accumulated across a whole
//! test set, yielding dataset-level numbers.

use crate::error::{Error, Result};
use crate::imageio::LabelImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_c: usize,
    counts: Vec<u64>, // row-major, counts[truth * n_c + pred]
}

impl ConfusionMatrix {
    pub fn new(n_c: usize) -> Result<ConfusionMatrix> {
        if n_c == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(ConfusionMatrix {
            n_c,
            counts: vec![0; n_c * n_c],
        })
    }

    /// Builds a matrix from explicit rows (truth-major), mainly for tests
    /// and tools.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<ConfusionMatrix> {
        let n_c = rows.len();
        let mut cm = ConfusionMatrix::new(n_c)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_c {
                return Err(Error::ListLengthMismatch {
                    context: "confusion matrix row",
                    left: row.len(),
                    right: n_c,
                });
            }
            for (j, &c) in row.iter().enumerate() {
                cm.counts[i * n_c + j] = c;
            }
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.n_c
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_c + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.n_c {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.n_c,
                });
            }
        }
        self.counts[truth * self.n_c + pred] += 1;
        Ok(())
    }

    /// Adds one prediction/truth image pair; call repeatedly to accumulate
    /// a whole dataset into one matrix.
    pub fn accumulate(&mut self, pred: &LabelImage, truth: &LabelImage) -> Result<()> {
        if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
            return Err(Error::DimensionMismatch {
                context: "confusion accumulate".to_string(),
                expected_width: truth.width(),
                expected_height: truth.height(),
                actual_width: pred.width(),
                actual_height: pred.height(),
            });
        }
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            self.record(t as usize, p as usize)?;
        }
        Ok(())
    }

    /// Elementwise sum, so per-image matrices can be computed concurrently
    /// and reduced.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_c != self.n_c {
            return Err(Error::ClassCountMismatch {
                net: self.n_c,
                data: other.n_c,
            });
        }
        for (a, &b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn truth_totals(&self) -> Vec<u64> {
        (0..self.n_c)
            .map(|i| self.counts[i * self.n_c..(i + 1) * self.n_c].iter().sum())
            .collect()
    }

    fn pred_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.n_c];
        for row in self.counts.chunks_exact(self.n_c) {
            for (total, &count) in totals.iter_mut().zip(row) {
                *total += count;
            }
        }
        totals
    }

    fn check_nonempty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::EmptyMatrix),
            total => Ok(total),
        }
    }

    /// Fraction of correctly labeled pixels: trace over total.
    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.check_nonempty()?;
        let trace: u64 = (0..self.n_c).map(|i| self.count(i, i)).sum();
        Ok(trace as f64 / total as f64)
    }

    /// Mean per-class recall over classes that occur in the ground truth.
    pub fn mean_accuracy(&self) -> Result<f64> {
        self.check_nonempty()?;
        let truth = self.truth_totals();
        let mut sum = 0.0;
        let mut present = 0usize;
        for (i, &t) in truth.iter().enumerate() {
            if t > 0 {
                sum += self.count(i, i) as f64 / t as f64;
                present += 1;
            }
        }
        Ok(sum / present as f64)
    }

    fn iu(&self, truth: &[u64], pred: &[u64], class: usize) -> f64 {
        let n_ii = self.count(class, class);
        let union = truth[class] + pred[class] - n_ii;
        n_ii as f64 / union as f64
    }

    /// Mean intersection-over-union across classes present in the truth or
    /// the prediction.
    pub fn mean_iu(&self) -> Result<f64> {
        self.check_nonempty()?;
        let (truth, pred) = (self.truth_totals(), self.pred_totals());
        let mut sum = 0.0;
        let mut present = 0usize;
        for i in 0..self.n_c {
            if truth[i] + pred[i] > 0 {
                sum += self.iu(&truth, &pred, i);
                present += 1;
            }
        }
        Ok(sum / present as f64)
    }

    /// Per-class IU weighted by ground-truth frequency.
    pub fn fw_iu(&self) -> Result<f64> {
        let total = self.check_nonempty()?;
        let (truth, pred) = (self.truth_totals(), self.pred_totals());
        let mut sum = 0.0;
        for i in 0..self.n_c {
            if truth[i] > 0 {
                sum += truth[i] as f64 * self.iu(&truth, &pred, i);
            }
        }
        Ok(sum / total as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SplitMix64;

    fn worked_example() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap()
    }

    #[test]
    fn worked_example_hand_values() {
        let cm = worked_example();
        assert!((cm.pixel_accuracy().unwrap() - 0.7).abs() < 1e-12);
        assert!((cm.mean_accuracy().unwrap() - 17.0 / 24.0).abs() < 1e-12);
        assert!((cm.mean_iu().unwrap() - 15.0 / 28.0).abs() < 1e-12);
        assert!((cm.fw_iu().unwrap() - 19.0 / 35.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_gives_ones() {
        let mut cm = ConfusionMatrix::new(3).unwrap();
        let img = LabelImage::new(10, 10, vec![2; 100]).unwrap();
        cm.accumulate(&img, &img).unwrap();
        assert_eq!(cm.count(2, 2), 100);
        assert_eq!(cm.pixel_accuracy().unwrap(), 1.0);
        assert_eq!(cm.mean_accuracy().unwrap(), 1.0);
        assert_eq!(cm.mean_iu().unwrap(), 1.0);
        assert_eq!(cm.fw_iu().unwrap(), 1.0);
    }

    #[test]
    fn all_wrong_two_class_prediction() {
        let cm = ConfusionMatrix::from_rows(&[vec![0, 5], vec![7, 0]]).unwrap();
        assert_eq!(cm.pixel_accuracy().unwrap(), 0.0);
        assert_eq!(cm.mean_accuracy().unwrap(), 0.0);
        assert_eq!(cm.mean_iu().unwrap(), 0.0);
        assert_eq!(cm.fw_iu().unwrap(), 0.0);
    }

    #[test]
    fn absent_class_excluded_from_means() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 0], vec![0, 0]]).unwrap();
        assert_eq!(cm.mean_accuracy().unwrap(), 1.0);
        assert_eq!(cm.mean_iu().unwrap(), 1.0);
        assert_eq!(cm.fw_iu().unwrap(), 1.0);
    }

    #[test]
    fn class_present_only_in_prediction_counts_toward_mean_iu() {
        // class 1 never occurs in truth but is predicted: IU_1 = 0 joins the mean
        let cm = ConfusionMatrix::from_rows(&[vec![4, 2], vec![0, 0]]).unwrap();
        assert_eq!(cm.mean_accuracy().unwrap(), 4.0 / 6.0);
        assert!((cm.mean_iu().unwrap() - 0.5 * (4.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_confusion() {
        let mut cm = ConfusionMatrix::new(2).unwrap();
        let pred = LabelImage::new(1, 1, vec![1]).unwrap();
        let truth = LabelImage::new(1, 1, vec![0]).unwrap();
        cm.accumulate(&pred, &truth).unwrap();
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn accumulation_is_additive() {
        let mut rng = SplitMix64::new(3);
        let a_pred: Vec<u8> = (0..64).map(|_| rng.below(3) as u8).collect();
        let a_truth: Vec<u8> = (0..64).map(|_| rng.below(3) as u8).collect();
        let b_pred: Vec<u8> = (0..64).map(|_| rng.below(3) as u8).collect();
        let b_truth: Vec<u8> = (0..64).map(|_| rng.below(3) as u8).collect();

        let mut separate = ConfusionMatrix::new(3).unwrap();
        separate
            .accumulate(
                &LabelImage::new(8, 8, a_pred.clone()).unwrap(),
                &LabelImage::new(8, 8, a_truth.clone()).unwrap(),
            )
            .unwrap();
        separate
            .accumulate(
                &LabelImage::new(8, 8, b_pred.clone()).unwrap(),
                &LabelImage::new(8, 8, b_truth.clone()).unwrap(),
            )
            .unwrap();

        let concat = |mut x: Vec<u8>, y: Vec<u8>| {
            x.extend(y);
            x
        };
        let mut joined = ConfusionMatrix::new(3).unwrap();
        joined
            .accumulate(
                &LabelImage::new(8, 16, concat(a_pred, b_pred)).unwrap(),
                &LabelImage::new(8, 16, concat(a_truth, b_truth)).unwrap(),
            )
            .unwrap();
        assert_eq!(separate, joined);
    }

    #[test]
    fn merge_equals_joint_accumulation() {
        let mut rng = SplitMix64::new(9);
        let mut total = ConfusionMatrix::new(4).unwrap();
        let mut parts = ConfusionMatrix::new(4).unwrap();
        for _ in 0..3 {
            let pred: Vec<u8> = (0..30).map(|_| rng.below(4) as u8).collect();
            let truth: Vec<u8> = (0..30).map(|_| rng.below(4) as u8).collect();
            let pred = LabelImage::new(6, 5, pred).unwrap();
            let truth = LabelImage::new(6, 5, truth).unwrap();
            total.accumulate(&pred, &truth).unwrap();
            let mut part = ConfusionMatrix::new(4).unwrap();
            part.accumulate(&pred, &truth).unwrap();
            parts.merge(&part).unwrap();
        }
        assert_eq!(total, parts);
        assert!(matches!(
            parts.merge(&ConfusionMatrix::new(3).unwrap()),
            Err(Error::ClassCountMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ConfusionMatrix::new(0), Err(Error::EmptyMatrix)));
        let mut cm = ConfusionMatrix::new(2).unwrap();
        assert!(matches!(
            cm.record(2, 0),
            Err(Error::LabelOutOfRange { .. })
        ));
        let pred = LabelImage::new(2, 2, vec![0; 4]).unwrap();
        let truth = LabelImage::new(2, 1, vec![0; 2]).unwrap();
        assert!(matches!(
            cm.accumulate(&pred, &truth),
            Err(Error::DimensionMismatch { .. })
        ));
        for metric in [
            ConfusionMatrix::pixel_accuracy,
            ConfusionMatrix::mean_accuracy,
            ConfusionMatrix::mean_iu,
            ConfusionMatrix::fw_iu,
        ] {
            assert!(matches!(metric(&cm), Err(Error::EmptyMatrix)));
        }
    }

    #[test]
    fn uniform_class_frequencies_make_fw_equal_mean_iu() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![1, 3]]).unwrap();
        assert!((cm.fw_iu().unwrap() - cm.mean_iu().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn iu_bounded_by_recall_and_precision() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..50 {
            let n_c = 2 + rng.below(4);
            let rows: Vec<Vec<u64>> = (0..n_c)
                .map(|_| (0..n_c).map(|_| rng.below(20) as u64).collect())
                .collect();
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            if cm.total() == 0 {
                continue;
            }
            let truth = cm.truth_totals();
            let pred = cm.pred_totals();
            for i in 0..n_c {
                if truth[i] == 0 || pred[i] == 0 {
                    continue;
                }
                let iu = cm.iu(&truth, &pred, i);
                let recall = cm.count(i, i) as f64 / truth[i] as f64;
                let precision = cm.count(i, i) as f64 / pred[i] as f64;
                assert!(iu <= recall + 1e-15);
                assert!(iu <= precision + 1e-15);
            }
        }
    }

    /// Recomputes all four metrics from raw label arrays, never building a
    /// confusion matrix.
    fn oracle(pred: &[u8], truth: &[u8], n_c: usize) -> (f64, f64, f64, f64) {
        let mut tp = vec![0u64; n_c];
        let mut in_truth = vec![0u64; n_c];
        let mut in_pred = vec![0u64; n_c];
        for (&p, &t) in pred.iter().zip(truth) {
            in_truth[t as usize] += 1;
            in_pred[p as usize] += 1;
            if p == t {
                tp[t as usize] += 1;
            }
        }
        let total = truth.len() as f64;
        let pixel = tp.iter().sum::<u64>() as f64 / total;
        let mut recalls = Vec::new();
        let mut ius = Vec::new();
        let mut fw = 0.0;
        for i in 0..n_c {
            if in_truth[i] > 0 {
                recalls.push(tp[i] as f64 / in_truth[i] as f64);
            }
            let union = in_truth[i] + in_pred[i] - tp[i];
            if in_truth[i] + in_pred[i] > 0 {
                let iu = tp[i] as f64 / union as f64;
                ius.push(iu);
                fw += in_truth[i] as f64 * iu;
            }
        }
        let mean_acc = recalls.iter().sum::<f64>() / recalls.len() as f64;
        let mean_iu = ius.iter().sum::<f64>() / ius.len() as f64;
        (pixel, mean_acc, mean_iu, fw / total)
    }

    #[test]
    fn matches_per_pixel_oracle_on_random_pairs() {
        let mut rng = SplitMix64::new(23);
        for case in 0..100 {
            let n_c = [2usize, 3, 5][case % 3];
            let pred: Vec<u8> = (0..256).map(|_| rng.below(n_c) as u8).collect();
            let truth: Vec<u8> = (0..256).map(|_| rng.below(n_c) as u8).collect();
            let mut cm = ConfusionMatrix::new(n_c).unwrap();
            cm.accumulate(
                &LabelImage::new(16, 16, pred.clone()).unwrap(),
                &LabelImage::new(16, 16, truth.clone()).unwrap(),
            )
            .unwrap();
            let (pixel, mean_acc, mean_iu, fw) = oracle(&pred, &truth, n_c);
            assert!((cm.pixel_accuracy().unwrap() - pixel).abs() < 1e-12);
            assert!((cm.mean_accuracy().unwrap() - mean_acc).abs() < 1e-12);
            assert!((cm.mean_iu().unwrap() - mean_iu).abs() < 1e-12);
            assert!((cm.fw_iu().unwrap() - fw).abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_under_simultaneous_class_permutation() {
        let mut rng = SplitMix64::new(31);
        let n_c = 4;
        let perm = [2usize, 0, 3, 1];
        let pred: Vec<u8> = (0..400).map(|_| rng.below(n_c) as u8).collect();
        let truth: Vec<u8> = (0..400).map(|_| rng.below(n_c) as u8).collect();
        let permute = |v: &[u8]| -> Vec<u8> { v.iter().map(|&l| perm[l as usize] as u8).collect() };

        let mut plain = ConfusionMatrix::new(n_c).unwrap();
        plain
            .accumulate(
                &LabelImage::new(20, 20, pred.clone()).unwrap(),
                &LabelImage::new(20, 20, truth.clone()).unwrap(),
            )
            .unwrap();
        let mut permuted = ConfusionMatrix::new(n_c).unwrap();
        permuted
            .accumulate(
                &LabelImage::new(20, 20, permute(&pred)).unwrap(),
                &LabelImage::new(20, 20, permute(&truth)).unwrap(),
            )
            .unwrap();

        assert!(
            (plain.pixel_accuracy().unwrap() - permuted.pixel_accuracy().unwrap()).abs() < 1e-12
        );
        assert!(
            (plain.mean_accuracy().unwrap() - permuted.mean_accuracy().unwrap()).abs() < 1e-12
        );
        assert!((plain.mean_iu().unwrap() - permuted.mean_iu().unwrap()).abs() < 1e-12);
        assert!((plain.fw_iu().unwrap() - permuted.fw_iu().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval_and_hit_one_only_when_diagonal() {
        let mut rng = SplitMix64::new(37);
        for _ in 0..60 {
            let n_c = 2 + rng.below(3);
            let rows: Vec<Vec<u64>> = (0..n_c)
                .map(|_| (0..n_c).map(|_| rng.below(9) as u64).collect())
                .collect();
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            if cm.total() == 0 {
                continue;
            }
            let diagonal = (0..n_c).all(|i| {
                (0..n_c).all(|j| i == j || cm.count(i, j) == 0)
            });
            for metric in [
                ConfusionMatrix::pixel_accuracy,
                ConfusionMatrix::mean_accuracy,
                ConfusionMatrix::mean_iu,
                ConfusionMatrix::fw_iu,
            ] {
                let v = metric(&cm).unwrap();
                assert!((0.0..=1.0).contains(&v));
                assert_eq!(v == 1.0, diagonal, "value {v} diagonal {diagonal}");
            }
        }
    }
}
