use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K×K` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    classes: Vec<String>,
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Invalid(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if k == 0 {
        return Err(Error::Invalid("confusion matrix needs at least one class".into()));
    }
    let mut counts = vec![0u64; k * k];
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= k || p >= k {
            return Err(Error::Invalid(format!(
                "item {i} has true {t} / predicted {p}, outside 0..{k}"
            )));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        classes: (0..k).map(|c| c.to_string()).collect(),
    })
}

impl ConfusionMatrix {
    pub fn from_counts(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Invalid("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self {
            counts: rows.concat(),
            classes: (0..k).map(|c| c.to_string()).collect(),
        })
    }

    pub fn with_class_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::Invalid(format!(
                "{} class names for a {}-class matrix",
                names.len(),
                self.k()
            )));
        }
        self.classes = names.to_vec();
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k() + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k()).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|c| self.count(c, c)).sum()
    }

    /// Row sum: items whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k()).map(|p| self.count(c, p)).sum()
    }

    /// Column sum: items predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.k()).map(|t| self.count(t, c)).sum()
    }

    /// One-vs-rest reduction for class `c`.
    pub fn one_vs_rest(&self, c: usize) -> BinaryCounts {
        let tp = self.count(c, c);
        let fn_ = self.support(c) - tp;
        let fp = self.predicted(c) - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }

    /// Multiclass accuracy `trace / total × 100`; for two classes this is
    /// exactly [`BinaryCounts::accuracy`].
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Invalid("accuracy of an empty confusion matrix".into()));
        }
        Ok(self.trace() as f64 / total as f64 * 100.0)
    }

    /// Header `true\pred,<names…>`, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in &self.classes {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(self.rows()) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    /// `(TP + TN) / (TP + FP + TN + FN) × 100`.
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.tp + self.fp + self.tn + self.fn_;
        if total == 0 {
            return Err(Error::Invalid("accuracy of zero items".into()));
        }
        Ok((self.tp + self.tn) as f64 / total as f64 * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub total: u64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// Some rate had a zero denominator and was set to 0.
    pub zero_division: bool,
}

/// `num / den`, or 0 when `den` is 0 (flagged through `hit`).
fn ratio(num: f64, den: f64, hit: &mut bool) -> f64 {
    if den == 0.0 {
        *hit = true;
        0.0
    } else {
        num / den
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Invalid("classification report of an empty confusion matrix".into()));
    }
    let mut zero_division = false;
    let classes: Vec<ClassMetrics> = (0..cm.k())
        .map(|c| {
            let b = cm.one_vs_rest(c);
            let precision = ratio(b.tp as f64, (b.tp + b.fp) as f64, &mut zero_division);
            let recall = ratio(b.tp as f64, (b.tp + b.fn_) as f64, &mut zero_division);
            let f1 = ratio(2.0 * precision * recall, precision + recall, &mut zero_division);
            ClassMetrics {
                name: cm.class_names()[c].clone(),
                precision,
                recall,
                f1,
                support: b.tp + b.fn_,
            }
        })
        .collect();
    let k = classes.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / k;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        classes.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    let macro_avg = Averages {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };
    Ok(ClassificationReport {
        classes,
        accuracy: cm.trace() as f64 / total as f64,
        total,
        macro_avg,
        weighted_avg,
        zero_division,
    })
}

impl ClassificationReport {
    /// Full-precision CSV. The accuracy row carries its value in the f1
    /// column, as in the text layout.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for m in &self.classes {
            let _ = writeln!(out, "{},{},{},{},{}", m.name, m.precision, m.recall, m.f1, m.support);
        }
        let _ = writeln!(out, "accuracy,,,{},{}", self.accuracy, self.total);
        for (name, a) in [("macro_avg", self.macro_avg), ("weighted_avg", self.weighted_avg)] {
            let _ = writeln!(out, "{name},{},{},{},{}", a.precision, a.recall, a.f1, self.total);
        }
        out
    }

    /// Aligned plain text, rates rounded to two decimals.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|m| m.name.len())
            .chain(["weighted avg".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:>width$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
        out.push('\n');
        for m in &self.classes {
            let _ = writeln!(
                out,
                "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                m.name, m.precision, m.recall, m.f1, m.support
            );
        }
        out.push('\n');
        let _ = writeln!(out, "{:>width$} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy, self.total);
        for (name, a) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{name:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                a.precision, a.recall, a.f1, self.total
            );
        }
        if self.zero_division {
            out.push_str("\n* some rates had a zero denominator and are reported as 0\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-4
    }

    #[test]
    fn identity_and_direct_counting() {
        let cm = confusion_matrix(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(cm.accuracy().unwrap(), 100.0);
        let cm = confusion_matrix(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 1], vec![0, 1]]);
    }

    #[test]
    fn input_errors() {
        assert!(confusion_matrix(&[0, 1], &[0], 2).is_err());
        assert!(confusion_matrix(&[0, 2], &[0, 1], 2).is_err());
        let empty = confusion_matrix(&[], &[], 3).unwrap();
        assert!(empty.accuracy().is_err());
        assert!(classification_report(&empty).is_err());
    }

    #[test]
    fn binary_form() {
        let b = BinaryCounts { tp: 3, tn: 4, fp: 2, fn_: 1 };
        assert_eq!(b.accuracy().unwrap(), 70.0);
        // rows = truth: positives [TP, FN], negatives [FP, TN]
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 1], vec![2, 4]]).unwrap();
        assert_eq!(cm.one_vs_rest(0), b);
        assert_eq!(cm.accuracy().unwrap(), 70.0);
    }

    #[test]
    fn paper_supports_and_accuracy() {
        // 0.95 overall on 4 × 1050
        let rows = vec![
            vec![1029, 10, 6, 5],
            vec![20, 962, 60, 8],
            vec![10, 50, 985, 5],
            vec![8, 14, 14, 1014],
        ];
        let cm = ConfusionMatrix::from_counts(rows).unwrap();
        assert_eq!(cm.trace(), 3990);
        assert_eq!(cm.total(), 4200);
        assert!((cm.accuracy().unwrap() - 95.0).abs() < 1e-12);
        let r = classification_report(&cm).unwrap();
        assert!(r.classes.iter().all(|m| m.support == 1050));
        assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn two_class_rates() {
        let cm = ConfusionMatrix::from_counts(vec![vec![9, 1], vec![2, 8]]).unwrap();
        let r = classification_report(&cm).unwrap();
        let (a, b) = (&r.classes[0], &r.classes[1]);
        assert!(close(a.precision, 0.8182) && close(a.recall, 0.9) && close(a.f1, 0.8571));
        assert!(close(b.precision, 0.8889) && close(b.recall, 0.8) && close(b.f1, 0.8421));
        assert!(!r.zero_division);
    }

    #[test]
    fn perfect_diagonal() {
        let cm = ConfusionMatrix::from_counts(vec![vec![5, 0, 0], vec![0, 5, 0], vec![0, 0, 5]]).unwrap();
        let r = classification_report(&cm).unwrap();
        for m in &r.classes {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.macro_avg, r.weighted_avg);
    }

    #[test]
    fn never_predicted_class_is_flagged() {
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![2, 0]]).unwrap();
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.classes[1].precision, 0.0);
        assert_eq!(r.classes[1].f1, 0.0);
        assert!(r.zero_division);
        assert!(r.to_text().contains("zero denominator"));
    }

    #[test]
    fn csv_and_text_layout() {
        let names: Vec<String> = ["desert", "meadow"].map(String::from).to_vec();
        let cm = ConfusionMatrix::from_counts(vec![vec![9, 1], vec![2, 8]])
            .unwrap()
            .with_class_names(&names)
            .unwrap();
        assert_eq!(cm.to_csv(), "true\\pred,desert,meadow\ndesert,9,1\nmeadow,2,8\n");
        let r = classification_report(&cm).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,precision,recall,f1,support");
        assert!(lines[1].starts_with("desert,0.81818"));
        assert_eq!(lines[3], "accuracy,,,0.85,20");
        assert!(lines[4].starts_with("macro_avg,") && lines[5].starts_with("weighted_avg,"));
        let text = r.to_text();
        assert!(text.contains("      desert      0.82      0.90      0.86        10"), "{text}");
        assert!(text.contains("    accuracy                          0.85        20"), "{text}");
    }

    proptest! {
        #[test]
        fn structural_invariants(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..300)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let cm = confusion_matrix(&t, &p, 5).unwrap();
            prop_assert_eq!(cm.total(), t.len() as u64);
            prop_assert!(cm.trace() <= cm.total());
            let acc = cm.accuracy().unwrap();
            prop_assert!((0.0..=100.0).contains(&acc));
            let r = classification_report(&cm).unwrap();
            for (c, m) in r.classes.iter().enumerate() {
                let b = cm.one_vs_rest(c);
                prop_assert_eq!(b.tp + b.fn_, cm.support(c));
                prop_assert_eq!(b.tp + b.fp, cm.predicted(c));
                for v in [m.precision, m.recall, m.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            prop_assert_eq!(r.classes.iter().map(|m| m.support).sum::<u64>(), r.total);
        }

        #[test]
        fn equal_supports_bound_accuracy_by_recalls(k in 2usize..6, per in 1usize..30, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t: Vec<usize> = (0..k * per).map(|i| i / per).collect();
            let p: Vec<usize> = t.iter().map(|&c| if rng.gen_bool(0.7) { c } else { rng.gen_range(0..k) }).collect();
            let cm = confusion_matrix(&t, &p, k).unwrap();
            let r = classification_report(&cm).unwrap();
            let recalls = r.classes.iter().map(|m| m.recall);
            let (lo, hi) = recalls.fold((1.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let acc = cm.accuracy().unwrap() / 100.0;
            prop_assert!(lo <= acc + 1e-12 && acc <= hi + 1e-12);
            prop_assert!((r.macro_avg.recall - r.weighted_avg.recall).abs() < 1e-12);
        }
    }
}
