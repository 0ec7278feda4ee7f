//! Confusion matrices, accuracy / sensitivity / specificity, and the CSV
//! tables and curves written after a run.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::PainClass;
use crate::error::{Error, Result};
use crate::layers::ModelKind;
use crate::trainer::EpochRecord;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n_classes()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

pub fn confusion_matrix(predictions: &[usize], truths: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion_matrix",
            left: vec![predictions.len()],
            right: vec![truths.len()],
        });
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= n_classes {
            return Err(Error::ClassOutOfRange(p));
        }
        if t >= n_classes {
            return Err(Error::ClassOutOfRange(t));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Percentages in `[0, 100]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Macro-averaged one-vs-rest sensitivity.
    pub sensitivity: f64,
    /// Macro-averaged one-vs-rest specificity.
    pub specificity: f64,
}

/// Accuracy plus macro one-vs-rest sensitivity and specificity. A class with
/// no positives is left out of the sensitivity mean; a class with no
/// negatives is left out of the specificity mean.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let (mut sens, mut n_sens, mut spec, mut n_spec) = (0.0, 0, 0.0, 0);
    for c in 0..cm.n_classes() {
        let tp = cm.counts[c][c];
        let fn_ = rows[c] - tp;
        let fp = cols[c] - tp;
        let tn = total - tp - fn_ - fp;
        if tp + fn_ > 0 {
            sens += tp as f64 / (tp + fn_) as f64;
            n_sens += 1;
        }
        if tn + fp > 0 {
            spec += tn as f64 / (tn + fp) as f64;
            n_spec += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { 100.0 * s / n as f64 };
    Ok(Metrics {
        accuracy: 100.0 * cm.trace() as f64 / total as f64,
        sensitivity: mean(sens, n_sens),
        specificity: mean(spec, n_spec),
    })
}

/// Formats `x` with one decimal, rounding half to even on the shortest
/// decimal representation of `x` (so `90.65` gives `90.6`, `90.75` gives
/// `90.8`).
pub fn format_one_decimal(x: f64) -> String {
    let repr = format!("{}", x.abs());
    let (int, frac) = repr.split_once('.').unwrap_or((&repr, ""));
    let digits: Vec<u32> = frac.chars().map(|c| c.to_digit(10).expect("decimal digit")).collect();
    let first = digits.first().copied().unwrap_or(0);
    let mut tenths: u128 = int.parse::<u128>().expect("integer part") * 10 + first as u128;
    let rest = digits.get(1..).unwrap_or(&[]);
    let round_up = match rest.first() {
        Some(&d) if d > 5 => true,
        Some(&5) => rest[1..].iter().any(|&d| d > 0) || tenths % 2 == 1,
        _ => false,
    };
    if round_up {
        tenths += 1;
    }
    let sign = if x < 0.0 && tenths > 0 { "-" } else { "" };
    format!("{sign}{}.{}", tenths / 10, tenths % 10)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldSummary {
    pub fold: usize,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Test-set result and training curves of one model kind.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub kind: ModelKind,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    /// Cross-fold mean per epoch.
    pub history: Vec<EpochRecord>,
    pub folds: Vec<FoldSummary>,
    pub best_fold: usize,
    pub test_windows: usize,
}

pub const RESULTS_NOTE: &str =
    "# accuracy in percent; sensitivity and specificity are unweighted macro averages of one-vs-rest per-class values, in percent";
pub const RESULTS_HEADER: &str = "model,accuracy,sensitivity,specificity";
pub const CURVES_HEADER: &str = "model,epoch,train_loss,val_loss,train_acc,val_acc";

fn class_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| PainClass::from_code(i).map(|c| c.name().to_string()).unwrap_or_else(|_| format!("class{i}")))
        .collect()
}

pub fn results_table(reports: &[&RunReport]) -> String {
    let mut out = format!("{RESULTS_NOTE}\n{RESULTS_HEADER}\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.kind,
            format_one_decimal(r.metrics.accuracy),
            format_one_decimal(r.metrics.sensitivity),
            format_one_decimal(r.metrics.specificity)
        ));
    }
    out
}

pub fn curves_table(reports: &[&RunReport]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in reports {
        for e in &r.history {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.kind, e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc
            ));
        }
    }
    out
}

pub fn confusion_table(cm: &ConfusionMatrix) -> String {
    let names = class_names(cm.n_classes());
    let mut out = format!("true_class,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&cm.counts) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    out
}

pub fn read_confusion(path: &Path) -> Result<ConfusionMatrix> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Empty("confusion file"))?;
    let n = header.split(',').count() - 1;
    let mut counts = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let row: Vec<u64> = line
            .split(',')
            .skip(1)
            .enumerate()
            .map(|(j, v)| {
                v.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    column: j + 2,
                    message: format!("not a count: `{v}`"),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                column: row.len() + 1,
                message: format!("expected {n} counts"),
            });
        }
        counts.push(row);
    }
    if counts.len() != n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: counts.len() + 1,
            column: 1,
            message: format!("expected {n} rows"),
        });
    }
    Ok(ConfusionMatrix { counts })
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `results_table.csv`, `curves.csv` and `confusion_<model>.csv`,
/// rows ordered mlp, lstm_fwd, lstm_bwd, bilstm whatever the input order.
pub fn emit_reports(reports: &[RunReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Empty("report list"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut ordered: Vec<&RunReport> = reports.iter().collect();
    ordered.sort_by_key(|r| r.kind);
    let mut written = Vec::new();
    write(out_dir.join("results_table.csv"), &results_table(&ordered), &mut written)?;
    write(out_dir.join("curves.csv"), &curves_table(&ordered), &mut written)?;
    for r in &ordered {
        write(
            out_dir.join(format!("confusion_{}.csv", r.kind)),
            &confusion_table(&r.confusion),
            &mut written,
        )?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let t = [0, 1, 2, 3, 3, 1];
        let cm = confusion_matrix(&t, &t, 4).unwrap();
        assert_eq!(cm.trace(), 6);
        let m = classification_metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.sensitivity, m.specificity), (100.0, 100.0, 100.0));
    }

    #[test]
    fn single_pair() {
        let cm = confusion_matrix(&[0], &[2], 4).unwrap();
        assert_eq!(cm.counts[2][0], 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn uniform_matrix_metrics() {
        let cm = ConfusionMatrix {
            counts: vec![vec![5; 4]; 4],
        };
        let m = classification_metrics(&cm).unwrap();
        assert!((m.accuracy - 25.0).abs() < 1e-12);
        assert!((m.sensitivity - 25.0).abs() < 1e-12);
        assert!((m.specificity - 75.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(confusion_matrix(&[0, 1], &[0], 4).is_err());
        assert!(confusion_matrix(&[4], &[0], 4).is_err());
        assert!(classification_metrics(&ConfusionMatrix::zeros(4)).is_err());
    }

    #[test]
    fn absent_class_is_excluded_from_sensitivity() {
        let cm = confusion_matrix(&[0, 1, 1], &[0, 1, 0], 4).unwrap();
        let m = classification_metrics(&cm).unwrap();
        assert!((m.sensitivity - 75.0).abs() < 1e-12);
    }

    #[test]
    fn half_even_formatting() {
        assert_eq!(format_one_decimal(100.0 * 0.90625), "90.6");
        assert_eq!(format_one_decimal(90.65), "90.6");
        assert_eq!(format_one_decimal(90.75), "90.8");
        assert_eq!(format_one_decimal(90.651), "90.7");
        assert_eq!(format_one_decimal(99.96), "100.0");
        assert_eq!(format_one_decimal(0.0), "0.0");
        assert_eq!(format_one_decimal(25.0), "25.0");
        assert_eq!(format_one_decimal(-0.04), "0.0");
        assert_eq!(format_one_decimal(-1.25), "-1.2");
    }

    fn report(kind: ModelKind) -> RunReport {
        RunReport {
            kind,
            metrics: Metrics {
                accuracy: 50.0,
                sensitivity: 49.95,
                specificity: 83.33333333333333,
            },
            confusion: confusion_matrix(&[0, 1, 2, 3], &[0, 1, 3, 2], 4).unwrap(),
            history: vec![],
            folds: vec![],
            best_fold: 0,
            test_windows: 4,
        }
    }

    #[test]
    fn emission_order_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let reps: Vec<RunReport> = [ModelKind::BiLstm, ModelKind::Mlp, ModelKind::LstmBwd, ModelKind::LstmFwd]
            .into_iter()
            .map(report)
            .collect();
        emit_reports(&reps, dir.path()).unwrap();
        let a = fs::read_to_string(dir.path().join("results_table.csv")).unwrap();
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], RESULTS_HEADER);
        assert_eq!(lines[2], "mlp,50.0,50.0,83.3");
        assert!(lines[5].starts_with("bilstm,"));
        emit_reports(&reps, dir.path()).unwrap();
        assert_eq!(a, fs::read_to_string(dir.path().join("results_table.csv")).unwrap());
        let cm = read_confusion(&dir.path().join("confusion_mlp.csv")).unwrap();
        assert_eq!(cm, reps[1].confusion);
    }

    proptest! {
        #[test]
        fn accuracy_is_permutation_invariant(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
            perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let a = classification_metrics(&confusion_matrix(&p, &t, 4).unwrap()).unwrap();
            let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let tp: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
            let cm = confusion_matrix(&pp, &tp, 4).unwrap();
            let b = classification_metrics(&cm).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert_eq!(cm.row_sums().iter().sum::<u64>(), p.len() as u64);
            for c in 0..4 {
                prop_assert_eq!(cm.row_sums()[perm[c]], t.iter().filter(|&&x| x == c).count() as u64);
            }
        }

        #[test]
        fn binary_matrices_reduce_to_two_class_definitions(tp in 1u64..50, fn_ in 0u64..50, fp in 0u64..50, tn in 1u64..50) {
            let cm = ConfusionMatrix { counts: vec![vec![tp, fn_], vec![fp, tn]] };
            let m = classification_metrics(&cm).unwrap();
            let sens = tp as f64 / (tp + fn_) as f64;
            let spec = tn as f64 / (tn + fp) as f64;
            // Class 0's sensitivity is class 1's specificity and vice versa.
            prop_assert!((m.sensitivity - 50.0 * (sens + spec)).abs() < 1e-9);
            prop_assert!((m.specificity - 50.0 * (spec + sens)).abs() < 1e-9);
        }
    }
}
