use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation summary. Confusion rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub class_labels: Vec<String>,
    pub total: u64,
    pub overall_accuracy: f64,
    /// Correct / total for each true class; `None` when a class has no test
    /// samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `(TP + TN) / total` treating each class as a binary problem.
    pub one_vs_rest_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], class_labels: &[String]) -> Result<Self> {
        let k = class_labels.len();
        if truth.is_empty() {
            return Err(Error::Precondition("cannot evaluate an empty test set".into()));
        }
        if truth.len() != predicted.len() {
            return Err(Error::shape(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::shape(format!("class index out of range for {k} classes")));
            }
            confusion[t][p] += 1;
        }
        let total = truth.len() as u64;
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        let one_vs_rest_accuracy = (0..k)
            .map(|i| {
                let tp = confusion[i][i];
                let fn_: u64 = confusion[i].iter().sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|r| confusion[r][i]).sum::<u64>() - tp;
                let tn = total - tp - fn_ - fp;
                (tp + tn) as f64 / total as f64
            })
            .collect();
        Ok(Metrics {
            class_labels: class_labels.to_vec(),
            total,
            overall_accuracy: trace as f64 / total as f64,
            per_class_accuracy,
            one_vs_rest_accuracy,
            confusion,
        })
    }

    pub fn trace(&self) -> u64 {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Header row of predicted labels, then one row per true label.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.class_labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.class_labels.iter().zip(&self.confusion) {
            s.push_str(l);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.confusion_csv()).map_err(|e| Error::io(path, e))
    }

    /// Per-class accuracy table followed by the overall figure, in percent.
    pub fn table(&self) -> String {
        let mut s = String::from("class  accuracy(%)  one-vs-rest(%)  n\n");
        for (i, l) in self.class_labels.iter().enumerate() {
            let n: u64 = self.confusion[i].iter().sum();
            let acc = self.per_class_accuracy[i].map_or("-".to_string(), |a| format!("{:.1}", 100.0 * a));
            let _ = writeln!(
                s,
                "{l:<6} {acc:>11}  {:>14.1}  {n}",
                100.0 * self.one_vs_rest_accuracy[i]
            );
        }
        let _ = writeln!(s, "Overall {:>10.1}  ({}/{})", 100.0 * self.overall_accuracy, self.trace(), self.total);
        s
    }
}
