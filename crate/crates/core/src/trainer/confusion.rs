use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[actual][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        let k = self.num_classes();
        if actual >= k || predicted >= k {
            return Err(Error::invalid(
                "confusion matrix",
                format!("label pair ({actual}, {predicted}) outside {k} classes"),
            ));
        }
        self.counts[actual][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Per-class recall, `None` for classes with no samples.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect()
    }

    /// Row-normalised percentages.
    pub fn percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }

    /// Column of the largest off-diagonal count in `row`, if any is non-zero.
    /// Ties go to the lower index.
    pub fn largest_confusion(&self, row: usize) -> Option<usize> {
        let mut best: Option<(usize, u64)> = None;
        for (j, &c) in self.counts[row].iter().enumerate() {
            if j != row && c > 0 && best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        best.map(|(j, _)| j)
    }

    /// `Actual/Predicted` header row, then one row of counts per class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Actual/Predicted");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}
