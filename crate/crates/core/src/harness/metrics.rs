use std::fmt::Write as _;

use crate::linalg::Matrix;

use super::HarnessError;

/// Lower-triangular: `a[k][j]` is the test accuracy on phase `j` after
/// training through phase `k`, defined for `j ≤ k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        AccuracyMatrix { rows: Vec::new() }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, HarnessError> {
        let mut a = AccuracyMatrix::new();
        for r in rows {
            a.push_row(r)?;
        }
        Ok(a)
    }

    /// Appends the row for the next phase; it must have one entry per phase so far.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<(), HarnessError> {
        if row.len() != self.rows.len() + 1 {
            return Err(HarnessError::Config(format!(
                "accuracy row {} has {} entries, expected {}",
                self.rows.len(),
                row.len(),
                self.rows.len() + 1
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(HarnessError::Config(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn phases(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.rows[k][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// One line per phase, comma-separated.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|_| HarnessError::Config(format!("accuracy matrix line {}: bad value {c:?}", i + 1)))
                    })
                    .collect::<Result<Vec<f64>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        AccuracyMatrix::from_rows(rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub acc: f64,
    pub forgetting: f64,
    pub bwf: f64,
    /// `K × K`, entry `(i, j)` for `j < i` is `a[i−1][j] − a[i][j]`; zero elsewhere.
    pub transfer: Matrix,
    /// Mean of the defined transfer entries.
    pub transfer_mean: f64,
    /// Average accuracy over seen phases after each phase.
    pub curve: Vec<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn compute_metrics(a: &AccuracyMatrix) -> Result<MetricsReport, HarnessError> {
    let k = a.phases();
    if k == 0 {
        return Err(HarnessError::Config("empty accuracy matrix".into()));
    }
    let last = k - 1;
    let acc = mean(a.rows[last].iter().copied());
    let forgetting = mean((0..last).map(|j| {
        let best = (j..k).map(|i| a.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        best - a.get(last, j)
    }));
    let bwf = mean((0..last).map(|j| a.get(j, j) - a.get(last, j)));
    let mut transfer = Matrix::zeros(k, k);
    for i in 1..k {
        for j in 0..i {
            transfer[(i, j)] = a.get(i - 1, j) - a.get(i, j);
        }
    }
    let transfer_mean = mean((1..k).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| transfer[(i, j)]));
    let curve = a.rows.iter().map(|r| mean(r.iter().copied())).collect();
    Ok(MetricsReport { acc, forgetting, bwf, transfer, transfer_mean, curve })
}

impl MetricsReport {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nacc,{}\nforgetting,{}\nbwf,{}\ntransfer_forgetting,{}\n",
            self.acc, self.forgetting, self.bwf, self.transfer_mean
        )
    }

    /// `phase,classes_seen,accuracy` rows.
    pub fn curve_csv(&self, classes_seen: &[usize]) -> String {
        let mut s = String::from("phase,classes_seen,accuracy\n");
        for (k, (acc, c)) in self.curve.iter().zip(classes_seen).enumerate() {
            let _ = writeln!(s, "{k},{c},{acc}");
        }
        s
    }
}
