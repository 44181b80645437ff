use crate::error::{Error, Result};

/// Row-stochastic `T x V` matrix: one next-token distribution per exit.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::Contract("probability matrix is empty".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Contract(format!("row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!("row {i} sums to {sum}")));
            }
            data.extend_from_slice(r);
        }
        Ok(ProbMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn num_exits(&self) -> usize {
        self.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Position `(exit, token)` of the largest entry. Scanning row-major with a
/// strict comparison keeps the lowest exit, then the lowest token, on ties.
pub fn vote_position(m: &ProbMatrix) -> (usize, usize) {
    let mut best = 0;
    for (k, &p) in m.data.iter().enumerate() {
        if p > m.data[best] {
            best = k;
        }
    }
    (best / m.cols, best % m.cols)
}

/// Token index of the single most confident entry across all exits.
pub fn vote(m: &ProbMatrix) -> usize {
    vote_position(m).1
}
