//! Sparse interval Markov chains: per-row lists of `[low, high]` bounds plus a shared bound
//! for every column a row does not list.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    /// Upper bound for every tail-eligible column absent from `cols`; their lower bound is 0.
    pub tail_high: f64,
}

impl SparseRow {
    pub fn exact(cols: Vec<usize>, p: Vec<f64>) -> Self {
        Self {
            cols,
            low: p.clone(),
            high: p,
            tail_high: 0.0,
        }
    }

    pub fn from_dense(low: &[f64], high: &[f64]) -> Self {
        let cols: Vec<usize> = (0..low.len()).filter(|&j| high[j] > 0.0).collect();
        Self {
            low: cols.iter().map(|&j| low[j]).collect(),
            high: cols.iter().map(|&j| high[j]).collect(),
            cols,
            tail_high: 0.0,
        }
    }
}

/// An interval Markov chain over states `0..rows.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalChain {
    pub rows: Vec<SparseRow>,
    /// Columns a row's `tail_high` may apply to. Columns that are structurally zero are excluded.
    pub tail_eligible: Vec<bool>,
}

impl IntervalChain {
    pub fn new(rows: Vec<SparseRow>) -> Result<Self> {
        let n = rows.len();
        let chain = Self {
            rows,
            tail_eligible: vec![true; n],
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn from_dense(low: &[Vec<f64>], high: &[Vec<f64>]) -> Result<Self> {
        if low.len() != high.len() {
            return Err(invalid("low and high matrices differ in size"));
        }
        Self::new(low.iter().zip(high).map(|(l, h)| SparseRow::from_dense(l, h)).collect())
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    /// Number of tail-eligible columns not listed in row `q`.
    pub fn tail_count(&self, q: usize) -> usize {
        let row = &self.rows[q];
        let listed = row.cols.iter().filter(|&&c| self.tail_eligible[c]).count();
        self.tail_eligible.iter().filter(|&&e| e).count() - listed
    }

    /// `(Σ low, Σ high)` of row `q`, including the tail.
    pub fn row_sums(&self, q: usize) -> (f64, f64) {
        let row = &self.rows[q];
        let tail = if row.tail_high > 0.0 { row.tail_high * self.tail_count(q) as f64 } else { 0.0 };
        (row.low.iter().sum(), row.high.iter().sum::<f64>() + tail)
    }

    pub fn low(&self, q: usize, col: usize) -> f64 {
        let row = &self.rows[q];
        row.cols.iter().position(|&c| c == col).map_or(0.0, |k| row.low[k])
    }

    pub fn high(&self, q: usize, col: usize) -> f64 {
        let row = &self.rows[q];
        match row.cols.iter().position(|&c| c == col) {
            Some(k) => row.high[k],
            None if self.tail_eligible[col] => row.tail_high,
            None => 0.0,
        }
    }

    /// Checks bounds are ordered, in `[0, 1]`, and every row is feasible up to `1e-9`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if self.tail_eligible.len() != n {
            return Err(invalid("tail eligibility mask has the wrong length"));
        }
        for (q, row) in self.rows.iter().enumerate() {
            if row.low.len() != row.cols.len() || row.high.len() != row.cols.len() {
                return Err(invalid(format!("row {q} has mismatched lengths")));
            }
            let mut seen = std::collections::HashSet::new();
            for (k, &c) in row.cols.iter().enumerate() {
                if c >= n || !seen.insert(c) {
                    return Err(invalid(format!("row {q} lists column {c} out of range or twice")));
                }
                if !(0.0 <= row.low[k] && row.low[k] <= row.high[k] && row.high[k] <= 1.0) {
                    return Err(invalid(format!(
                        "row {q}, column {c}: bounds [{}, {}] are not ordered within [0, 1]",
                        row.low[k], row.high[k]
                    )));
                }
            }
            if !(0.0..=1.0).contains(&row.tail_high) {
                return Err(invalid(format!("row {q}: tail bound {} outside [0, 1]", row.tail_high)));
            }
            let (lo, hi) = self.row_sums(q);
            if lo > 1.0 + 1e-9 || hi < 1.0 - 1e-9 {
                return Err(invalid(format!("row {q} is infeasible: sum low {lo}, sum high {hi}")));
            }
        }
        Ok(())
    }

    pub fn is_exact(&self) -> bool {
        self.rows.iter().all(|r| r.tail_high == 0.0 && r.low == r.high)
    }
}

/// Makes a row feasible by loosening it: highs are scaled up when they sum below 1 and lows
/// scaled down when they sum above 1. Returns whether anything changed.
pub fn repair_row(row: &mut SparseRow, tail_columns: usize) -> bool {
    let mut changed = false;
    let low_sum: f64 = row.low.iter().sum();
    if low_sum > 1.0 {
        for v in &mut row.low {
            *v /= low_sum;
        }
        changed = true;
    }
    let tail = row.tail_high * tail_columns as f64;
    for _ in 0..row.high.len().max(1) {
        let free: f64 = row.high.iter().filter(|&&h| h < 1.0).sum();
        let capped = row.high.iter().filter(|&&h| h >= 1.0).count() as f64;
        let missing = 1.0 - tail - capped - free;
        if missing <= 0.0 || free <= 0.0 {
            break;
        }
        let factor = (free + missing) / free;
        for h in &mut row.high {
            if *h < 1.0 {
                *h = (*h * factor).min(1.0);
            }
        }
        changed = true;
    }
    if changed {
        for (l, h) in row.low.iter_mut().zip(&mut row.high) {
            *l = l.min(*h);
        }
    }
    changed
}
