use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gauss::Hyperrect;

/// Uniform grid over the outer box `Y`, with each cell tagged as inside or outside `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub regions: Vec<Hyperrect>,
    pub inside_x: Vec<bool>,
    pub x: Hyperrect,
    pub y: Hyperrect,
    pub grid: Vec<usize>,
}

/// Grid lines must hit the boundary of `X`; this is the slack allowed when checking that.
const ALIGN_TOL: f64 = 1e-9;

pub fn build_partition(y: &Hyperrect, grid: &[usize], x: &Hyperrect) -> Result<Partition> {
    let n = y.dim();
    if grid.len() != n || x.dim() != n {
        return Err(invalid(format!(
            "grid has {} axes, Y has {n} and X has {}",
            grid.len(),
            x.dim()
        )));
    }
    if grid.contains(&0) {
        return Err(invalid("grid dimensions must be positive"));
    }
    if !y.is_bounded() || y.is_empty() || y.widths().iter().any(|w| *w <= 0.0) {
        return Err(invalid("Y must be a bounded box with positive widths"));
    }
    if x.is_empty() || !x.is_subset_of(y) {
        return Err(invalid("X must be a non-empty subset of Y"));
    }
    let widths: Vec<f64> = (0..n).map(|i| (y.upper[i] - y.lower[i]) / grid[i] as f64).collect();
    for i in 0..n {
        for edge in [x.lower[i], x.upper[i]] {
            let k = (edge - y.lower[i]) / widths[i];
            if (k - k.round()).abs() > ALIGN_TOL * grid[i] as f64 {
                return Err(invalid(format!(
                    "the boundary {edge} of X on axis {i} does not lie on a grid line"
                )));
            }
        }
    }
    let total: usize = grid.iter().product();
    let mut regions = Vec::with_capacity(total);
    let mut inside_x = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let lower: Vec<f64> = (0..n).map(|i| y.lower[i] + idx[i] as f64 * widths[i]).collect();
        let upper: Vec<f64> = (0..n)
            .map(|i| if idx[i] + 1 == grid[i] { y.upper[i] } else { y.lower[i] + (idx[i] + 1) as f64 * widths[i] })
            .collect();
        let cell = Hyperrect { lower, upper };
        let c = cell.center();
        inside_x.push(x.contains(&c));
        regions.push(cell);
        // the last axis varies fastest
        for i in (0..n).rev() {
            idx[i] += 1;
            if idx[i] < grid[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(Partition {
        regions,
        inside_x,
        x: x.clone(),
        y: y.clone(),
        grid: grid.to_vec(),
    })
}

impl Partition {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Region containing `p`, or `None` outside `Y`. Shared faces go to the upper cell,
    /// except on the upper boundary of `Y`.
    pub fn locate(&self, p: &[f64]) -> Option<usize> {
        if !self.y.contains(p) {
            return None;
        }
        let mut index = 0;
        for (i, &v) in p.iter().enumerate() {
            let w = (self.y.upper[i] - self.y.lower[i]) / self.grid[i] as f64;
            let k = (((v - self.y.lower[i]) / w).floor() as usize).min(self.grid[i] - 1);
            index = index * self.grid[i] + k;
        }
        Some(index)
    }

    /// Whether a region touches the boundary of `Y`.
    pub fn touches_boundary(&self, region: usize) -> bool {
        let r = &self.regions[region];
        (0..r.dim()).any(|i| r.lower[i] <= self.y.lower[i] || r.upper[i] >= self.y.upper[i])
    }
}
