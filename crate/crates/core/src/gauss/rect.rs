//! Axis-aligned boxes and box set-difference.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned box `[lower, upper]` in `R^d`. Bounds may be infinite.
///
/// A box with `lower[i] > upper[i]` for some `i` is empty; see [`Hyperrect::is_empty`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperrect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hyperrect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(invalid(format!(
                "box bounds have different lengths ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().chain(&upper).any(|v| v.is_nan()) {
            return Err(invalid("box bound is NaN"));
        }
        Ok(Self { lower, upper })
    }

    /// The whole space `R^d`.
    pub fn whole(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    /// `[-r, r]^d`.
    pub fn cube(dim: usize, radius: f64) -> Self {
        Self {
            lower: vec![-radius; dim],
            upper: vec![radius; dim],
        }
    }

    /// The degenerate box `{p}`.
    pub fn point(p: &[f64]) -> Self {
        Self {
            lower: p.to_vec(),
            upper: p.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l > u)
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| l <= x && x <= u)
    }

    /// `self ⊆ other` (empty boxes are subsets of everything).
    pub fn is_subset_of(&self, other: &Hyperrect) -> bool {
        self.is_empty()
            || (0..self.dim()).all(|i| other.lower[i] <= self.lower[i] && self.upper[i] <= other.upper[i])
    }

    pub fn intersect(&self, other: &Hyperrect) -> Hyperrect {
        Hyperrect {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    /// True when the intersection has positive volume.
    pub fn overlaps(&self, other: &Hyperrect) -> bool {
        (0..self.dim()).all(|i| self.lower[i].max(other.lower[i]) < self.upper[i].min(other.upper[i]))
    }

    /// Minkowski sum, computed coordinatewise.
    pub fn minkowski_sum(&self, other: &Hyperrect) -> Hyperrect {
        Hyperrect {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a + b).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn translate(&self, offset: &[f64]) -> Hyperrect {
        Hyperrect {
            lower: self.lower.iter().zip(offset).map(|(a, o)| a + o).collect(),
            upper: self.upper.iter().zip(offset).map(|(a, o)| a + o).collect(),
        }
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &Hyperrect) -> Hyperrect {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        Hyperrect { lower, upper }
    }

    /// `self^k` as a box in `R^{k d}`.
    pub fn power(&self, k: usize) -> Hyperrect {
        Hyperrect {
            lower: self.lower.repeat(k),
            upper: self.upper.repeat(k),
        }
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.widths().iter().product()
    }

    /// Vertices in lexicographic order of their coordinate vectors
    /// (coordinate 0 varies slowest). Degenerate coordinates are not duplicated.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(self.dim())];
        for i in 0..self.dim() {
            let choices: &[f64] = if self.lower[i] == self.upper[i] {
                std::slice::from_ref(&self.lower[i])
            } else {
                &[self.lower[i], self.upper[i]]
            };
            out = out
                .into_iter()
                .flat_map(|v| {
                    choices.iter().map(move |&c| {
                        let mut w = v.clone();
                        w.push(c);
                        w
                    })
                })
                .collect();
        }
        out
    }
}

/// Splits `minuend \ subtrahend` into at most `2d` boxes with pairwise disjoint interiors.
///
/// Intersections of zero volume remove nothing, so the minuend comes back whole.
pub fn rect_diff(minuend: &Hyperrect, subtrahend: &Hyperrect) -> Vec<Hyperrect> {
    if minuend.is_empty() {
        return Vec::new();
    }
    if !minuend.overlaps(subtrahend) {
        return vec![minuend.clone()];
    }
    let cut = minuend.intersect(subtrahend);
    let mut rest = minuend.clone();
    let mut pieces = Vec::with_capacity(2 * minuend.dim());
    for i in 0..minuend.dim() {
        if rest.lower[i] < cut.lower[i] {
            let mut piece = rest.clone();
            piece.upper[i] = cut.lower[i];
            pieces.push(piece);
        }
        if cut.upper[i] < rest.upper[i] {
            let mut piece = rest.clone();
            piece.lower[i] = cut.upper[i];
            pieces.push(piece);
        }
        rest.lower[i] = cut.lower[i];
        rest.upper[i] = cut.upper[i];
    }
    pieces
}
