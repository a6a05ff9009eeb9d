use crate::abstraction::Partition;
use crate::error::{invalid, Result};
use crate::gauss::Hyperrect;

/// A reward `R(x, s) ∈ [0, r_max]` on measurements and intersampling times.
pub trait RewardSpec: Send + Sync {
    fn evaluate(&self, x: &[f64], s: usize) -> f64;

    fn r_max(&self) -> f64;

    /// Exact extrema over `region × {s}`, if known in closed form.
    fn region_extrema(&self, _region: &Hyperrect, _s: usize) -> Option<(f64, f64)> {
        None
    }

    /// Extrema over `ℝⁿ × {1, …, kbar}` (infimum and supremum), if known in closed form.
    fn global_extrema(&self, _kbar: usize) -> Option<(f64, f64)> {
        None
    }

    /// Lipschitz constant in `x` used to pad sampled extrema.
    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// `R(x, s) = s`: with an average reward, the expected average intersampling multiple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvgTau {
    pub kbar: usize,
}

impl RewardSpec for AvgTau {
    fn evaluate(&self, _x: &[f64], s: usize) -> f64 {
        s as f64
    }
    fn r_max(&self) -> f64 {
        self.kbar as f64
    }
    fn region_extrema(&self, _region: &Hyperrect, s: usize) -> Option<(f64, f64)> {
        Some((s as f64, s as f64))
    }
    fn global_extrema(&self, kbar: usize) -> Option<(f64, f64)> {
        Some((1.0, kbar as f64))
    }
}

/// `R(x, s) = 0` if `s = kbar`, else 1: with a multiplicative reward, the probability of
/// never waiting the maximal time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoKbarIndicator {
    pub kbar: usize,
}

impl RewardSpec for NoKbarIndicator {
    fn evaluate(&self, _x: &[f64], s: usize) -> f64 {
        if s == self.kbar { 0.0 } else { 1.0 }
    }
    fn r_max(&self) -> f64 {
        1.0
    }
    fn region_extrema(&self, _region: &Hyperrect, s: usize) -> Option<(f64, f64)> {
        let v = if s == self.kbar { 0.0 } else { 1.0 };
        Some((v, v))
    }
    fn global_extrema(&self, kbar: usize) -> Option<(f64, f64)> {
        Some((0.0, if kbar > 1 { 1.0 } else { 0.0 }))
    }
}

/// `R(x, s) = min(α / (|x|₂ + ε) + β s, r_max)`, rewarding small states and long waits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateTauTradeoff {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub r_max: f64,
}

impl StateTauTradeoff {
    pub fn new(alpha: f64, beta: f64, eps: f64, r_max: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && eps > 0.0 && r_max > 0.0) {
            return Err(invalid("alpha, beta, eps and r_max must be positive"));
        }
        Ok(Self { alpha, beta, eps, r_max })
    }

    fn at_norm(&self, norm: f64, s: usize) -> f64 {
        (self.alpha / (norm + self.eps) + self.beta * s as f64).min(self.r_max)
    }
}

impl RewardSpec for StateTauTradeoff {
    fn evaluate(&self, x: &[f64], s: usize) -> f64 {
        self.at_norm(x.iter().map(|v| v * v).sum::<f64>().sqrt(), s)
    }
    fn r_max(&self) -> f64 {
        self.r_max
    }
    fn region_extrema(&self, region: &Hyperrect, s: usize) -> Option<(f64, f64)> {
        let near: f64 = (0..region.dim())
            .map(|i| (0.0f64).clamp(region.lower[i], region.upper[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        let far: f64 = (0..region.dim())
            .map(|i| region.lower[i].abs().max(region.upper[i].abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        Some((self.at_norm(far, s), self.at_norm(near, s)))
    }
    fn global_extrema(&self, kbar: usize) -> Option<(f64, f64)> {
        Some(((self.beta).min(self.r_max), self.at_norm(0.0, kbar)))
    }
}

/// Reward depending on `s` only, tabulated for `s = 0, …, kbar`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    pub values: Vec<f64>,
}

impl RewardSpec for Tabulated {
    fn evaluate(&self, _x: &[f64], s: usize) -> f64 {
        self.values[s]
    }
    fn r_max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
    fn region_extrema(&self, _region: &Hyperrect, s: usize) -> Option<(f64, f64)> {
        Some((self.values[s], self.values[s]))
    }
    fn global_extrema(&self, kbar: usize) -> Option<(f64, f64)> {
        let v = &self.values[1..=kbar];
        Some((v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(0.0, f64::max)))
    }
}

/// Interval rewards per IMC state, in the state order of [`crate::abstraction::Imc`].
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedRewards {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// False when some extrema were estimated by sampling rather than computed exactly.
    pub rigorous: bool,
}

/// Grid points per axis for sampled extrema.
const SAMPLE_GRID: usize = 32;

fn sampled_extrema(spec: &dyn RewardSpec, region: &Hyperrect, s: usize) -> (f64, f64) {
    let n = region.dim();
    let total = SAMPLE_GRID.pow(n as u32);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut x = vec![0.0; n];
    for k in 0..total {
        let mut rest = k;
        for i in 0..n {
            let t = (rest % SAMPLE_GRID) as f64 / (SAMPLE_GRID - 1) as f64;
            rest /= SAMPLE_GRID;
            x[i] = region.lower[i] + t * (region.upper[i] - region.lower[i]);
        }
        let v = spec.evaluate(&x, s);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // Every point lies within half a grid cell diagonal of a sample.
    let half_diag = 0.5
        * region
            .widths()
            .iter()
            .map(|w| (w / (SAMPLE_GRID - 1) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
    let slack = spec.lipschitz() * half_diag;
    ((lo - slack).max(0.0), (hi + slack).min(spec.r_max()))
}

/// Per-state reward intervals; the absorbing state gets the global extrema over `s ≥ 1`.
pub fn lift_rewards(spec: &dyn RewardSpec, partition: &Partition, kbar: usize) -> LiftedRewards {
    let n_states = partition.len() * (kbar + 1) + 1;
    let mut lower = Vec::with_capacity(n_states);
    let mut upper = Vec::with_capacity(n_states);
    let mut rigorous = true;
    for region in &partition.regions {
        for s in 0..=kbar {
            let (lo, hi) = spec.region_extrema(region, s).unwrap_or_else(|| {
                rigorous = false;
                sampled_extrema(spec, region, s)
            });
            lower.push(lo);
            upper.push(hi);
        }
    }
    let (lo, hi) = spec.global_extrema(kbar).unwrap_or_else(|| {
        rigorous = false;
        (0.0, spec.r_max())
    });
    lower.push(lo);
    upper.push(hi);
    if !rigorous {
        log::warn!("reward extrema were estimated by sampling; the bounds are not rigorous");
    }
    LiftedRewards { lower, upper, rigorous }
}
