//! Sound bounds on `P(ζ(s; x) ∈ S, τ(x) = s)` and `P(τ(x) = s)` over a region of measurements.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{normal, rect_diff, AscentConfig, BoxExtremum, BoxProblem, Hyperrect, MvnConfig, RectProbObjective};
use crate::sde_moments::{conditional_moments, cov_block, exp_and_integral, stacked_moments, ConditionalGaussian, StackedGaussian};
use crate::system::PetcSystem;

/// `Φ(0) = [-ε, ε]^n`; the no-trigger set for measurement `x` is `Φ(0) + x`.
pub fn phi_box(sys: &PetcSystem) -> Hyperrect {
    Hyperrect::cube(sys.n(), sys.eps)
}

/// Numerical settings of the abstraction.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionConfig {
    pub mvn: MvnConfig,
    pub ascent: AscentConfig,
    /// Entries whose cheap upper bound is at most this are not integrated.
    pub prune_tol: f64,
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        Self {
            mvn: MvnConfig::default(),
            ascent: AscentConfig::default(),
            prune_tol: 1e-7,
        }
    }
}

/// Lower bound of a minimum and upper bound of a maximum over a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrema {
    pub min: f64,
    pub max: f64,
}

/// Precomputed moments for one system; all bound computations go through here.
pub struct Abstractor {
    sys: PetcSystem,
    cfg: AbstractionConfig,
    phi0: Hyperrect,
    stacks: Vec<StackedGaussian>,
    /// Entry `s - 1`: the first `s - 1` blocks conditioned on `ζ(sh)`, for `s ≥ 2`.
    conds: Vec<Option<ConditionalGaussian>>,
    step_exp: DMatrix<f64>,
    step_input: DMatrix<f64>,
    step_cov: DMatrix<f64>,
    step_cov_inv: DMatrix<f64>,
}

fn entry_err(region: usize, target: &Hyperrect, s: usize, e: Error) -> Error {
    Error::Entry {
        region,
        target: format!("{:?}x{:?}", target.lower, target.upper),
        s,
        source: Box::new(e),
    }
}

/// Interval image of a box under a matrix.
fn image_box(m: &DMatrix<f64>, bx: &Hyperrect) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![0.0; m.nrows()];
    let mut hi = vec![0.0; m.nrows()];
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let (a, b) = (m[(i, j)] * bx.lower[j], m[(i, j)] * bx.upper[j]);
            lo[i] += a.min(b);
            hi[i] += a.max(b);
        }
    }
    (lo, hi)
}

/// Range of `u·y` over a box.
fn project_box(u: &[f64], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..u.len() {
        let (p, q) = (u[i] * lo[i], u[i] * hi[i]);
        a += p.min(q);
        b += p.max(q);
    }
    (a, b)
}

/// Largest mass a scalar normal with standard deviation `sd` and mean in `[m_lo, m_hi]`
/// can put on `[a, b]`.
fn max_window_mass(a: f64, b: f64, m_lo: f64, m_hi: f64, sd: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let mu = mid.clamp(m_lo, m_hi);
    normal::interval((a - mu) / sd, (b - mu) / sd)
}

impl Abstractor {
    pub fn new(sys: &PetcSystem, cfg: AbstractionConfig) -> Result<Self> {
        let kbar = sys.kbar;
        let stacks = (1..=kbar).map(|s| stacked_moments(sys, s)).collect::<Result<Vec<_>>>()?;
        let mut conds = vec![None];
        for s in 2..=kbar {
            conds.push(Some(conditional_moments(sys, s, s)?.leading(s - 1)));
        }
        let (step_exp, gamma) = exp_and_integral(&sys.a, sys.h)?;
        let step_cov = cov_block(sys, sys.h, sys.h)?;
        let step_cov_inv = step_cov
            .clone()
            .try_inverse()
            .ok_or_else(|| crate::error::numeric("one-step covariance is singular"))?;
        Ok(Self {
            phi0: phi_box(sys),
            step_input: gamma * sys.bk(),
            sys: sys.clone(),
            cfg,
            stacks,
            conds,
            step_exp,
            step_cov,
            step_cov_inv,
        })
    }

    pub fn system(&self) -> &PetcSystem {
        &self.sys
    }

    pub fn config(&self) -> &AbstractionConfig {
        &self.cfg
    }

    fn n(&self) -> usize {
        self.sys.n()
    }

    /// `x ↦ P(ζ̃_j ∈ Φ^j(x) × last)`: the first `j` checks stay quiet and, if given, check
    /// `j + 1` lands in `last`.
    fn stacked_objective(&self, j: usize, last: Option<&Hyperrect>) -> Result<RectProbObjective> {
        let n = self.n();
        let blocks = j + usize::from(last.is_some());
        let st = &self.stacks[blocks - 1];
        let mut base = self.phi0.power(j);
        if let Some(l) = last {
            base = if j == 0 { l.clone() } else { base.product(l) };
        }
        let g = DMatrix::from_fn(blocks * n, n, |i, c| if i < j * n && i % n == c { 1.0 } else { 0.0 });
        RectProbObjective::new(st.mean_map.clone(), DVector::zeros(blocks * n), st.cov.clone(), base, g)
    }

    /// `(x, v) ↦ P(ζ̃_{s-1} ∈ Φ^{s-1}(x) | ζ(sh) = v)`, for `s ≥ 2`.
    fn conditional_objective(&self, s: usize) -> Result<RectProbObjective> {
        let n = self.n();
        let c = self.conds[s - 1].as_ref().expect("conditional moments exist for s >= 2");
        let d = (s - 1) * n;
        let mut map = DMatrix::zeros(d, 2 * n);
        map.view_mut((0, 0), (d, n)).copy_from(&c.mean_map_x);
        map.view_mut((0, n), (d, n)).copy_from(&c.mean_map_v);
        let g = DMatrix::from_fn(d, 2 * n, |i, col| if col < n && i % n == col { 1.0 } else { 0.0 });
        RectProbObjective::new(map, c.mean_offset.clone(), c.cov.clone(), self.phi0.power(s - 1), g)
    }

    fn marginal_objective(&self, s: usize, target: &Hyperrect) -> Result<RectProbObjective> {
        let n = self.n();
        let st = &self.stacks[s - 1];
        RectProbObjective::new(
            st.mean_block(s - 1),
            DVector::zeros(n),
            st.cov_block(s - 1, s - 1),
            target.clone(),
            DMatrix::zeros(n, n),
        )
    }

    fn checked_max(&self, r: BoxExtremum) -> f64 {
        if !r.converged {
            log::warn!("ascent fell back to the trivial upper bound 1");
        }
        r.bound
    }

    fn extrema(&self, obj: &RectProbObjective, bx: &Hyperrect, want_min: bool, want_max: bool) -> Result<Extrema> {
        let p = BoxProblem::new(obj, bx, &self.cfg.mvn)?;
        let (min, max) = match (want_min, want_max) {
            (true, true) => {
                let (lo, hi) = p.extrema(&self.cfg.ascent);
                (lo.bound, self.checked_max(hi))
            }
            (true, false) => (p.minimize().bound, 1.0),
            (false, true) => (0.0, self.checked_max(p.maximize(&self.cfg.ascent, &[]))),
            (false, false) => (0.0, 1.0),
        };
        Ok(Extrema { min: min.clamp(0.0, 1.0), max: max.clamp(0.0, 1.0) })
    }

    /// Cheap upper bound on `max_{x ∈ R} P(ζ(s; x) ∈ S, τ(x) = s)` from one-step transition
    /// laws and scalar projections.
    pub fn cheap_upper(&self, r: &Hyperrect, target: &Hyperrect, s: usize) -> f64 {
        let n = self.n();
        let (mlo, mhi) = if s == 1 {
            image_box(&self.stacks[0].mean_block(0), r)
        } else {
            // ζ((s-1)h) stays within R + Φ(0) when the trigger has not fired yet.
            let (a_lo, a_hi) = image_box(&self.step_exp, &r.minkowski_sum(&self.phi0));
            let (b_lo, b_hi) = image_box(&self.step_input, r);
            ((0..n).map(|i| a_lo[i] + b_lo[i]).collect(), (0..n).map(|i| a_hi[i] + b_hi[i]).collect())
        };
        let mut best = 1.0f64;
        for i in 0..n {
            let sd = self.step_cov[(i, i)].sqrt();
            best = best.min(max_window_mass(target.lower[i], target.upper[i], mlo[i], mhi[i], sd));
        }
        let c_t = target.center();
        let diff = DVector::from_fn(n, |i, _| c_t[i] - 0.5 * (mlo[i] + mhi[i]));
        let u = &self.step_cov_inv * diff;
        let var = (u.transpose() * &self.step_cov * &u)[(0, 0)];
        if var > 0.0 && var.is_finite() {
            let u: Vec<f64> = u.iter().copied().collect();
            let (a, b) = project_box(&u, &target.lower, &target.upper);
            let (m_lo, m_hi) = project_box(&u, &mlo, &mhi);
            best = best.min(max_window_mass(a, b, m_lo, m_hi, var.sqrt()));
        }
        best
    }

    /// Bounds on `P(ζ(s; x) ∈ S, τ(x) = s)` over `x ∈ R`, with the lower bound sound for the
    /// minimum and the upper bound sound for the maximum.
    pub fn trans_bounds(&self, r: &Hyperrect, target: &Hyperrect, s: usize) -> Result<(f64, f64)> {
        let kbar = self.sys.kbar;
        if s == 0 || s > kbar {
            return Err(crate::error::invalid(format!("s must lie in 1..={kbar}, got {s}")));
        }
        if target.is_empty() {
            return Ok((0.0, 0.0));
        }
        let cap = self.cheap_upper(r, target, s);
        let joint = self.stacked_objective(s - 1, Some(target))?;
        if s == kbar {
            let e = self.extrema(&joint, r, true, true)?;
            return Ok((e.min.min(cap), e.max.min(cap)));
        }
        let quiet = target.intersect(&r.minkowski_sum(&self.phi0));
        let e = self.extrema(&joint, r, true, true)?;
        if !quiet.overlaps(target) || quiet.volume() == 0.0 {
            // S never meets Φ(x), so checking s fires whenever it lands in S.
            return Ok((e.min.min(cap), e.max.min(cap)));
        }

        // Lower bound from the part of S outside every possible quiet set, in pieces.
        let mut outside_quiet = 0.0;
        for piece in rect_diff(target, &r.minkowski_sum(&self.phi0)) {
            let obj = self.stacked_objective(s - 1, Some(&piece))?;
            outside_quiet += self.extrema(&obj, r, true, false)?.min;
        }
        // Lower bound: total probability over S, minus the largest mass left in a quiet set.
        let quiet_obj = self.stacked_objective(s - 1, Some(&quiet))?;
        let minus_quiet = e.min - self.extrema(&quiet_obj, r, false, true)?.max;
        // Lower bound conditioning on ζ(sh) = v, with the two factors bounded separately.
        let marg = self.extrema(&self.marginal_objective(s, target)?, r, true, true)?;
        let cond_max = if s == 1 { 1.0 } else {
            let obj = self.conditional_objective(s)?;
            self.extrema(&obj, &r.product(&quiet), false, true)?.max
        };
        let conditioned = e.min - cond_max * marg.max;
        let low = outside_quiet.max(minus_quiet).max(conditioned).max(0.0);

        // Upper bound: the quiet mass is certainly lost only where S lies in Φ(x) for every x ∈ R.
        let always_quiet = Hyperrect {
            lower: r.upper.iter().map(|u| u - self.sys.eps).collect(),
            upper: r.lower.iter().map(|l| l + self.sys.eps).collect(),
        };
        let cond_min = if !target.is_subset_of(&always_quiet) {
            0.0
        } else if s == 1 {
            1.0
        } else {
            let obj = self.conditional_objective(s)?;
            self.extrema(&obj, &r.product(target), true, false)?.min
        };
        let high = (e.max - cond_min * marg.min).clamp(0.0, 1.0);
        Ok((low.min(cap), high.min(cap).max(low.min(cap))))
    }

    /// Extrema over `R` of `P(ζ̃_j ∈ Φ^j(x))`; `j = 0` is the certain event.
    fn quiet_extrema(&self, r: &Hyperrect, j: usize) -> Result<Extrema> {
        if j == 0 {
            return Ok(Extrema { min: 1.0, max: 1.0 });
        }
        self.extrema(&self.stacked_objective(j, None)?, r, true, true)
    }

    /// Bounds on `P(τ(x) = s)` over `x ∈ R`.
    pub fn tau_bounds(&self, r: &Hyperrect, s: usize) -> Result<(f64, f64)> {
        let kbar = self.sys.kbar;
        if s == 0 {
            return Ok((0.0, 0.0));
        }
        if s > kbar {
            return Err(crate::error::invalid(format!("s must lie in 0..={kbar}, got {s}")));
        }
        let before = self.quiet_extrema(r, s - 1)?;
        if s == kbar {
            return Ok((before.min, before.max));
        }
        let after = self.quiet_extrema(r, s)?;
        Ok(((before.min - after.max).clamp(0.0, 1.0), (before.max - after.min).clamp(0.0, 1.0)))
    }

    /// All of `tau_bounds(R, 1..=kbar)`, sharing the quiet-set extrema.
    pub fn tau_bounds_all(&self, r: &Hyperrect) -> Result<Vec<(f64, f64)>> {
        let kbar = self.sys.kbar;
        let quiet = (0..kbar).map(|j| self.quiet_extrema(r, j)).collect::<Result<Vec<_>>>()?;
        Ok((1..=kbar)
            .map(|s| {
                if s == kbar {
                    (quiet[s - 1].min, quiet[s - 1].max)
                } else {
                    (
                        (quiet[s - 1].min - quiet[s].max).clamp(0.0, 1.0),
                        (quiet[s - 1].max - quiet[s].min).clamp(0.0, 1.0),
                    )
                }
            })
            .collect())
    }

    /// Bounds on the probability of the next sample leaving `inside`, summed over `s`.
    ///
    /// Per `s`, the τ bound minus the into-`inside` bound is intersected with the direct bound
    /// `P(quiet for s-1 checks) - P(quiet for s-1 checks, ζ(sh) ∈ inside)`. The direct form is
    /// an upper bound always, and exact when every `Φ(x)`, `x ∈ R`, lies inside. The upper bound is
    /// also capped by `P(ζ(sh) ∉ inside)` ignoring the trigger.
    pub fn abs_bounds(&self, r: &Hyperrect, inside: &Hyperrect) -> Result<(f64, f64)> {
        let kbar = self.sys.kbar;
        let quiet = (0..kbar).map(|j| self.quiet_extrema(r, j)).collect::<Result<Vec<_>>>()?;
        let tau = self.tau_bounds_all(r)?;
        let contained = r.minkowski_sum(&self.phi0).is_subset_of(inside);
        let (mut low, mut high) = (0.0, 0.0);
        for s in 1..=kbar {
            let (t_lo, t_hi) = tau[s - 1];
            let (in_lo, in_hi) = self.trans_bounds(r, inside, s)?;
            let stay = self.extrema(&self.stacked_objective(s - 1, Some(inside))?, r, true, true)?;
            let mut lo_s = (t_lo - in_hi).max(0.0);
            if contained || s == kbar {
                lo_s = lo_s.max(quiet[s - 1].min - stay.max);
            }
            let land = self.extrema(&self.marginal_objective(s, inside)?, r, true, false)?;
            let hi_s = (t_hi - in_lo)
                .min(quiet[s - 1].max - stay.min)
                .min(1.0 - land.min)
                .clamp(0.0, 1.0);
            low += lo_s.min(hi_s);
            high += hi_s;
        }
        Ok((low.clamp(0.0, 1.0), high.clamp(0.0, 1.0)))
    }

    pub(crate) fn entry(&self, region: usize, r: &Hyperrect, target: &Hyperrect, s: usize) -> Result<(f64, f64)> {
        self.trans_bounds(r, target, s).map_err(|e| entry_err(region, target, s, e))
    }
}

/// [`Abstractor::trans_bounds`] with default settings.
pub fn trans_bounds_regular(sys: &PetcSystem, r: &Hyperrect, target: &Hyperrect, s: usize) -> Result<(f64, f64)> {
    Abstractor::new(sys, AbstractionConfig::default())?.trans_bounds(r, target, s)
}

/// [`Abstractor::tau_bounds`] with default settings.
pub fn tau_bounds(sys: &PetcSystem, r: &Hyperrect, s: usize) -> Result<(f64, f64)> {
    Abstractor::new(sys, AbstractionConfig::default())?.tau_bounds(r, s)
}

/// [`Abstractor::abs_bounds`] with default settings.
pub fn abs_bounds(sys: &PetcSystem, r: &Hyperrect, inside: &Hyperrect) -> Result<(f64, f64)> {
    Abstractor::new(sys, AbstractionConfig::default())?.abs_bounds(r, inside)
}
