//! Multivariate normal probabilities of boxes by Genz's separation-of-variables
//! transform, integrated with randomly shifted rank-1 lattice rules.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::normal;
use super::rect::Hyperrect;
use crate::error::{invalid, numeric, Result};

/// Prime lattice sizes, each roughly double the previous.
const LATTICE_SIZES: [usize; 12] = [31, 61, 127, 251, 509, 1021, 2039, 4093, 8191, 16381, 32749, 65521];

/// Korobov parameters tried per lattice size when the full search would be too costly.
const KOROBOV_CANDIDATES: usize = 256;

/// Accuracy and reproducibility settings for the box-probability integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnConfig {
    /// Target half-width of the confidence interval on the probability.
    pub tol: f64,
    /// Confidence level of the reported error bound.
    pub confidence: f64,
    /// Number of independent random shifts of the lattice.
    pub shifts: usize,
    /// Lattice sizes are primes between roughly `min_points / 2` and `max_points`.
    pub min_points: usize,
    pub max_points: usize,
    pub seed: u64,
}

impl Default for MvnConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            confidence: 0.99,
            shifts: 10,
            min_points: 32,
            max_points: 1 << 15,
            seed: 0x5eed,
        }
    }
}

/// A probability estimate with a statistical error bound at the configured confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnEstimate {
    pub value: f64,
    pub error: f64,
}

impl MvnEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }

    /// Value to use inside a lower bound.
    pub fn lower(&self) -> f64 {
        (self.value - self.error).clamp(0.0, 1.0)
    }

    /// Value to use inside an upper bound.
    pub fn upper(&self) -> f64 {
        (self.value + self.error).clamp(0.0, 1.0)
    }
}

/// Variable ordering and Cholesky factor for one covariance matrix.
#[derive(Debug, Clone)]
struct GenzPlan {
    dim: usize,
    /// `perm[i]` is the original coordinate integrated at position `i`.
    perm: Vec<usize>,
    /// Row-major lower-triangular factor in integration order.
    chol: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl GenzPlan {
    /// Orders variables so the most constrained ones come first, evaluated at the given
    /// (already mean-shifted) limits.
    fn new(cov: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> Result<Self> {
        let d = lo.len();
        let mut sigma: Vec<f64> = (0..d * d).map(|k| cov[(k / d, k % d)]).collect();
        let mut a = lo.to_vec();
        let mut b = hi.to_vec();
        let mut perm: Vec<usize> = (0..d).collect();
        let mut c = vec![0.0; d * d];
        let mut y = vec![0.0; d];
        let scale = (0..d).map(|i| sigma[i * d + i].abs()).fold(0.0, f64::max).max(1e-300);

        for i in 0..d {
            let mut best = i;
            let mut best_mass = f64::INFINITY;
            for j in i..d {
                let dot_y: f64 = (0..i).map(|k| c[j * d + k] * y[k]).sum();
                let var = sigma[j * d + j] - (0..i).map(|k| c[j * d + k].powi(2)).sum::<f64>();
                if var <= 0.0 {
                    continue;
                }
                let sd = var.sqrt();
                let mass = normal::interval((a[j] - dot_y) / sd, (b[j] - dot_y) / sd);
                if mass < best_mass {
                    best_mass = mass;
                    best = j;
                }
            }
            if best != i {
                for k in 0..d {
                    sigma.swap(i * d + k, best * d + k);
                }
                for k in 0..d {
                    sigma.swap(k * d + i, k * d + best);
                }
                for k in 0..i {
                    c.swap(i * d + k, best * d + k);
                }
                a.swap(i, best);
                b.swap(i, best);
                perm.swap(i, best);
            }
            let var = sigma[i * d + i] - (0..i).map(|k| c[i * d + k].powi(2)).sum::<f64>();
            if !(var > 1e-13 * scale) {
                return Err(numeric(format!(
                    "covariance is not positive definite (pivot {var:e} at step {i})"
                )));
            }
            let cii = var.sqrt();
            c[i * d + i] = cii;
            for l in i + 1..d {
                let s: f64 = (0..i).map(|k| c[l * d + k] * c[i * d + k]).sum();
                c[l * d + i] = (sigma[l * d + i] - s) / cii;
            }
            let dot_y: f64 = (0..i).map(|k| c[i * d + k] * y[k]).sum();
            y[i] = normal::truncated_mean((a[i] - dot_y) / cii, (b[i] - dot_y) / cii);
        }
        let inv_diag = (0..d).map(|i| 1.0 / c[i * d + i]).collect();
        Ok(Self {
            dim: d,
            perm,
            chol: c,
            inv_diag,
        })
    }

    /// Integrand value at lattice point `w` for permuted, mean-shifted limits.
    #[inline]
    fn integrand(&self, a: &[f64], b: &[f64], w: &[f64], y: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut prod = 1.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(c, v)| c * v).sum();
            let lo = (a[i] - s) * self.inv_diag[i];
            let hi = (b[i] - s) * self.inv_diag[i];
            if !(lo < hi) {
                return 0.0;
            }
            let last = i + 1 == d;
            let mass;
            if lo + hi > 0.0 {
                let (qa, qb) = (normal::sf(lo), normal::sf(hi));
                mass = qa - qb;
                if !last {
                    y[i] = normal::isf(qb + (1.0 - w[i]) * mass);
                }
            } else {
                let (pa, pb) = (normal::cdf(lo), normal::cdf(hi));
                mass = pb - pa;
                if !last {
                    y[i] = normal::ppf(pa + w[i] * mass);
                }
            }
            if mass <= 0.0 {
                return 0.0;
            }
            prod *= mass;
            if !last && !y[i].is_finite() {
                y[i] = if lo.is_finite() { lo } else if hi.is_finite() { hi } else { 0.0 };
                y[i] = y[i].clamp(lo, hi);
            }
        }
        prod
    }
}

/// Korobov generating vector `(1, a, a², …) mod n` minimising the `P₂` figure of merit,
/// which bounds the worst-case error for periodic integrands of smoothness two.
fn korobov_vector(n: usize, m: usize) -> Vec<usize> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Vec<usize>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(z) = cache.lock().expect("lattice cache").get(&(n, m)) {
        return z.clone();
    }
    let vector = |a: usize| {
        let mut z = Vec::with_capacity(m);
        let mut v = 1usize;
        for _ in 0..m {
            z.push(v);
            v = v * a % n;
        }
        z
    };
    let b2 = |x: f64| x * x - x + 1.0 / 6.0;
    let coef = 2.0 * std::f64::consts::PI.powi(2);
    let merit = |z: &[usize]| {
        (0..n)
            .map(|k| z.iter().map(|&zj| 1.0 + coef * b2((k * zj % n) as f64 / n as f64)).product::<f64>())
            .sum::<f64>()
    };
    let candidates: Vec<usize> = if n / 2 <= KOROBOV_CANDIDATES {
        (2..=n / 2).collect()
    } else {
        // Deterministic spread of candidates over [2, n/2].
        (0..KOROBOV_CANDIDATES).map(|i| 2 + i * (n / 2 - 2) / KOROBOV_CANDIDATES).collect()
    };
    let z = if m <= 1 {
        vector(1)
    } else {
        candidates
            .into_iter()
            .map(vector)
            .map(|z| (merit(&z), z))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, z)| z)
            .unwrap_or_else(|| vector(1))
    };
    cache.lock().expect("lattice cache").insert((n, m), z.clone());
    z
}

/// Randomly shifted rank-1 lattice rules in `[0,1)^{d-1}` with the baker's transform.
#[derive(Debug, Clone)]
struct LatticeRule {
    dim: usize,
    shifts: Vec<Vec<f64>>,
    t_quantile: f64,
}

impl LatticeRule {
    fn new(dim: usize, cfg: &MvnConfig) -> Result<Self> {
        let m = dim.saturating_sub(1);
        if cfg.shifts < 2 {
            return Err(invalid("at least two lattice shifts are needed for an error estimate"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let shifts = (0..cfg.shifts)
            .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
            .collect();
        let t = StudentsT::new(0.0, 1.0, (cfg.shifts - 1) as f64)
            .map_err(|e| numeric(format!("t distribution: {e}")))?;
        let t_quantile = t.inverse_cdf(0.5 + 0.5 * cfg.confidence);
        Ok(Self {
            dim: m,
            shifts,
            t_quantile,
        })
    }

    /// Lattice sizes to try, smallest first, within the configured point budget.
    fn sizes(cfg: &MvnConfig) -> Vec<usize> {
        let mut sizes: Vec<usize> = LATTICE_SIZES
            .iter()
            .copied()
            .filter(|&n| 2 * n >= cfg.min_points && n <= cfg.max_points)
            .collect();
        if sizes.is_empty() {
            sizes.push(LATTICE_SIZES[0]);
        }
        sizes
    }

    /// Per-shift means of the integrand over the `n`-point lattice.
    fn means(&self, plan: &GenzPlan, a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
        let m = self.dim;
        let z = korobov_vector(n, m);
        let step: Vec<f64> = z.iter().map(|&zj| zj as f64 / n as f64).collect();
        let mut w = vec![0.0; m];
        let mut y = vec![0.0; plan.dim];
        for (shift, out) in self.shifts.iter().zip(out.iter_mut()) {
            let mut sum = 0.0;
            for k in 0..n {
                for j in 0..m {
                    let t = (k as f64 * step[j] + shift[j]).fract();
                    w[j] = 1.0 - (2.0 * t - 1.0).abs();
                }
                sum += plan.integrand(a, b, &w, &mut y);
            }
            *out = sum / n as f64;
        }
    }

    fn estimate(&self, means: &[f64]) -> MvnEstimate {
        let k = means.len() as f64;
        let mean = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
        MvnEstimate {
            value: mean.clamp(0.0, 1.0),
            error: self.t_quantile * (var / k).sqrt(),
        }
    }

    /// Smallest lattice meeting the tolerance, or the largest one allowed.
    fn adaptive(&self, plan: &GenzPlan, a: &[f64], b: &[f64], cfg: &MvnConfig) -> (usize, MvnEstimate) {
        let mut means = vec![0.0; self.shifts.len()];
        let sizes = Self::sizes(cfg);
        let mut last = (0, MvnEstimate::exact(0.0));
        for n in sizes {
            self.means(plan, a, b, n, &mut means);
            last = (n, self.estimate(&means));
            if last.1.error <= cfg.tol {
                break;
            }
        }
        last
    }

    /// One-dimensional problems need no integration at all.
    fn exact_1d(plan: &GenzPlan, a: &[f64], b: &[f64]) -> MvnEstimate {
        let mut y = [0.0];
        MvnEstimate::exact(plan.integrand(a, b, &[], &mut y).clamp(0.0, 1.0))
    }
}

/// Coordinates that carry at least one finite bound; the others integrate out.
fn active_coords(rect: &Hyperrect) -> Vec<usize> {
    (0..rect.dim())
        .filter(|&i| rect.lower[i].is_finite() || rect.upper[i].is_finite())
        .collect()
}

fn check_inputs(mean: &[f64], cov: &DMatrix<f64>, rect: &Hyperrect) -> Result<()> {
    let d = rect.dim();
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(invalid(format!(
            "dimension mismatch: mean {}, covariance {}x{}, box {}",
            mean.len(),
            cov.nrows(),
            cov.ncols(),
            d
        )));
    }
    if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(numeric("non-finite mean or covariance entry"));
    }
    Ok(())
}

/// `P(Z ∈ rect)` for `Z ~ N(mean, cov)`, refined until the error bound falls below `cfg.tol`
/// or the point budget runs out.
pub fn mvn_rect_prob(mean: &[f64], cov: &DMatrix<f64>, rect: &Hyperrect, cfg: &MvnConfig) -> Result<MvnEstimate> {
    check_inputs(mean, cov, rect)?;
    if rect.is_empty() {
        return Ok(MvnEstimate::exact(0.0));
    }
    let active = active_coords(rect);
    if active.is_empty() {
        return Ok(MvnEstimate::exact(1.0));
    }
    let sub_cov = cov.select_rows(&active).select_columns(&active);
    let lo: Vec<f64> = active.iter().map(|&i| rect.lower[i] - mean[i]).collect();
    let hi: Vec<f64> = active.iter().map(|&i| rect.upper[i] - mean[i]).collect();
    let plan = GenzPlan::new(&sub_cov, &lo, &hi)?;
    let a: Vec<f64> = plan.perm.iter().map(|&p| lo[p]).collect();
    let b: Vec<f64> = plan.perm.iter().map(|&p| hi[p]).collect();
    if plan.dim == 1 {
        return Ok(LatticeRule::exact_1d(&plan, &a, &b));
    }
    let rule = LatticeRule::new(plan.dim, cfg)?;
    Ok(rule.adaptive(&plan, &a, &b, cfg).1)
}

/// Box probability for a fixed covariance and box with a variable mean.
///
/// The variable ordering and the lattice size are frozen at construction, so
/// [`FixedIntegrator::prob`] is a deterministic, smooth function of the mean.
#[derive(Debug, Clone)]
pub struct FixedIntegrator {
    active: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    plan: Option<GenzPlan>,
    rule: Option<LatticeRule>,
    points: usize,
    empty: bool,
}

impl FixedIntegrator {
    pub fn new(cov: &DMatrix<f64>, rect: &Hyperrect, reference_mean: &[f64], cfg: &MvnConfig) -> Result<Self> {
        check_inputs(reference_mean, cov, rect)?;
        let active = active_coords(rect);
        let mut this = Self {
            lower: active.iter().map(|&i| rect.lower[i]).collect(),
            upper: active.iter().map(|&i| rect.upper[i]).collect(),
            active,
            plan: None,
            rule: None,
            points: 1,
            empty: rect.is_empty(),
        };
        if this.empty || this.active.is_empty() {
            return Ok(this);
        }
        let sub_cov = cov.select_rows(&this.active).select_columns(&this.active);
        let (lo, hi) = this.shifted(reference_mean);
        let plan = GenzPlan::new(&sub_cov, &lo, &hi)?;
        let rule = LatticeRule::new(plan.dim, cfg)?;
        if plan.dim > 1 {
            let (a, b) = permute(&plan, &lo, &hi);
            this.points = rule.adaptive(&plan, &a, &b, cfg).0;
        }
        this.plan = Some(plan);
        this.rule = Some(rule);
        Ok(this)
    }

    fn shifted(&self, mean: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lo = self.active.iter().zip(&self.lower).map(|(&i, l)| l - mean[i]).collect();
        let hi = self.active.iter().zip(&self.upper).map(|(&i, u)| u - mean[i]).collect();
        (lo, hi)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn prob(&self, mean: &[f64]) -> MvnEstimate {
        if self.empty {
            return MvnEstimate::exact(0.0);
        }
        let (Some(plan), Some(rule)) = (&self.plan, &self.rule) else {
            return MvnEstimate::exact(1.0);
        };
        let (lo, hi) = self.shifted(mean);
        let (a, b) = permute(plan, &lo, &hi);
        if plan.dim == 1 {
            return LatticeRule::exact_1d(plan, &a, &b);
        }
        let mut means = vec![0.0; rule.shifts.len()];
        rule.means(plan, &a, &b, self.points, &mut means);
        rule.estimate(&means)
    }
}

fn permute(plan: &GenzPlan, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        plan.perm.iter().map(|&p| lo[p]).collect(),
        plan.perm.iter().map(|&p| hi[p]).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::function::erf::erf;

    fn cfg() -> MvnConfig {
        MvnConfig::default()
    }

    #[test]
    fn whole_space_has_unit_mass() {
        let est = mvn_rect_prob(&[0.3, -1.0], &DMatrix::identity(2, 2), &Hyperrect::whole(2), &cfg()).unwrap();
        assert_eq!(est, MvnEstimate::exact(1.0));
    }

    #[test]
    fn empty_box_has_zero_mass() {
        let r = Hyperrect::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let est = mvn_rect_prob(&[0.0, 0.0], &DMatrix::identity(2, 2), &r, &cfg()).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn positive_quadrant() {
        let r = Hyperrect::new(vec![0.0, 0.0], vec![f64::INFINITY; 2]).unwrap();
        let est = mvn_rect_prob(&[0.0, 0.0], &DMatrix::identity(2, 2), &r, &cfg()).unwrap();
        assert_abs_diff_eq!(est.value, 0.25, epsilon = 1e-5);
        assert!(est.error <= 1e-5);
    }

    #[test]
    fn one_dimensional_matches_erf() {
        let r = Hyperrect::new(vec![-1.96], vec![1.96]).unwrap();
        let est = mvn_rect_prob(&[0.0], &DMatrix::identity(1, 1), &r, &cfg()).unwrap();
        let oracle = erf(1.96 / std::f64::consts::SQRT_2);
        assert!((est.value - oracle).abs() < 1e-8);
        assert_eq!(est.error, 0.0);
    }

    #[test]
    fn correlated_orthant_matches_closed_form() {
        // P(X > 0, Y > 0) = 1/4 + asin(rho) / (2 pi)
        let rho: f64 = 0.6;
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let r = Hyperrect::new(vec![0.0, 0.0], vec![f64::INFINITY; 2]).unwrap();
        let est = mvn_rect_prob(&[0.0, 0.0], &cov, &r, &cfg()).unwrap();
        let exact = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
        assert!((est.value - exact).abs() <= est.error.max(1e-9) + 1e-12);
    }

    #[test]
    fn equicorrelated_orthant_in_four_dimensions() {
        // For equicorrelation 1/2 the positive orthant has probability 1/(d+1).
        let d = 4;
        let cov = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.5 });
        let r = Hyperrect::new(vec![0.0; d], vec![f64::INFINITY; d]).unwrap();
        let est = mvn_rect_prob(&vec![0.0; d], &cov, &r, &cfg()).unwrap();
        assert!((est.value - 0.2).abs() <= 3.0 * est.error.max(1e-6), "{est:?}");
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = Hyperrect::cube(2, 1.0);
        assert!(mvn_rect_prob(&[0.0, 0.0], &cov, &r, &cfg()).is_err());
    }

    #[test]
    fn fixed_integrator_agrees_with_adaptive() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.0]);
        let r = Hyperrect::new(vec![-1.0, -0.5, 0.0], vec![1.0, 2.0, 1.5]).unwrap();
        let fixed = FixedIntegrator::new(&cov, &r, &[0.0; 3], &cfg()).unwrap();
        for mean in [[0.0, 0.0, 0.0], [0.2, -0.1, 0.4]] {
            let a = fixed.prob(&mean);
            let b = mvn_rect_prob(&mean, &cov, &r, &cfg()).unwrap();
            assert!((a.value - b.value).abs() <= 2.0 * (a.error + b.error) + 1e-9);
        }
    }
}
