//! Extrema of log-concave box-probability objectives over boxes.
//!
//! For `h(x) = P(N(f(x), Σ) ∈ S' + G x)` with `f` affine, `h` is log-concave in `x`.
//! Minima over a box therefore sit at vertices, and `log h` can be maximized by ascent,
//! with the tangent plane of the concave `log h` giving a certified overestimate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mvn::{mvn_rect_prob, FixedIntegrator, MvnConfig, MvnEstimate};
use super::rect::Hyperrect;
use crate::error::{invalid, Result};

/// Relative step of the finite-difference Hessian used for Newton steps.
const HESSIAN_STEP: f64 = 1e-3;

/// `h(x) = ∫_{base + G x} N(dz | M x + c, Σ)`.
#[derive(Debug, Clone)]
pub struct RectProbObjective {
    pub mean_map: DMatrix<f64>,
    pub mean_offset: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub base_rect: Hyperrect,
    pub shift_map: DMatrix<f64>,
    /// `M - G`, the mean map of the equivalent fixed-box problem.
    effective_map: DMatrix<f64>,
}

impl RectProbObjective {
    pub fn new(
        mean_map: DMatrix<f64>,
        mean_offset: DVector<f64>,
        cov: DMatrix<f64>,
        base_rect: Hyperrect,
        shift_map: DMatrix<f64>,
    ) -> Result<Self> {
        let d = base_rect.dim();
        let p = mean_map.ncols();
        if mean_map.nrows() != d
            || mean_offset.len() != d
            || cov.shape() != (d, d)
            || shift_map.shape() != (d, p)
        {
            return Err(invalid(format!(
                "objective shapes disagree: mean map {:?}, offset {}, cov {:?}, box {}, shift {:?}",
                mean_map.shape(),
                mean_offset.len(),
                cov.shape(),
                d,
                shift_map.shape()
            )));
        }
        let effective_map = &mean_map - &shift_map;
        Ok(Self {
            mean_map,
            mean_offset,
            cov,
            base_rect,
            shift_map,
            effective_map,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.mean_map.ncols()
    }

    /// Mean `f(x) - G x` of the problem rewritten over the fixed box `base`.
    pub fn effective_mean(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        (&self.effective_map * x + &self.mean_offset).iter().copied().collect()
    }

    pub fn evaluate(&self, x: &[f64], cfg: &MvnConfig) -> Result<MvnEstimate> {
        mvn_rect_prob(&self.effective_mean(x), &self.cov, &self.base_rect, cfg)
    }
}

/// Ascent settings for [`max_over_box`].
#[derive(Debug, Clone, PartialEq)]
pub struct AscentConfig {
    pub starts: usize,
    pub max_iter: usize,
    /// Central-difference step relative to the box width along each axis.
    pub fd_step: f64,
    /// Stop once the certified overestimate exceeds the incumbent by at most this much.
    pub gap_tol: f64,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iter: 200,
            fd_step: 1e-5,
            gap_tol: 1e-5,
            seed: 0x00a5_ce47,
        }
    }
}

/// Result of a box optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxExtremum {
    /// Integrator output at `point`.
    pub estimate: MvnEstimate,
    pub point: Vec<f64>,
    /// Sound bound: a lower bound on the minimum, or an upper bound on the maximum.
    pub bound: f64,
    /// False when the ascent gave up and `bound` fell back to 1.
    pub converged: bool,
}

/// An objective bound to a box, with the integrator frozen at the box center.
pub struct BoxProblem<'a> {
    obj: &'a RectProbObjective,
    integrator: FixedIntegrator,
    bx: Hyperrect,
}

impl<'a> BoxProblem<'a> {
    pub fn new(obj: &'a RectProbObjective, bx: &Hyperrect, cfg: &MvnConfig) -> Result<Self> {
        if bx.dim() != obj.param_dim() {
            return Err(invalid(format!(
                "box has dimension {} but the objective takes {} parameters",
                bx.dim(),
                obj.param_dim()
            )));
        }
        if !bx.is_bounded() || bx.is_empty() {
            return Err(invalid("optimization box must be bounded and non-empty"));
        }
        let integrator = FixedIntegrator::new(&obj.cov, &obj.base_rect, &obj.effective_mean(&bx.center()), cfg)?;
        Ok(Self {
            obj,
            integrator,
            bx: bx.clone(),
        })
    }

    pub fn value(&self, x: &[f64]) -> MvnEstimate {
        self.integrator.prob(&self.obj.effective_mean(x))
    }

    /// Vertex enumeration; ties go to the lexicographically smallest vertex.
    pub fn minimize(&self) -> BoxExtremum {
        self.minimize_with_best_vertex().0
    }

    /// The minimum together with the vertex of largest value, a good ascent start.
    fn minimize_with_best_vertex(&self) -> (BoxExtremum, Vec<f64>) {
        let mut best: Option<(MvnEstimate, Vec<f64>)> = None;
        let mut top: Option<(f64, Vec<f64>)> = None;
        let mut bound = f64::INFINITY;
        for v in self.bx.vertices() {
            let est = self.value(&v);
            bound = bound.min(est.lower());
            if top.as_ref().is_none_or(|(t, _)| est.value > *t) {
                top = Some((est.value, v.clone()));
            }
            if best.as_ref().is_none_or(|(b, _)| est.value < b.value) {
                best = Some((est, v));
            }
        }
        let (estimate, point) = best.expect("a box has at least one vertex");
        let min = BoxExtremum {
            estimate,
            point,
            bound,
            converged: true,
        };
        (min, top.expect("a box has at least one vertex").1)
    }

    /// Both extrema, reusing the vertex values of the minimization as an ascent start.
    pub fn extrema(&self, cfg: &AscentConfig) -> (BoxExtremum, BoxExtremum) {
        let (min, top) = self.minimize_with_best_vertex();
        let max = self.maximize(cfg, &[top]);
        (min, max)
    }

    fn log_value(&self, x: &[f64]) -> (f64, MvnEstimate) {
        let est = self.value(x);
        (est.value.ln(), est)
    }

    fn gradient(&self, x: &[f64], step: f64) -> Vec<f64> {
        let widths = self.bx.widths();
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            if widths[i] == 0.0 {
                continue;
            }
            let hstep = step * widths[i];
            probe[i] = x[i] + hstep;
            let up = self.log_value(&probe).0;
            probe[i] = x[i] - hstep;
            let down = self.log_value(&probe).0;
            probe[i] = x[i];
            g[i] = (up - down) / (2.0 * hstep);
        }
        g
    }

    /// Largest increase of the tangent plane at `x` over the box.
    fn tangent_gap(&self, x: &[f64], g: &[f64]) -> f64 {
        (0..x.len())
            .map(|i| (g[i] * (self.bx.upper[i] - x[i])).max(g[i] * (self.bx.lower[i] - x[i])).max(0.0))
            .sum()
    }

    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.bx.lower[i], self.bx.upper[i]);
        }
    }

    fn default_starts(&self, cfg: &AscentConfig) -> Vec<Vec<f64>> {
        let c = self.bx.center();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let interior: Vec<f64> = (0..c.len())
            .map(|i| self.bx.lower[i] + rng.random::<f64>() * (self.bx.upper[i] - self.bx.lower[i]))
            .collect();
        let mut starts = vec![c.clone(), interior];
        for v in self.bx.vertices().into_iter().take(6) {
            starts.push(c.iter().zip(&v).map(|(ci, vi)| ci + 0.9 * (vi - ci)).collect());
        }
        starts
    }

    /// Finite-difference Hessian of `log h` at `x`, with step `HESSIAN_STEP` times the width.
    fn hessian(&self, x: &[f64], f: f64) -> DMatrix<f64> {
        let p = x.len();
        let widths = self.bx.widths();
        let steps: Vec<f64> = widths.iter().map(|w| HESSIAN_STEP * w).collect();
        let mut hm = DMatrix::zeros(p, p);
        let mut probe = x.to_vec();
        for i in 0..p {
            if steps[i] == 0.0 {
                continue;
            }
            probe[i] = x[i] + steps[i];
            let up = self.log_value(&probe).0;
            probe[i] = x[i] - steps[i];
            let down = self.log_value(&probe).0;
            probe[i] = x[i];
            hm[(i, i)] = (up - 2.0 * f + down) / (steps[i] * steps[i]);
            for j in 0..i {
                if steps[j] == 0.0 {
                    continue;
                }
                let mut corner = |si: f64, sj: f64| {
                    probe[i] = x[i] + si * steps[i];
                    probe[j] = x[j] + sj * steps[j];
                    let v = self.log_value(&probe).0;
                    probe[i] = x[i];
                    probe[j] = x[j];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                    / (4.0 * steps[i] * steps[j]);
                hm[(i, j)] = v;
                hm[(j, i)] = v;
            }
        }
        hm
    }

    /// Newton direction on the coordinates not pinned at an active bound, or `None` when the
    /// curvature estimate is not negative definite there.
    fn newton_direction(&self, x: &[f64], g: &[f64], f: f64) -> Option<Vec<f64>> {
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| {
                let w = self.bx.upper[i] - self.bx.lower[i];
                let at_lo = x[i] <= self.bx.lower[i] && g[i] <= 0.0;
                let at_hi = x[i] >= self.bx.upper[i] && g[i] >= 0.0;
                w > 0.0 && !at_lo && !at_hi
            })
            .collect();
        if free.is_empty() {
            return None;
        }
        let hm = self.hessian(x, f);
        let neg = DMatrix::from_fn(free.len(), free.len(), |a, b| -hm[(free[a], free[b])]);
        let chol = neg.cholesky()?;
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
        let step = chol.solve(&gf);
        let mut d = vec![0.0; x.len()];
        for (k, &i) in free.iter().enumerate() {
            d[i] = step[k];
        }
        d.iter().all(|v| v.is_finite()).then_some(d)
    }

    /// Projected Newton ascent on `log h` from several starts, falling back to gradient
    /// steps where the curvature estimate is unusable.
    ///
    /// `extra_starts` are tried before the default ones. The returned bound is the smallest
    /// tangent-plane overestimate seen, plus the integration error at the incumbent.
    pub fn maximize(&self, cfg: &AscentConfig, extra_starts: &[Vec<f64>]) -> BoxExtremum {
        let mut starts: Vec<Vec<f64>> = extra_starts.to_vec();
        starts.extend(self.default_starts(cfg));
        starts.truncate(cfg.starts.max(1) + extra_starts.len());

        let max_width = self.bx.widths().into_iter().fold(0.0, f64::max);
        let mut incumbent: Option<(MvnEstimate, Vec<f64>)> = None;
        let mut log_bound = f64::INFINITY;
        let mut worst_err: f64 = 0.0;

        let consider = |est: MvnEstimate, x: &[f64], incumbent: &mut Option<(MvnEstimate, Vec<f64>)>| {
            if incumbent.as_ref().is_none_or(|(b, _)| est.value > b.value) {
                *incumbent = Some((est, x.to_vec()));
            }
        };

        for start in starts {
            let mut x = start;
            self.project(&mut x);
            let (mut f, est) = self.log_value(&x);
            consider(est, &x, &mut incumbent);
            worst_err = worst_err.max(est.error);
            if !f.is_finite() {
                continue;
            }
            let mut g = self.gradient(&x, cfg.fd_step);
            for _ in 0..cfg.max_iter {
                let gap = self.tangent_gap(&x, &g);
                log_bound = log_bound.min(f + gap);
                if f.exp() * gap.exp_m1() <= cfg.gap_tol || max_width == 0.0 {
                    break;
                }
                let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if !(gnorm > 0.0) || !gnorm.is_finite() {
                    break;
                }
                let (dir, mut t) = match self.newton_direction(&x, &g, f) {
                    Some(d) => (d, 1.0),
                    None => (g.clone(), max_width / gnorm),
                };
                let mut accepted = None;
                for _ in 0..50 {
                    let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
                    self.project(&mut xn);
                    let ascent: f64 = (0..x.len()).map(|i| g[i] * (xn[i] - x[i])).sum();
                    let (fn_, est) = self.log_value(&xn);
                    if ascent > 0.0 && fn_.is_finite() && fn_ >= f + 1e-4 * ascent {
                        accepted = Some((xn, fn_, est));
                        break;
                    }
                    t *= 0.5;
                }
                let Some((xn, fn_, est)) = accepted else { break };
                let moved = x.iter().zip(&xn).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                x = xn;
                f = fn_;
                consider(est, &x, &mut incumbent);
                worst_err = worst_err.max(est.error);
                g = self.gradient(&x, cfg.fd_step);
                if moved <= 1e-12 * max_width {
                    log_bound = log_bound.min(f + self.tangent_gap(&x, &g));
                    break;
                }
            }
            if let Some((best, _)) = &incumbent {
                if log_bound.exp() - best.value <= cfg.gap_tol {
                    break;
                }
            }
        }

        let (estimate, point) = incumbent.expect("at least one start");
        if !log_bound.is_finite() {
            if estimate.value == 0.0 && log_bound == f64::NEG_INFINITY {
                return BoxExtremum { estimate, point, bound: 0.0, converged: true };
            }
            log::warn!("box maximization did not converge; falling back to the trivial bound 1");
            return BoxExtremum {
                estimate,
                point,
                bound: 1.0,
                converged: false,
            };
        }
        let bound = (log_bound.exp() * (1.0 + 1e-9) + worst_err.max(estimate.error)).min(1.0);
        BoxExtremum {
            bound: bound.max(estimate.upper()),
            estimate,
            point,
            converged: true,
        }
    }
}

/// Minimum of a log-concave box objective over a bounded box, by vertex enumeration.
pub fn min_over_box(obj: &RectProbObjective, bx: &Hyperrect, cfg: &MvnConfig) -> Result<BoxExtremum> {
    Ok(BoxProblem::new(obj, bx, cfg)?.minimize())
}

/// Certified overestimate of the maximum of a log-concave box objective over a bounded box.
pub fn max_over_box(obj: &RectProbObjective, bx: &Hyperrect, cfg: &MvnConfig, ascent: &AscentConfig) -> Result<BoxExtremum> {
    Ok(BoxProblem::new(obj, bx, cfg)?.maximize(ascent, &[]))
}
