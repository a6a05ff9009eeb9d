#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use petc_core::gauss::{max_over_box, min_over_box, AscentConfig, BoxProblem, Hyperrect, MvnConfig, RectProbObjective};
use petc_core::sde_moments::{conditional_moments, stacked_moments};
use petc_core::simulator::Simulator;
use petc_core::imc_analysis::Direction;
use petc_core::PetcSystem;
use rayon::prelude::*;

/// Largest deviation, in standard errors, between the empirical moments of `samples` composed
/// exact steps from `x` (held input, no trigger) and the stacked closed-form moments.
pub fn stacked_moment_deviation(sys: &PetcSystem, x: &[f64], s: usize, samples: usize, seed: u64) -> f64 {
    let sim = Simulator::new(sys).unwrap();
    let g = stacked_moments(sys, s).unwrap();
    let n = sys.n();
    let d = s * n;
    let mean = &g.mean_map * DVector::from_column_slice(x);
    let draws: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|id| {
            let mut rng = Simulator::path_rng(seed, id as u64);
            let mut z = x.to_vec();
            let mut out = Vec::with_capacity(d);
            for _ in 0..s {
                z = sim.exact_step(x, &z, &mut rng).unwrap();
                out.extend_from_slice(&z);
            }
            out
        })
        .collect();
    let m = samples as f64;
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let col: Vec<f64> = draws.iter().map(|v| v[i]).collect();
        let avg = col.iter().sum::<f64>() / m;
        let var = col.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (m - 1.0);
        worst = worst.max((avg - mean[i]).abs() / (var / m).sqrt());
    }
    // Covariance entries about the exact mean: the products are iid with known expectation.
    for i in 0..d {
        for j in i..d {
            let prod: Vec<f64> = draws.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).collect();
            let avg = prod.iter().sum::<f64>() / m;
            let var = prod.iter().map(|p| (p - avg).powi(2)).sum::<f64>() / (m - 1.0);
            worst = worst.max((avg - g.cov[(i, j)]).abs() / (var / m).sqrt());
        }
    }
    worst
}

/// Extreme points of `{p : low <= p <= high, sum p = 1}`: every coordinate but one sits at a bound.
pub fn polytope_vertices(low: &[f64], high: &[f64]) -> Vec<Vec<f64>> {
    let n = low.len();
    let mut out = Vec::new();
    for free in 0..n {
        for mask in 0u32..(1 << (n - 1)) {
            let mut p = vec![0.0; n];
            let mut bit = 0;
            for j in 0..n {
                if j == free {
                    continue;
                }
                p[j] = if mask >> bit & 1 == 1 { high[j] } else { low[j] };
                bit += 1;
            }
            p[free] = 1.0 - p.iter().sum::<f64>();
            if p[free] >= low[free] - 1e-12 && p[free] <= high[free] + 1e-12 {
                out.push(p);
            }
        }
    }
    out
}

pub fn vertex_extremum(values: &[f64], low: &[f64], high: &[f64], dir: Direction) -> f64 {
    let e = polytope_vertices(low, high)
        .into_iter()
        .map(|p| p.iter().zip(values).map(|(a, b)| a * b).sum::<f64>());
    match dir {
        Direction::Inf => e.fold(f64::INFINITY, f64::min),
        Direction::Sup => e.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Finite-horizon value by backward recursion with the vertex oracle at every step.
pub fn vertex_value(low: &[Vec<f64>], high: &[Vec<f64>], r: &[f64], mul: bool, n: usize, dir: Direction) -> Vec<f64> {
    let mut v = r.to_vec();
    for _ in 0..n {
        v = (0..r.len())
            .map(|q| {
                let e = vertex_extremum(&v, &low[q], &high[q], dir);
                if mul { r[q] * e } else { r[q] + e }
            })
            .collect();
    }
    v
}

/// Expected reward of an exact chain by enumerating every path of length `n`.
pub fn path_value(p: &[Vec<f64>], r: &[f64], start: usize, n: usize, mul: bool) -> f64 {
    let m = r.len();
    let mut total = 0.0;
    let mut path = vec![0usize; n];
    loop {
        let mut prob = 1.0;
        let mut acc = r[start];
        let mut q = start;
        for &next in &path {
            prob *= p[q][next];
            q = next;
            if mul { acc *= r[q] } else { acc += r[q] }
        }
        total += prob * acc;
        let mut i = 0;
        while i < n && path[i] == m - 1 {
            path[i] = 0;
            i += 1;
        }
        if i == n {
            return total;
        }
        path[i] += 1;
    }
}

pub fn random_chain(m: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut exact = Vec::new();
    let mut low = Vec::new();
    let mut high = Vec::new();
    for _ in 0..m {
        let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / s).collect();
        low.push(p.iter().map(|x| (x - 0.1 * rng.random::<f64>()).max(0.0)).collect());
        high.push(p.iter().map(|x| (x + 0.1 * rng.random::<f64>()).min(1.0)).collect());
        exact.push(p);
    }
    (exact, low, high)
}


/// Probability of reaching `goal` within `n` steps through `safe` states, by enumerating paths.
pub fn path_until(p: &[Vec<f64>], safe: &[bool], goal: &[bool], start: usize, n: usize) -> f64 {
    fn go(p: &[Vec<f64>], safe: &[bool], goal: &[bool], q: usize, left: usize) -> f64 {
        if goal[q] {
            return 1.0;
        }
        if !safe[q] || left == 0 {
            return 0.0;
        }
        (0..p.len()).map(|j| p[q][j] * go(p, safe, goal, j, left - 1)).sum()
    }
    go(p, safe, goal, start, n)
}

pub fn log_density(z: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = z.len() as f64;
    let chol = cov.clone().cholesky().unwrap();
    let r = z - mean;
    let sol = chol.solve(&r);
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (r.dot(&sol) + logdet + d * (2.0 * std::f64::consts::PI).ln())
}

/// Largest relative gap between the conditional density of the first block given the second,
/// and the joint density divided by the marginal, at a few points.
pub fn conditional_density_gap(sys: &PetcSystem, x: &[f64], v: &[f64]) -> f64 {
    let joint = stacked_moments(sys, 2).unwrap();
    let cond = conditional_moments(sys, 2, 2).unwrap();
    let x = DVector::from_column_slice(x);
    let v = DVector::from_column_slice(v);
    let mean = &joint.mean_map * &x;
    let mu = &cond.mean_map_x * &x + &cond.mean_map_v * &v + &cond.mean_offset;
    let mu1 = mu.rows(0, 2).into_owned();
    let cov1 = cond.cov.view((0, 0), (2, 2)).into_owned();
    let mean_v = mean.rows(2, 2).into_owned();
    let cov_v = joint.cov_block(1, 1);
    let mut worst: f64 = 0.0;
    for dz in [-0.1, 0.0, 0.07] {
        let z = &mu1 + DVector::from_vec(vec![dz, 0.5 * dz]);
        let zv = DVector::from_iterator(4, z.iter().chain(v.iter()).copied());
        let ratio = (log_density(&zv, &mean, &joint.cov) - log_density(&v, &mean_v, &cov_v)).exp();
        let direct = log_density(&z, &mu1, &cov1).exp();
        worst = worst.max(((ratio - direct) / ratio).abs());
    }
    worst
}

/// `P(ζ̃₂ ∈ Φ²(x))`: both checks stay within ε of the measurement.
pub fn no_trigger_objective(sys: &PetcSystem) -> RectProbObjective {
    let st = stacked_moments(sys, 2).unwrap();
    let g = DMatrix::from_fn(4, 2, |i, j| if i % 2 == j { 1.0 } else { 0.0 });
    RectProbObjective::new(st.mean_map, DVector::zeros(4), st.cov, Hyperrect::cube(4, sys.eps), g).unwrap()
}

/// Extrema of a 2-D objective over an `m × m` grid on `bx`.
pub fn grid_extrema(p: &BoxProblem, bx: &Hyperrect, m: usize) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..m {
        for j in 0..m {
            let x = [
                bx.lower[0] + (bx.upper[0] - bx.lower[0]) * i as f64 / (m - 1) as f64,
                bx.lower[1] + (bx.upper[1] - bx.lower[1]) * j as f64 / (m - 1) as f64,
            ];
            let v = p.value(&x).value;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Gap between the box extrema and a 50 × 50 grid search on three reference boxes: the
/// largest `|min - grid min|`, the largest `max bound - grid max`, and whether the bounds bracket.
pub fn box_extrema_vs_grid(sys: &PetcSystem) -> (f64, f64, bool) {
    let cfg = MvnConfig::default();
    let obj = no_trigger_objective(sys);
    let (mut dmin, mut dmax, mut bracket) = (0.0f64, 0.0f64, true);
    for bx in [
        Hyperrect::new(vec![0.24, -0.48], vec![0.288, -0.432]).unwrap(),
        Hyperrect::new(vec![-1.2, 1.152], vec![-1.152, 1.2]).unwrap(),
        Hyperrect::new(vec![-0.024, -0.024], vec![0.024, 0.024]).unwrap(),
    ] {
        let p = BoxProblem::new(&obj, &bx, &cfg).unwrap();
        let (glo, ghi) = grid_extrema(&p, &bx, 50);
        let lo = min_over_box(&obj, &bx, &cfg).unwrap();
        let hi = max_over_box(&obj, &bx, &cfg, &AscentConfig::default()).unwrap();
        dmin = dmin.max((lo.estimate.value - glo).abs());
        dmax = dmax.max(hi.bound - ghi);
        bracket &= lo.bound <= glo && hi.bound >= ghi;
    }
    (dmin, dmax, bracket)
}
