//! Monte Carlo sampler of trigger sequences using the exact Gaussian transition between
//! checking times.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, Result};
use crate::gauss::normal;
use crate::gauss::Hyperrect;
use crate::imc_analysis::{AnalysisKind, Denominator, RewardSpec};
use crate::sde_moments::{cov_block, exp_and_integral};
use crate::system::PetcSystem;

/// One trigger: the intersampling multiple and the state measured at the trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSample {
    pub tau: usize,
    pub state: Vec<f64>,
}

/// Monte Carlo mean with a 99% confidence interval: the normal approximation in general, and the
/// Wilson score interval for 0/1 samples, which stays non-degenerate at frequencies 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_paths: usize,
}

fn z99() -> f64 {
    normal::isf(0.005)
}

impl McEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if values.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Self::from_count(values.iter().filter(|&&v| v == 1.0).count(), n);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            z99() * (var / n as f64).sqrt()
        } else {
            0.0
        };
        McEstimate { mean, ci_low: mean - half, ci_high: mean + half, n_paths: n }
    }

    /// Frequency estimate from a success count.
    pub fn from_count(hits: usize, n: usize) -> Self {
        let (k, m, z) = (hits as f64, n as f64, z99());
        let p = k / m;
        let denom = 1.0 + z * z / m;
        let center = (p + z * z / (2.0 * m)) / denom;
        let half = z / denom * (p * (1.0 - p) / m + z * z / (4.0 * m * m)).sqrt();
        McEstimate { mean: p, ci_low: (center - half).max(0.0), ci_high: (center + half).min(1.0), n_paths: n }
    }

    /// Whether the confidence interval meets `[low, high]`.
    pub fn contained_in(&self, low: f64, high: f64) -> bool {
        self.ci_low <= high && low <= self.ci_high
    }
}

/// Precomputed one-period transition `z' = Φz + ΓBK·x + Lξ`.
#[derive(Debug, Clone)]
pub struct Simulator {
    n: usize,
    eps: f64,
    kbar: usize,
    /// Row-major `e^{Ah}`.
    phi: Vec<f64>,
    /// Row-major `Γ(h)BK`.
    input: Vec<f64>,
    /// Row-major square root of `Cov(h, h)`.
    noise: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn mat_vec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o += m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Lower Cholesky factor, or a symmetric eigen square root for singular covariances.
fn cov_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = c.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * c.norm().max(1.0)) {
        return Err(numeric("step covariance is not positive semidefinite"));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

impl Simulator {
    pub fn new(sys: &PetcSystem) -> Result<Self> {
        let (e, gamma) = exp_and_integral(&sys.a, sys.h)?;
        let l = cov_sqrt(&cov_block(sys, sys.h, sys.h)?)?;
        Ok(Simulator {
            n: sys.n(),
            eps: sys.eps,
            kbar: sys.kbar,
            phi: row_major(&e),
            input: row_major(&(gamma * sys.bk())),
            noise: row_major(&l),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kbar(&self) -> usize {
        self.kbar
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.n {
            Ok(())
        } else {
            Err(invalid(format!("expected a {}-vector, got length {}", self.n, v.len())))
        }
    }

    /// Held-input term `Γ(h)BK·x`.
    fn input_term(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        mat_vec_add(&self.input, x, &mut out);
        out
    }

    fn step_into(&self, u: &[f64], z: &[f64], xi: &mut [f64], out: &mut [f64], rng: &mut ChaCha8Rng) {
        out.copy_from_slice(u);
        mat_vec_add(&self.phi, z, out);
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        mat_vec_add(&self.noise, xi, out);
    }

    /// Samples `ζ((j+1)h)` given `ζ(jh) = z` while the input is held at `Kx`.
    pub fn exact_step(&self, x: &[f64], z: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_dim(z)?;
        let mut out = vec![0.0; self.n];
        let mut xi = vec![0.0; self.n];
        self.step_into(&self.input_term(x), z, &mut xi, &mut out, rng);
        Ok(out)
    }

    /// Runs checks from the measurement `x` until the trigger; writes the state into `state`
    /// and returns `τ`.
    pub fn sample_trigger_into(&self, x: &[f64], state: &mut [f64], rng: &mut ChaCha8Rng) -> usize {
        let u = self.input_term(x);
        let mut z = x.to_vec();
        let mut xi = vec![0.0; self.n];
        for j in 1..=self.kbar {
            self.step_into(&u, &z, &mut xi, state, rng);
            let triggered = state.iter().zip(x).any(|(a, b)| (a - b).abs() > self.eps);
            if triggered || j == self.kbar {
                return j;
            }
            z.copy_from_slice(state);
        }
        unreachable!("kbar >= 1")
    }

    pub fn sample_trigger(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<TriggerSample> {
        self.check_dim(x)?;
        let mut state = vec![0.0; self.n];
        let tau = self.sample_trigger_into(x, &mut state, rng);
        Ok(TriggerSample { tau, state })
    }

    /// `N` consecutive triggers starting from the measurement `x0`.
    pub fn sample_path(&self, x0: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TriggerSample>> {
        self.check_dim(x0)?;
        let mut path = Vec::with_capacity(n);
        let mut x = x0.to_vec();
        for _ in 0..n {
            let t = self.sample_trigger(&x, rng)?;
            x.clone_from(&t.state);
            path.push(t);
        }
        Ok(path)
    }

    /// Generator for path `id` of a run seeded with `seed`; paths are independent streams.
    pub fn path_rng(seed: u64, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    }

    /// `n_paths` independent paths of `n` triggers each.
    pub fn sample_paths(&self, x0: &[f64], n: usize, n_paths: usize, seed: u64) -> Result<Vec<Vec<TriggerSample>>> {
        (0..n_paths)
            .into_par_iter()
            .map(|id| self.sample_path(x0, n, &mut Self::path_rng(seed, id as u64)))
            .collect()
    }

    /// Monte Carlo estimate of `E[g(ω)]` from `(x0, s0)` over `n` triggers. `safe` is the set a
    /// bounded-until path must not leave; it is ignored for the other kinds.
    #[allow(clippy::too_many_arguments)]
    pub fn estimate_reward(
        &self,
        x0: &[f64],
        s0: usize,
        spec: &dyn RewardSpec,
        kind: &AnalysisKind,
        n: usize,
        n_paths: usize,
        safe: &Hyperrect,
        seed: u64,
    ) -> Result<McEstimate> {
        if n_paths == 0 {
            return Err(invalid("at least one path is needed"));
        }
        if safe.dim() != self.n {
            return Err(invalid("safe set dimension does not match the system"));
        }
        if matches!(kind, AnalysisKind::Avg { denominator: Denominator::N }) && n == 0 {
            return Err(invalid("the denominator N needs a horizon of at least 1"));
        }
        if n == 0 {
            let v = path_value(x0, s0, &[], spec, kind, safe);
            return Ok(McEstimate { mean: v, ci_low: v, ci_high: v, n_paths });
        }
        let values: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|id| {
                let path = self.sample_path(x0, n, &mut Self::path_rng(seed, id as u64))?;
                Ok(path_value(x0, s0, &path, spec, kind, safe))
            })
            .collect::<Result<_>>()?;
        Ok(McEstimate::from_samples(&values))
    }
}

/// The path functional `g(ω)` for `ω = ((x0, s0), (x1, τ1), …)`.
pub fn path_value(
    x0: &[f64],
    s0: usize,
    path: &[TriggerSample],
    spec: &dyn RewardSpec,
    kind: &AnalysisKind,
    safe: &Hyperrect,
) -> f64 {
    let steps = std::iter::once((x0, s0)).chain(path.iter().map(|t| (t.state.as_slice(), t.tau)));
    match kind {
        AnalysisKind::Cum { gamma } => {
            let mut weight = 1.0;
            let mut total = 0.0;
            for (x, s) in steps {
                total += weight * spec.evaluate(x, s);
                weight *= gamma;
            }
            total
        }
        AnalysisKind::Mul => steps.map(|(x, s)| spec.evaluate(x, s)).product(),
        AnalysisKind::Avg { denominator } => {
            let total: f64 = steps.map(|(x, s)| spec.evaluate(x, s)).sum();
            match denominator {
                Denominator::NPlusOne => total / (path.len() + 1) as f64,
                Denominator::N => (total - spec.evaluate(x0, s0)) / path.len() as f64,
            }
        }
        AnalysisKind::Until { goal_s } => {
            for (x, s) in steps {
                if !safe.contains(x) {
                    return 0.0;
                }
                if goal_s.contains(&s) {
                    return 1.0;
                }
            }
            0.0
        }
    }
}

/// Raw samples as CSV rows `path_id,trigger_index,tau,x0,x1,…`.
pub fn samples_csv(paths: &[Vec<TriggerSample>]) -> String {
    let n = paths.iter().flatten().next().map_or(0, |t| t.state.len());
    let mut out = String::from("path_id,trigger_index,tau");
    for i in 0..n {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (p, path) in paths.iter().enumerate() {
        for (i, t) in path.iter().enumerate() {
            out.push_str(&format!("{p},{},{}", i + 1, t.tau));
            for v in &t.state {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Deterministic reference for tests: the step mean `Φz + ΓBK·x`.
pub fn step_mean(sys: &PetcSystem, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let (e, gamma) = exp_and_integral(&sys.a, sys.h)?;
    let m = e * DVector::from_column_slice(z) + gamma * sys.bk() * DVector::from_column_slice(x);
    Ok(m.as_slice().to_vec())
}
