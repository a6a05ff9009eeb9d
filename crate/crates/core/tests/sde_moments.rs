mod common;

use nalgebra::{DMatrix, DVector};
use petc_core::sde_moments::{conditional_moments, cov_block, mean_matrix, stacked_moments};
use petc_core::PetcSystem;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Truncated Taylor series, independent of the library exponential.
fn taylor_exp(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..40 {
        term = &term * a * (t / k as f64);
        sum += &term;
    }
    sum
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn mean_matrix_matches_rk4() {
    let sys = PetcSystem::reference();
    let bk = sys.bk();
    let steps = 2000;
    let dt = sys.h / steps as f64;
    let f = mean_matrix(&sys, sys.h).unwrap();
    for col in 0..2 {
        let x = DVector::from_fn(2, |i, _| if i == col { 1.0 } else { 0.0 });
        let u = &bk * &x;
        let rhs = |z: &DVector<f64>| &sys.a * z + &u;
        let mut z = x.clone();
        for _ in 0..steps {
            let k1 = rhs(&z);
            let k2 = rhs(&(&z + &k1 * (dt / 2.0)));
            let k3 = rhs(&(&z + &k2 * (dt / 2.0)));
            let k4 = rhs(&(&z + &k3 * dt));
            z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        for i in 0..2 {
            assert!((f[(i, col)] - z[i]).abs() < 1e-9, "column {col}: {} vs {}", f[(i, col)], z[i]);
        }
    }
}

fn simpson<F: Fn(f64) -> DMatrix<f64>>(f: F, a: f64, b: f64, intervals: usize) -> DMatrix<f64> {
    let h = (b - a) / intervals as f64;
    let mut acc = f(a) + f(b);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

fn cov_quadrature(sys: &PetcSystem, t1: f64, t2: f64) -> DMatrix<f64> {
    let q = &sys.bw * sys.bw.transpose();
    let at = sys.a.transpose();
    simpson(|s| taylor_exp(&sys.a, t1 - s) * &q * taylor_exp(&at, t2 - s), 0.0, t1.min(t2), 400)
}

#[test]
fn equal_time_covariance_matches_quadrature() {
    let sys = PetcSystem::reference();
    let c = cov_block(&sys, sys.h, sys.h).unwrap();
    let q = cov_quadrature(&sys, sys.h, sys.h);
    assert!(max_abs(&(c - q)) < 1e-9);
}

#[test]
fn cross_time_block_matches_quadrature() {
    let sys = PetcSystem::reference();
    let st = stacked_moments(&sys, 2).unwrap();
    let q = cov_quadrature(&sys, sys.h, 2.0 * sys.h);
    assert!(max_abs(&(st.cov_block(0, 1) - &q)) < 1e-9);
    let closed = cov_block(&sys, sys.h, sys.h).unwrap() * taylor_exp(&sys.a.transpose(), sys.h);
    assert!(max_abs(&(st.cov_block(0, 1) - closed)) < 1e-12);
}

#[test]
fn stacked_covariance_positive_definite() {
    let sys = PetcSystem::reference();
    for s in 1..=sys.kbar {
        let st = stacked_moments(&sys, s).unwrap();
        assert!(max_abs(&(&st.cov - st.cov.transpose())) == 0.0);
        let eig = st.cov.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|v| *v > 0.0), "s = {s}: {:?}", eig.eigenvalues);
        for i in 0..s {
            assert!(max_abs(&(st.mean_block(i) - mean_matrix(&sys, (i + 1) as f64 * sys.h).unwrap())) < 1e-14);
        }
    }
}

#[test]
fn conditional_density_is_joint_over_marginal() {
    let gap = common::conditional_density_gap(&PetcSystem::reference(), &[0.4, -0.3], &[0.35, -0.1]);
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn slab_conditioning_reproduces_mean() {
    let sys = PetcSystem::reference();
    let joint = stacked_moments(&sys, 2).unwrap();
    let cond = conditional_moments(&sys, 2, 2).unwrap();
    let x = DVector::from_vec(vec![0.5, 0.2]);
    let mean = &joint.mean_map * &x;
    let v = mean.rows(2, 2).into_owned() + DVector::from_vec(vec![0.05, -0.03]);
    let l = joint.cov.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let delta = 0.01;
    let (mut sum, mut sumsq, mut hits) = (DVector::zeros(2), DVector::zeros(2), 0usize);
    for _ in 0..1_000_000 {
        let w = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
        let z = &mean + &l * w;
        if (z[2] - v[0]).abs() < delta && (z[3] - v[1]).abs() < delta {
            let z1 = z.rows(0, 2).into_owned();
            sumsq += z1.component_mul(&z1);
            sum += z1;
            hits += 1;
        }
    }
    assert!(hits > 500, "only {hits} samples in the slab");
    let m = &sum / hits as f64;
    let mu = &cond.mean_map_x * &x + &cond.mean_map_v * &v;
    for i in 0..2 {
        let var = sumsq[i] / hits as f64 - m[i] * m[i];
        let se = (var / hits as f64).sqrt();
        // The slab width adds a bias of at most |gain| · delta.
        let slack = 4.0 * se + delta * cond.mean_map_v.row(i).abs().sum();
        assert!((m[i] - mu[i]).abs() < slack, "component {i}: {} vs {} (slack {slack})", m[i], mu[i]);
    }
}

proptest! {
    #[test]
    fn zero_gain_semigroup(t1 in 0.0..0.5f64, t2 in 0.0..0.5f64) {
        let r = PetcSystem::reference();
        let sys = PetcSystem::new(r.a.clone(), r.b, DMatrix::zeros(1, 2), r.bw, 0.25, 0.006, 3).unwrap();
        let lhs = mean_matrix(&sys, t1 + t2).unwrap();
        let rhs = (&sys.a * t1).exp() * mean_matrix(&sys, t2).unwrap();
        prop_assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn cov_block_transpose_symmetry(t1 in 0.0..0.1f64, t2 in 0.0..0.1f64) {
        let sys = PetcSystem::reference();
        let c12 = cov_block(&sys, t1, t2).unwrap();
        let c21 = cov_block(&sys, t2, t1).unwrap();
        prop_assert!(max_abs(&(c12 - c21.transpose())) < 1e-13);
    }
}
