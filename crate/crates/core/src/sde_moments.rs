//! Closed-form moments of the sampled closed loop at the checking times `h, 2h, …`.
//!
//! Given the last measurement `x`, the stacked vector `(ζ(h), …, ζ(sh))` is Gaussian with a
//! mean linear in `x` and a covariance that does not depend on `x`.

use nalgebra::DMatrix;

use crate::error::{numeric, Result};
use crate::system::PetcSystem;

fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(numeric(format!("{what} has non-finite entries")))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(crate::error::invalid(format!("time must be finite and non-negative, got {t}")))
    }
}

/// `(e^{At}, ∫₀ᵗ e^{As} ds)` from one exponential of `[[A, I], [0, 0]]·t`.
pub fn exp_and_integral(a: &DMatrix<f64>, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_time(t)?;
    let n = a.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    aug.view_mut((0, n), (n, n)).scale_mut(t);
    let e = aug.exp();
    ensure_finite(&e, "matrix exponential")?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, n)).into_owned()))
}

/// `F(t)` with `E ζ(t; x) = F(t) x`, i.e. `e^{At} + ∫₀ᵗ e^{As} ds · BK`. No inverse of `A` is needed.
pub fn mean_matrix(sys: &PetcSystem, t: f64) -> Result<DMatrix<f64>> {
    let (e, gamma) = exp_and_integral(&sys.a, t)?;
    let f = e + gamma * sys.bk();
    ensure_finite(&f, "mean matrix")?;
    Ok(f)
}

/// `Cov(t, t)` by Van Loan's method.
fn equal_time_cov(sys: &PetcSystem, t: f64) -> Result<DMatrix<f64>> {
    let n = sys.n();
    let q = &sys.bw * sys.bw.transpose();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(-&sys.a * t));
    aug.view_mut((0, n), (n, n)).copy_from(&(q * t));
    aug.view_mut((n, n), (n, n)).copy_from(&(sys.a.transpose() * t));
    let e = aug.exp();
    ensure_finite(&e, "Van Loan exponential")?;
    let g12 = e.view((0, n), (n, n));
    let f22 = e.view((n, n), (n, n));
    let c = f22.transpose() * g12;
    Ok((&c + c.transpose()) * 0.5)
}

/// `Cov(ζ(t1), ζ(t2)) = ∫₀^{min(t1,t2)} e^{A(t1-s)} Bw Bwᵀ e^{Aᵀ(t2-s)} ds`.
pub fn cov_block(sys: &PetcSystem, t1: f64, t2: f64) -> Result<DMatrix<f64>> {
    check_time(t1)?;
    check_time(t2)?;
    let n = sys.n();
    if t1 == 0.0 || t2 == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let out = if t1 <= t2 {
        let c = equal_time_cov(sys, t1)?;
        c * (sys.a.transpose() * (t2 - t1)).exp()
    } else {
        let c = equal_time_cov(sys, t2)?;
        (&sys.a * (t1 - t2)).exp() * c
    };
    ensure_finite(&out, "covariance block")?;
    Ok(out)
}

/// Law of `(ζ(h), …, ζ(sh))` given the measurement `x`: `N(mean_map · x, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedGaussian {
    pub s: usize,
    pub mean_map: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

impl StackedGaussian {
    pub fn n(&self) -> usize {
        self.mean_map.ncols()
    }

    /// Block `i` (zero-based) of the mean map, i.e. `F((i+1) h)`.
    pub fn mean_block(&self, i: usize) -> DMatrix<f64> {
        let n = self.n();
        self.mean_map.view((i * n, 0), (n, n)).into_owned()
    }

    pub fn cov_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let n = self.n();
        self.cov.view((i * n, j * n), (n, n)).into_owned()
    }
}

pub fn stacked_moments(sys: &PetcSystem, s: usize) -> Result<StackedGaussian> {
    if s == 0 || s > sys.kbar {
        return Err(crate::error::invalid(format!("s must lie in 1..={}, got {s}", sys.kbar)));
    }
    let n = sys.n();
    let h = sys.h;
    let mut mean_map = DMatrix::zeros(s * n, n);
    let mut cov = DMatrix::zeros(s * n, s * n);
    let mut eq = Vec::with_capacity(s);
    for i in 0..s {
        let t = (i + 1) as f64 * h;
        mean_map.view_mut((i * n, 0), (n, n)).copy_from(&mean_matrix(sys, t)?);
        eq.push(equal_time_cov(sys, t)?);
    }
    // Cov(ih, jh) = Cov(ih, ih) e^{Aᵀ(j-i)h} for i ≤ j; powers of one exponential suffice.
    let step = (sys.a.transpose() * h).exp();
    for i in 0..s {
        let mut block = eq[i].clone();
        for j in i..s {
            if j > i {
                block *= &step;
            }
            cov.view_mut((i * n, j * n), (n, n)).copy_from(&block);
            cov.view_mut((j * n, i * n), (n, n)).copy_from(&block.transpose());
        }
    }
    ensure_finite(&cov, "stacked covariance")?;
    Ok(StackedGaussian { s, mean_map, cov })
}

/// Law of the stacked vector given `ζ(lh) = v`: `N(mean_map_x x + mean_map_v v + mean_offset, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub s: usize,
    pub l: usize,
    pub mean_map_x: DMatrix<f64>,
    pub mean_map_v: DMatrix<f64>,
    pub mean_offset: nalgebra::DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ConditionalGaussian {
    /// Restriction to the first `blocks` blocks of the stacked vector.
    pub fn leading(&self, blocks: usize) -> ConditionalGaussian {
        let n = self.mean_map_x.ncols();
        let d = blocks * n;
        ConditionalGaussian {
            s: blocks,
            l: self.l,
            mean_map_x: self.mean_map_x.rows(0, d).into_owned(),
            mean_map_v: self.mean_map_v.rows(0, d).into_owned(),
            mean_offset: self.mean_offset.rows(0, d).into_owned(),
            cov: self.cov.view((0, 0), (d, d)).into_owned(),
        }
    }
}

/// Standard Gaussian conditioning of `(ζ(h), …, ζ(sh))` on `ζ(lh) = v`.
pub fn conditional_moments(sys: &PetcSystem, s: usize, l: usize) -> Result<ConditionalGaussian> {
    if l == 0 || l > s {
        return Err(crate::error::invalid(format!("need 1 <= l <= s, got l = {l}, s = {s}")));
    }
    let joint = stacked_moments(sys, s)?;
    let n = sys.n();
    let cross = joint.cov.columns((l - 1) * n, n).into_owned();
    let sigma_l = joint.cov_block(l - 1, l - 1);
    let chol = sigma_l
        .clone()
        .cholesky()
        .ok_or_else(|| numeric(format!("covariance of ζ({l}h) is not positive definite")))?;
    // gain = C Σ_l⁻¹, computed as (Σ_l⁻¹ Cᵀ)ᵀ since Σ_l is symmetric.
    let gain = chol.solve(&cross.transpose()).transpose();
    let mean_map_x = &joint.mean_map - &gain * joint.mean_block(l - 1);
    let cov = &joint.cov - &gain * cross.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    ensure_finite(&cov, "conditional covariance")?;
    Ok(ConditionalGaussian {
        s,
        l,
        mean_map_x,
        mean_map_v: gain,
        mean_offset: nalgebra::DVector::zeros(s * n),
        cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sys_with(a: DMatrix<f64>, k: DMatrix<f64>, bw: DMatrix<f64>) -> PetcSystem {
        let n = a.nrows();
        PetcSystem::new_unverified(a, DMatrix::identity(n, k.nrows()), k, bw, 0.1, 0.1, 3).unwrap()
    }

    #[test]
    fn mean_at_zero_is_identity() {
        let sys = PetcSystem::reference();
        assert_relative_eq!(mean_matrix(&sys, 0.0).unwrap(), DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn zero_gain_gives_plain_exponential() {
        let r = PetcSystem::reference();
        let sys = sys_with(r.a.clone(), DMatrix::zeros(2, 2), r.bw.clone());
        assert_relative_eq!(mean_matrix(&sys, 0.3).unwrap(), (&r.a * 0.3).exp(), epsilon = 1e-14);
    }

    #[test]
    fn singular_a_is_fine() {
        // A = 0: F(t) = I + t BK.
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sys = sys_with(DMatrix::zeros(2, 2), k.clone(), DMatrix::identity(2, 2));
        let f = mean_matrix(&sys, 0.5).unwrap();
        assert_relative_eq!(f, DMatrix::identity(2, 2) + k * 0.5, epsilon = 1e-14);
    }

    #[test]
    fn wiener_covariance() {
        let sys = sys_with(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        assert_relative_eq!(cov_block(&sys, 0.3, 0.7).unwrap(), DMatrix::identity(2, 2) * 0.3, epsilon = 1e-14);
        assert_relative_eq!(cov_block(&sys, 0.9, 0.2).unwrap(), DMatrix::identity(2, 2) * 0.2, epsilon = 1e-14);
        assert_eq!(cov_block(&sys, 0.0, 0.7).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn single_block_stack() {
        let sys = PetcSystem::reference();
        let st = stacked_moments(&sys, 1).unwrap();
        assert_relative_eq!(st.mean_map, mean_matrix(&sys, sys.h).unwrap(), epsilon = 1e-15);
        assert_relative_eq!(st.cov, cov_block(&sys, sys.h, sys.h).unwrap(), epsilon = 1e-15);
        assert!(stacked_moments(&sys, 0).is_err());
        assert!(stacked_moments(&sys, sys.kbar + 1).is_err());
    }

    #[test]
    fn self_conditioning_pins_the_block() {
        let sys = PetcSystem::reference();
        let c = conditional_moments(&sys, 1, 1).unwrap();
        assert_relative_eq!(c.mean_map_x, DMatrix::zeros(2, 2), epsilon = 1e-12);
        assert_relative_eq!(c.mean_map_v, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(c.cov, DMatrix::zeros(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn conditioned_block_of_longer_stack_is_pinned() {
        let sys = PetcSystem::reference();
        let c = conditional_moments(&sys, 3, 2).unwrap();
        assert_relative_eq!(c.mean_map_v.view((2, 0), (2, 2)).into_owned(), DMatrix::identity(2, 2), epsilon = 1e-10);
        assert!(c.cov.view((2, 2), (2, 2)).iter().all(|v| v.abs() < 1e-12));
        assert!(conditional_moments(&sys, 2, 3).is_err());
    }
}
