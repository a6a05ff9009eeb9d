use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Stochastic linear plant with a held state-feedback input and a periodic event trigger.
///
/// `dζ = A ζ dt + B K ζ(t_i) dt + Bw dW`; the state is checked every `h` time units and
/// sampled when `|ζ(kh) - ζ(t_i)|∞ > eps` or after `kbar` checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PetcSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub eps: f64,
    pub h: f64,
    pub kbar: usize,
}

impl PetcSystem {
    /// Validates shapes, the triggering parameters and controllability of `(A, Bw)`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        k: DMatrix<f64>,
        bw: DMatrix<f64>,
        eps: f64,
        h: f64,
        kbar: usize,
    ) -> Result<Self> {
        let sys = Self::new_unverified(a, b, k, bw, eps, h, kbar)?;
        let rank = sys.controllability_rank();
        if rank < sys.n() {
            return Err(invalid(format!(
                "(A, Bw) is not controllable: controllability matrix has rank {rank} < {}",
                sys.n()
            )));
        }
        Ok(sys)
    }

    /// Like [`PetcSystem::new`] but without the controllability check, so degenerate noise
    /// (for instance `Bw = 0`) is allowed. Only the simulator accepts such systems.
    pub fn new_unverified(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        k: DMatrix<f64>,
        bw: DMatrix<f64>,
        eps: f64,
        h: f64,
        kbar: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(invalid(format!("A must be square and non-empty, got {:?}", a.shape())));
        }
        if b.nrows() != n || k.ncols() != n || k.nrows() != b.ncols() || bw.nrows() != n {
            return Err(invalid(format!(
                "inconsistent shapes: A {:?}, B {:?}, K {:?}, Bw {:?}",
                a.shape(),
                b.shape(),
                k.shape(),
                bw.shape()
            )));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !(finite(&a) && finite(&b) && finite(&k) && finite(&bw)) {
            return Err(invalid("system matrices must be finite"));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("eps must be positive, got {eps}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("h must be positive, got {h}")));
        }
        if kbar == 0 {
            return Err(invalid("kbar must be at least 1"));
        }
        Ok(Self { a, b, k, bw, eps, h, kbar })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn bk(&self) -> DMatrix<f64> {
        &self.b * &self.k
    }

    pub fn controllability_rank(&self) -> usize {
        let n = self.n();
        let w = self.bw.ncols();
        let mut ctrb = DMatrix::zeros(n, n * w);
        let mut block = self.bw.clone();
        for i in 0..n {
            ctrb.view_mut((0, i * w), (n, w)).copy_from(&block);
            block = &self.a * block;
        }
        let sv = ctrb.singular_values();
        let top = sv.iter().fold(0.0f64, |m, v| m.max(*v));
        let tol = top * (n * w).max(n) as f64 * f64::EPSILON;
        sv.iter().filter(|v| **v > tol && **v > 0.0).count()
    }

    /// The reference two-state system used throughout the examples and tests.
    pub fn reference() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[-4.0, 3.0, -2.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[-2.0, 3.0]),
            DMatrix::identity(2, 2) * 2.5,
            0.25,
            0.006,
            3,
        )
        .expect("reference system is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_controllable() {
        assert_eq!(PetcSystem::reference().controllability_rank(), 2);
    }

    #[test]
    fn rejects_uncontrollable_noise() {
        let r = PetcSystem::reference();
        let bw = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        // A·[1;0] = [-4;-2] is independent of [1;0], so a single channel still controls.
        assert!(PetcSystem::new(r.a.clone(), r.b.clone(), r.k.clone(), bw, 0.25, 0.006, 3).is_ok());
        let diag = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let bw = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(PetcSystem::new(diag, r.b.clone(), r.k.clone(), bw, 0.25, 0.006, 3).is_err());
        let zero = DMatrix::zeros(2, 2);
        assert!(PetcSystem::new(r.a.clone(), r.b.clone(), r.k.clone(), zero.clone(), 0.25, 0.006, 3).is_err());
        assert!(PetcSystem::new_unverified(r.a, r.b, r.k, zero, 0.25, 0.006, 3).is_ok());
    }

    #[test]
    fn rejects_bad_parameters() {
        let r = PetcSystem::reference();
        let mk = |eps, h, kbar| PetcSystem::new(r.a.clone(), r.b.clone(), r.k.clone(), r.bw.clone(), eps, h, kbar);
        assert!(mk(0.0, 0.006, 3).is_err());
        assert!(mk(0.25, -1.0, 3).is_err());
        assert!(mk(0.25, 0.006, 0).is_err());
    }
}
