//! Nominal-chain statistics from the potential matrix: invariant measure,
//! Poisson solutions, asymptotic variance and the second-order term used by
//! the small-tilt expansions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, Lu, Matrix, SparseRows};
use crate::load_model::LoadModel;
use crate::spectral::SpectralDesign;
use crate::{Error, Result};

/// Forcing functions must be centered to this accuracy.
pub const CENTERING_TOL: f64 = 1e-10;

/// Factored `I - Pbar`, where `Pbar` is `P` with the anchor row zeroed.
#[derive(Debug, Clone)]
pub struct Potential {
    lu: Lu<f64>,
    pi: Vec<f64>,
    anchor: usize,
}

impl Potential {
    pub fn new(p: &Matrix, anchor: usize) -> Result<Self> {
        let d = p.rows();
        if !p.is_square() {
            return Err(Error::DimensionMismatch { expected: d, found: p.cols() });
        }
        if anchor >= d {
            return Err(Error::arg(format!("anchor {anchor} out of range for {d} states")));
        }
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = 1.0;
            if i != anchor {
                for (j, &v) in p.row(i).iter().enumerate() {
                    a[i * d + j] -= v;
                }
            }
        }
        let lu = Lu::factor(d, a, 1e-14)?;
        // mu = nu Z with nu = P(anchor, .)
        let mu = lu.solve_transpose(p.row(anchor));
        let total: f64 = mu.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate(format!("invariant measure has total mass {total}")));
        }
        let pi = mu.iter().map(|m| m / total).collect();
        Ok(Potential { lu, pi, anchor })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    /// The potential matrix `Z = (I - Pbar)^-1`.
    pub fn z(&self) -> Matrix {
        self.lu.inverse()
    }

    /// `g = Z f` shifted so `g(anchor) = 0`; requires `pi(f) = 0` within `tol`.
    pub fn poisson_with_tol(&self, f: &[f64], tol: f64) -> Result<Vec<f64>> {
        if f.len() != self.pi.len() {
            return Err(Error::DimensionMismatch { expected: self.pi.len(), found: f.len() });
        }
        let mean = dot(&self.pi, f);
        if !(mean.abs() <= tol) {
            return Err(Error::UncenteredForcing { mean });
        }
        let mut g = self.lu.solve(f);
        let shift = g[self.anchor];
        g.iter_mut().for_each(|v| *v -= shift);
        Ok(g)
    }

    pub fn poisson(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.poisson_with_tol(f, CENTERING_TOL)
    }
}

/// Invariant probability and potential matrix of `P`.
pub fn potential_solve(p: &Matrix, anchor: usize) -> Result<(Vec<f64>, Matrix)> {
    let pot = Potential::new(p, anchor)?;
    let z = pot.z();
    Ok((pot.pi, z))
}

/// Solution of `g - P g = f` with `g(anchor) = 0`.
pub fn poisson_solve(p: &Matrix, f: &[f64], anchor: usize) -> Result<Vec<f64>> {
    Potential::new(p, anchor)?.poisson(f)
}

/// Conditional variance `P g^2 - (P g)^2`, with round-off negatives clamped.
pub fn conditional_variance(p: &SparseRows, g: &[f64]) -> Vec<f64> {
    (0..p.n_rows())
        .map(|i| {
            let (mut m1, mut m2) = (0.0, 0.0);
            for (&j, &w) in p.row_cols(i).iter().zip(p.row_values(i)) {
                m1 += w * g[j];
                m2 += w * g[j] * g[j];
            }
            let v = m2 - m1 * m1;
            if v < 0.0 && v >= -1e-14 {
                0.0
            } else {
                v
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NominalStats {
    pub pi0: Vec<f64>,
    pub eta0: f64,
    /// Poisson solution for `U - eta0`, zero at the anchor.
    pub h: Vec<f64>,
    pub kappa2: f64,
    /// Second-order term, zero at the anchor.
    pub s: Vec<f64>,
    pub z: Matrix,
}

impl NominalStats {
    pub fn compute(model: &LoadModel) -> Result<Self> {
        let pot = Potential::new(model.p0(), model.anchor())?;
        let pi0 = pot.pi().to_vec();
        let eta0 = model.mean_utility(&pi0);
        let u_tilde: Vec<f64> = model.utility().iter().map(|u| u - eta0).collect();
        let h = pot.poisson(&u_tilde)?;
        let kappa2 = kappa2_from(&pi0, &u_tilde, &h);
        let var_h = conditional_variance(model.sparse(), &h);
        let forcing: Vec<f64> = var_h.iter().map(|v| v - kappa2).collect();
        let s = pot.poisson(&forcing)?;
        Ok(NominalStats { pi0, eta0, h, kappa2, s, z: pot.z() })
    }

    pub fn dim(&self) -> usize {
        self.pi0.len()
    }

    /// `U - eta0`.
    pub fn centered_utility(&self, model: &LoadModel) -> Vec<f64> {
        model.utility().iter().map(|u| u - self.eta0).collect()
    }

    /// `eta0 zeta + kappa2 zeta^2 / 2`.
    pub fn taylor_eta(&self, zeta: f64) -> f64 {
        self.eta0 * zeta + 0.5 * self.kappa2 * zeta * zeta
    }

    /// `zeta H + zeta^2 S / 2`.
    pub fn taylor_h(&self, zeta: f64) -> Vec<f64> {
        self.h.iter().zip(&self.s).map(|(h, s)| zeta * h + 0.5 * zeta * zeta * s).collect()
    }

    /// `eta0 + kappa2 zeta`, clamped to `[0, 1]`.
    pub fn taylor_on_fraction(&self, zeta: f64) -> f64 {
        (self.eta0 + self.kappa2 * zeta).clamp(0.0, 1.0)
    }

    /// Tilt whose first-order steady state equals `target`.
    pub fn zeta_star_for(&self, target: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::arg(format!("target on-fraction {target} outside [0, 1]")));
        }
        if !(self.kappa2 > 1e-15) {
            return Err(Error::Degenerate(format!("asymptotic variance {} is zero", self.kappa2)));
        }
        Ok((target - self.eta0) / self.kappa2)
    }
}

/// `sum pi (2 f g - f^2)` for centered `f` and its Poisson solution `g`.
pub fn kappa2_from(pi: &[f64], f: &[f64], g: &[f64]) -> f64 {
    pi.iter().zip(f).zip(g).map(|((p, f), g)| p * (2.0 * f * g - f * f)).sum()
}

/// First and second derivatives of the relative value function at a
/// general tilt, from the derivative Poisson equations driven by the
/// optimal policy. The derivatives of `eta*` enter through central
/// differences with step `step`.
#[derive(Debug, Clone)]
pub struct DerivativeDiagnostic {
    pub zeta: f64,
    pub d_eta: f64,
    pub d2_eta: f64,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    /// Stationary mean of the first forcing under the optimal policy.
    pub centering_residual: f64,
}

pub fn derivative_diagnostic(model: &LoadModel, zeta: f64, step: f64) -> Result<DerivativeDiagnostic> {
    let center = SpectralDesign::solve(model, zeta)?;
    let up = SpectralDesign::solve(model, zeta + step)?;
    let down = SpectralDesign::solve(model, zeta - step)?;
    let d_eta = (up.eta_star - down.eta_star) / (2.0 * step);
    let d2_eta = (up.eta_star - 2.0 * center.eta_star + down.eta_star) / (step * step);
    let pot = Potential::new(&center.p_check, model.anchor())?;
    let f1: Vec<f64> = model.utility().iter().map(|u| u - d_eta).collect();
    let centering_residual = dot(pot.pi(), &f1);
    // The difference quotient is only accurate to O(step^2).
    let tol = 1e-4_f64.max(10.0 * centering_residual.abs());
    let h1 = pot.poisson_with_tol(&f1, tol)?;
    let sparse = SparseRows::from_dense(&center.p_check);
    let f2: Vec<f64> = conditional_variance(&sparse, &h1).iter().map(|v| v - d2_eta).collect();
    let tol2 = 1e-2_f64.max(10.0 * dot(pot.pi(), &f2).abs());
    let h2 = pot.poisson_with_tol(&f2, tol2)?;
    Ok(DerivativeDiagnostic { zeta, d_eta, d2_eta, h1, h2, centering_residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iid() -> LoadModel {
        let p = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        LoadModel::custom(p, vec![0.0, 1.0], 0).unwrap()
    }

    #[test]
    fn two_state_balance() {
        let (a, b) = (0.3, 0.1);
        let p = Matrix::from_rows(&[vec![1.0 - a, a], vec![b, 1.0 - b]]).unwrap();
        let (pi, _) = potential_solve(&p, 1).unwrap();
        assert!((pi[0] - b / (a + b)).abs() < 1e-14);
        assert!((pi[1] - a / (a + b)).abs() < 1e-14);
    }

    #[test]
    fn iid_poisson_and_variance() {
        let m = iid();
        let g = poisson_solve(m.p0(), &[-0.5, 0.5], 0).unwrap();
        assert!(g[0].abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-14);
        let st = NominalStats::compute(&m).unwrap();
        assert!((st.eta0 - 0.5).abs() < 1e-15);
        assert!((st.kappa2 - 0.25).abs() < 1e-14);
        assert!(matches!(poisson_solve(m.p0(), &[1.0, 1.0], 0), Err(Error::UncenteredForcing { .. })));
    }

    #[test]
    fn zeta_star_round_trip() {
        let st = NominalStats::compute(&iid()).unwrap();
        assert_eq!(st.zeta_star_for(0.5).unwrap(), 0.0);
        let z = st.zeta_star_for(0.6).unwrap();
        assert!((st.taylor_on_fraction(z) - 0.6).abs() < 1e-14);
        assert!(st.zeta_star_for(1.5).is_err());
    }
}
