//! Optimal randomized policies from the tilted Perron eigenproblem.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::linalg::{norm_inf, shifted_complex, Lu, Matrix, SparseRows};
use crate::load_model::LoadModel;
use crate::stats::Potential;
use crate::{Error, Result};

/// Largest tilt accepted by the solvers.
pub const ZETA_MAX: f64 = 40.0;
/// Power iteration stops once successive iterates differ by less than this
/// (relative to the sup norm of the iterate).
pub const POWER_TOL: f64 = 1e-13;
pub const POWER_MAX_ITERS: usize = 100_000;
const POWER_REFINE_ITERS: usize = 1000;
/// Required eigen-residual, relative to `max(1, lambda) |v|_inf` (the
/// round-off floor of the product `P_hat v`).
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Power steps before the policy solver hands off to inverse iteration.
pub const QUICK_POWER_ITERS: usize = 64;
/// Diagonal shift used on periodic chains.
const PERIODIC_SHIFT: f64 = 1e-3;

/// `exp(zeta U(x)) P0(x, y)`.
pub fn tilt_matrix(model: &LoadModel, zeta: f64) -> Matrix {
    let mut m = model.p0().clone();
    for (i, &u) in model.utility().iter().enumerate() {
        let s = libm::exp(zeta * u);
        m.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    m
}

fn tilted_sparse(model: &LoadModel, zeta: f64) -> SparseRows {
    let p = model.sparse();
    let mut values = p.values().to_vec();
    for (i, &u) in model.utility().iter().enumerate() {
        let s = libm::exp(zeta * u);
        for k in p.row_range(i) {
            values[k] *= s;
        }
    }
    p.with_values(values)
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !zeta.is_finite() {
        return Err(Error::NonFinite(format!("zeta = {zeta}")));
    }
    if zeta.abs() > ZETA_MAX {
        return Err(Error::arg(format!("|zeta| = {} exceeds the guard {ZETA_MAX}", zeta.abs())));
    }
    Ok(())
}

/// Maximal eigenpair of the tilted matrix.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub lambda: f64,
    /// Normalized so that `v(anchor) = 1`.
    pub v: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// True when power iteration alone missed the tolerance and inverse
    /// iteration finished the job.
    pub polished: bool,
}

/// Power iteration on `P_hat` (or `P_hat + eps I` for periodic chains),
/// falling back to shifted inverse iteration when it stalls.
pub fn perron(model: &LoadModel, zeta: f64, warm: Option<&[f64]>, max_iters: usize) -> Result<Eigenpair> {
    check_zeta(zeta)?;
    let d = model.dim();
    let a = model.anchor();
    let p_hat = tilted_sparse(model, zeta);
    let eps = if model.is_aperiodic() { 0.0 } else { PERIODIC_SHIFT };

    let mut v: Vec<f64> = match warm {
        Some(w) if w.len() == d && w.iter().all(|x| *x > 0.0 && x.is_finite()) => w.to_vec(),
        _ => vec![1.0; d],
    };
    let va = v[a];
    v.iter_mut().for_each(|x| *x /= va);
    let mut w = vec![0.0; d];
    let mut lam_shifted = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    // Past POWER_TOL, keep iterating toward the round-off floor and return
    // the iterate with the smallest step (complex subdominant eigenvalues
    // make the step oscillate).
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut stale = 0;
    let mut extra = 0;
    while iterations < max_iters {
        iterations += 1;
        p_hat.mul_vec_into(&v, &mut w);
        if eps != 0.0 {
            w.iter_mut().zip(&v).for_each(|(wi, vi)| *wi += eps * vi);
        }
        lam_shifted = w[a];
        if !(lam_shifted > 0.0) || !lam_shifted.is_finite() {
            return Err(Error::Degenerate(format!("power iteration produced eigenvalue estimate {lam_shifted}")));
        }
        let mut diff = 0.0_f64;
        let mut scale = 0.0_f64;
        for (wi, vi) in w.iter_mut().zip(v.iter()) {
            *wi /= lam_shifted;
            diff = diff.max((*wi - vi).abs());
            scale = scale.max(wi.abs());
        }
        core::mem::swap(&mut v, &mut w);
        if !converged && diff <= POWER_TOL * scale {
            converged = true;
        }
        if converged {
            extra += 1;
            match &mut best {
                Some((d, l, b)) if diff >= *d => {
                    stale += 1;
                    if stale >= 50 {
                        lam_shifted = *l;
                        core::mem::swap(&mut v, b);
                        break;
                    }
                }
                _ => {
                    best = Some((diff, lam_shifted, v.clone()));
                    stale = 0;
                }
            }
            if diff <= 2.0 * f64::EPSILON * scale || extra >= POWER_REFINE_ITERS {
                if let Some((_, l, b)) = best.take() {
                    lam_shifted = l;
                    v = b;
                }
                break;
            }
        }
    }
    let mut lambda = lam_shifted - eps;
    let mut residual = eigen_residual(&p_hat, lambda, &v, &mut w);
    let mut polished = false;
    if !converged || residual > RESIDUAL_TOL * lambda.max(1.0) * norm_inf(&v) {
        polished = true;
        (lambda, v) = inverse_polish(&tilt_matrix(model, zeta), lambda, v, a)?;
        residual = eigen_residual(&p_hat, lambda, &v, &mut w);
        if residual > RESIDUAL_TOL * lambda.max(1.0) * norm_inf(&v) {
            return Err(Error::NotConverged { iterations, residual });
        }
    }
    if let Some(i) = v.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::Degenerate(format!("Perron vector is not positive at state {i} ({})", v[i])));
    }
    Ok(Eigenpair { lambda, v, iterations, residual, polished })
}

fn eigen_residual(p_hat: &SparseRows, lambda: f64, v: &[f64], scratch: &mut [f64]) -> f64 {
    p_hat.mul_vec_into(v, scratch);
    scratch.iter().zip(v).fold(0.0, |m, (pv, vi)| m.max((pv - lambda * vi).abs()))
}

fn inverse_polish(p_hat: &Matrix, lambda: f64, mut v: Vec<f64>, anchor: usize) -> Result<(f64, Vec<f64>)> {
    let d = p_hat.rows();
    let mut lam = lambda;
    for _ in 0..4 {
        let mu = lam * (1.0 + 1e-9) + 1e-12;
        let lu = Lu::factor(d, shifted_complex(p_hat, Complex64::new(mu, 0.0)), 1e-300)?;
        let rhs: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let sol = lu.solve(&rhs);
        let ratio = sol[anchor].re / v[anchor];
        if !ratio.is_finite() || ratio == 0.0 {
            break;
        }
        lam = mu + 1.0 / ratio;
        let s = sol[anchor].re;
        v = sol.iter().map(|c| c.re / s).collect();
    }
    Ok((lam, v))
}

/// `P_check(x, y) = P_hat(x, y) v(y) / (lambda v(x))`, rows renormalized.
pub fn twisted_matrix(model: &LoadModel, zeta: f64, lambda: f64, v: &[f64]) -> Matrix {
    let mut m = tilt_matrix(model, zeta);
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let mut sum = 0.0;
        for (j, x) in row.iter_mut().enumerate() {
            *x = *x * v[j] / (lambda * v[i]);
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
    m
}

/// Full solution at one tilt.
#[derive(Debug, Clone)]
pub struct SpectralDesign {
    pub zeta: f64,
    pub lambda: f64,
    pub eta_star: f64,
    pub v: Vec<f64>,
    pub h_star: Vec<f64>,
    pub p_check: Matrix,
    pub pi_check: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl SpectralDesign {
    pub fn solve(model: &LoadModel, zeta: f64) -> Result<Self> {
        Self::solve_warm(model, zeta, None)
    }

    pub fn solve_warm(model: &LoadModel, zeta: f64, warm: Option<&[f64]>) -> Result<Self> {
        let ep = perron(model, zeta, warm, POWER_MAX_ITERS)?;
        let p_check = twisted_matrix(model, zeta, ep.lambda, &ep.v);
        let pi_check = Potential::new(&p_check, model.anchor())?.pi().to_vec();
        let h_star = ep.v.iter().map(|x| libm::log(*x)).collect();
        Ok(SpectralDesign {
            zeta,
            lambda: ep.lambda,
            eta_star: libm::log(ep.lambda),
            v: ep.v,
            h_star,
            p_check,
            pi_check,
            iterations: ep.iterations,
            residual: ep.residual,
        })
    }

    /// `sum pi_check U`.
    pub fn steady_state_on_fraction(&self, model: &LoadModel) -> f64 {
        model.mean_utility(&self.pi_check).clamp(0.0, 1.0)
    }

    /// Span `max h* - min h*`.
    pub fn h_span(&self) -> f64 {
        let (lo, hi) = self.h_star.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        hi - lo
    }
}

/// Optimal policy in the compact form used by the simulators.
#[derive(Debug, Clone)]
pub struct Policy {
    pub zeta: f64,
    pub lambda: f64,
    pub v: Vec<f64>,
    p_check: SparseRows,
    cdf: Vec<f64>,
}

impl Policy {
    /// Short power run plus inverse-iteration polish; falls back to the full
    /// power iteration if the quick path does not certify.
    pub fn solve(model: &LoadModel, zeta: f64, warm: Option<&[f64]>) -> Result<Self> {
        let ep = match perron(model, zeta, warm, QUICK_POWER_ITERS) {
            Ok(ep) => ep,
            Err(Error::InvalidArgument(m)) => return Err(Error::InvalidArgument(m)),
            Err(Error::NonFinite(m)) => return Err(Error::NonFinite(m)),
            Err(_) => perron(model, zeta, None, POWER_MAX_ITERS)?,
        };
        let base = model.sparse();
        let mut values = base.values().to_vec();
        let mut cdf = vec![0.0; values.len()];
        for (i, &u) in model.utility().iter().enumerate() {
            let s = libm::exp(zeta * u) / (ep.lambda * ep.v[i]);
            let r = base.row_range(i);
            let mut sum = 0.0;
            for k in r.clone() {
                values[k] *= s * ep.v[base.col_indices()[k]];
                sum += values[k];
            }
            let mut acc = 0.0;
            for k in r.clone() {
                values[k] /= sum;
                acc += values[k];
                cdf[k] = acc;
            }
            if let Some(last) = r.last() {
                cdf[last] = 1.0;
            }
        }
        Ok(Policy { zeta, lambda: ep.lambda, v: ep.v, p_check: base.with_values(values), cdf })
    }

    /// The nominal law `P0` packaged as a policy.
    pub fn nominal(model: &LoadModel) -> Self {
        let base = model.sparse();
        let mut cdf = vec![0.0; base.nnz()];
        for i in 0..base.n_rows() {
            let r = base.row_range(i);
            let mut acc = 0.0;
            for k in r.clone() {
                acc += base.values()[k];
                cdf[k] = acc;
            }
            if let Some(last) = r.last() {
                cdf[last] = 1.0;
            }
        }
        Policy { zeta: 0.0, lambda: 1.0, v: vec![1.0; model.dim()], p_check: base.clone(), cdf }
    }

    pub fn matrix(&self) -> &SparseRows {
        &self.p_check
    }

    /// `mu P_check`.
    pub fn step_distribution_into(&self, mu: &[f64], out: &mut [f64]) {
        self.p_check.vec_mul_into(mu, out);
    }

    /// Next state from `state` given a uniform draw in `[0, 1)`.
    #[inline]
    pub fn sample(&self, state: usize, u: f64) -> usize {
        let r = self.p_check.row_range(state);
        let cdf = &self.cdf[r.clone()];
        let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        self.p_check.col_indices()[r.start + k]
    }
}

/// Tilt-keyed LRU cache of policies. Tilts are rounded to `quantum` and the
/// policy is solved at the rounded value, so results do not depend on which
/// nearby tilt populated an entry.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    quantum: f64,
    capacity: usize,
    entries: BTreeMap<i64, (Arc<Policy>, u64)>,
    clock: u64,
    warm: Option<Vec<f64>>,
    hits: u64,
    misses: u64,
}

impl Default for PolicyCache {
    fn default() -> Self {
        Self::new(1e-6, 4096)
    }
}

impl PolicyCache {
    pub fn new(quantum: f64, capacity: usize) -> Self {
        PolicyCache {
            quantum,
            capacity: capacity.max(1),
            entries: BTreeMap::new(),
            clock: 0,
            warm: None,
            hits: 0,
            misses: 0,
        }
    }

    pub fn quantize(&self, zeta: f64) -> (i64, f64) {
        let key = libm::round(zeta / self.quantum) as i64;
        (key, key as f64 * self.quantum)
    }

    pub fn get(&mut self, model: &LoadModel, zeta: f64) -> Result<Arc<Policy>> {
        check_zeta(zeta)?;
        let (key, zq) = self.quantize(zeta);
        self.clock += 1;
        if let Some(entry) = self.entries.get_mut(&key) {
            entry.1 = self.clock;
            self.hits += 1;
            return Ok(entry.0.clone());
        }
        self.misses += 1;
        let policy = Arc::new(Policy::solve(model, zq, self.warm.as_deref())?);
        self.warm = Some(policy.v.clone());
        if self.entries.len() >= self.capacity {
            if let Some(oldest) = self.entries.iter().min_by_key(|(_, (_, t))| *t).map(|(k, _)| *k) {
                self.entries.remove(&oldest);
            }
        }
        self.entries.insert(key, (policy.clone(), self.clock));
        Ok(policy)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::load_model::SwitchingCurve;

    fn iid() -> LoadModel {
        let p = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        LoadModel::custom(p, vec![0.0, 1.0], 0).unwrap()
    }

    #[test]
    fn zero_tilt_is_nominal() {
        let m = LoadModel::pool(SwitchingCurve::symmetric()).unwrap();
        let s = SpectralDesign::solve(&m, 0.0).unwrap();
        assert!((s.lambda - 1.0).abs() < 1e-13);
        assert!(s.v.iter().all(|x| (x - 1.0).abs() < 1e-11));
        assert!(s.p_check.max_abs_diff(m.p0()) < 1e-11);
        assert!((s.steady_state_on_fraction(&m) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn two_state_eigenvalue() {
        let m = iid();
        for z in [-2.0, -0.5, 0.7, 3.0] {
            let s = SpectralDesign::solve(&m, z).unwrap();
            let exact = (1.0 + libm::exp(z)) / 2.0;
            assert!((s.lambda - exact).abs() < 1e-12 * exact);
        }
    }

    #[test]
    fn periodic_chain_is_handled() {
        let p = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let m = LoadModel::custom(p, vec![0.0, 1.0], 0).unwrap();
        let s = SpectralDesign::solve(&m, 1.0).unwrap();
        assert!((s.lambda - libm::exp(0.5)).abs() < 1e-10);
    }

    #[test]
    fn tilt_guard() {
        assert!(SpectralDesign::solve(&iid(), 41.0).is_err());
        assert!(SpectralDesign::solve(&iid(), f64::NAN).is_err());
    }

    #[test]
    fn cache_quantizes_and_evicts() {
        let m = iid();
        let mut c = PolicyCache::new(1e-6, 2);
        let a = c.get(&m, 0.1).unwrap();
        let b = c.get(&m, 0.1 + 2e-7).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        c.get(&m, 0.2).unwrap();
        c.get(&m, 0.3).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.hits(), 1);
    }

    #[test]
    fn policy_matches_design() {
        let m = LoadModel::pool(SwitchingCurve::symmetric()).unwrap();
        let s = SpectralDesign::solve(&m, 1.3).unwrap();
        let p = Policy::solve(&m, 1.3, None).unwrap();
        assert!(p.matrix().to_dense().max_abs_diff(&s.p_check) < 1e-14);
    }
}
