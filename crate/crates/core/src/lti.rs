//! Linearization of the population dynamics around the nominal equilibrium,
//! with frequency response, zeros and poles, and the super-sampled transfer
//! function seen by the grid.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::linalg::{eigenvalues, eigenvector_pair, Lu, Matrix};
use crate::load_model::LoadModel;
use crate::stats::NominalStats;
use crate::{Error, Result};

/// State-space model `x+ = A x + B zeta`, `y - y0 = C x`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    /// `P0^T`.
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Derivative of the optimal policy with respect to the tilt at zero.
    pub e: Matrix,
    pub y0: f64,
    pub pi0: Vec<f64>,
    /// `A - pi0^T 1^T`; agrees with `A` on the zero-sum subspace containing `B`.
    a_deflated: Matrix,
}

impl LtiSystem {
    pub fn linearize(model: &LoadModel, stats: &NominalStats) -> Result<Self> {
        let d = model.dim();
        if stats.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: stats.dim() });
        }
        let p0 = model.p0();
        let u = model.utility();
        let h = &stats.h;
        let mut e = Matrix::zeros(d, d);
        for x in 0..d {
            let ut = u[x] - stats.eta0;
            for y in 0..d {
                let p = p0[(x, y)];
                if p != 0.0 {
                    e[(x, y)] = (ut + h[y] - h[x]) * p;
                }
            }
        }
        let b = e.vec_mul(&stats.pi0);
        let a = p0.transpose();
        let mut a_deflated = a.clone();
        for i in 0..d {
            for j in 0..d {
                a_deflated[(i, j)] -= stats.pi0[i];
            }
        }
        Ok(LtiSystem { a, b, c: u.to_vec(), e, y0: stats.eta0, pi0: stats.pi0.clone(), a_deflated })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `C (zI - A)^-1 B` by a complex linear solve on the deflated matrix,
    /// which removes the Perron pole at 1 that `B` cannot excite.
    pub fn transfer_value(&self, z: Complex64) -> Result<Complex64> {
        let d = self.dim();
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NonFinite(format!("transfer evaluation point {z}")));
        }
        let mut m: Vec<Complex64> = self.a_deflated.as_slice().iter().map(|&v| Complex64::new(-v, 0.0)).collect();
        for i in 0..d {
            m[i * d + i] += z;
        }
        let lu = Lu::factor(d, m, 1e-13).map_err(|_| Error::PoleProximity(format!("{z}")))?;
        let rhs: Vec<Complex64> = self.b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let x = lu.solve(&rhs);
        Ok(x.iter().zip(&self.c).map(|(xi, ci)| xi * ci).sum())
    }

    /// Markov parameters: `out[0] = 0`, `out[k] = C A^(k-1) B`.
    pub fn impulse_response(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        let mut x = self.b.clone();
        for k in 1..n {
            out[k] = dot(&self.c, &x);
            x = self.a.mul_vec(&x);
        }
        out
    }

    /// Output deviation `y_t - y0` for an input sequence, from `x_0 = 0`.
    pub fn simulate(&self, inputs: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        let mut out = Vec::with_capacity(inputs.len());
        for &z in inputs {
            out.push(dot(&self.c, &x));
            let mut next = self.a.mul_vec(&x);
            next.iter_mut().zip(&self.b).for_each(|(n, b)| *n += z * b);
            x = next;
        }
        out
    }

    /// Response at `e^{jw}` on `n` log-spaced frequencies in `[w_lo, w_hi]`.
    pub fn bode(&self, n: usize, w_lo: f64, w_hi: f64) -> Result<Vec<BodePoint>> {
        let mut out = Vec::with_capacity(n);
        let mut prev_phase: Option<f64> = None;
        for k in 0..n {
            let w = log_space(w_lo, w_hi, n, k);
            let h = self.transfer_value(Complex64::from_polar(1.0, w))?;
            let mut phase = libm::atan2(h.im, h.re) * 180.0 / PI;
            if let Some(p) = prev_phase {
                while phase - p > 180.0 {
                    phase -= 360.0;
                }
                while phase - p < -180.0 {
                    phase += 360.0;
                }
            }
            prev_phase = Some(phase);
            out.push(BodePoint { omega: w, magnitude_db: 20.0 * libm::log10(h.norm()), phase_deg: phase });
        }
        Ok(out)
    }

    /// Zeros from the zero-dynamics matrix, poles from `A`, and detection of
    /// the pole-zero pairs that cancel.
    pub fn zeros_poles(&self) -> Result<ZeroPole> {
        let d = self.dim();
        let mut warning = None;
        let scale_a = self.a.max_abs().max(1.0);
        let scale_cb = norm2(&self.c) * norm2(&self.b);
        if scale_cb == 0.0 {
            return Err(Error::Degenerate(String::from("zero input or output vector")));
        }
        // Relative degree r: first k with C A^(k-1) B clearly nonzero.
        let mut ak_b = self.b.clone();
        let mut r = 0;
        let mut lead = 0.0;
        for k in 1..=d {
            let m = dot(&self.c, &ak_b);
            if m.abs() > 1e-12 * scale_cb * libm::pow(scale_a, (k - 1) as f64) {
                r = k;
                lead = m;
                break;
            }
            ak_b = self.a.mul_vec(&ak_b);
        }
        if r == 0 {
            return Err(Error::Degenerate(String::from("transfer function is identically zero")));
        }
        if lead.abs() < 1e-8 * scale_cb {
            warning = Some(format!("leading Markov parameter {lead:e} is small; zeros may be inaccurate"));
        }
        // C A^r as a row vector.
        let mut c_ar = self.c.clone();
        for _ in 0..r {
            c_ar = self.a.vec_mul(&c_ar);
        }
        let mut az = self.a.clone();
        for i in 0..d {
            let bi = self.b[i] / lead;
            if bi != 0.0 {
                for j in 0..d {
                    az[(i, j)] -= bi * c_ar[j];
                }
            }
        }
        let mut zeros = eigenvalues(&az)?;
        for _ in 0..r {
            if let Some((k, _)) = zeros.iter().enumerate().min_by(|a, b| a.1.norm().total_cmp(&b.1.norm())) {
                zeros.remove(k);
            }
        }
        sort_complex(&mut zeros);
        let mut all_poles = eigenvalues(&self.a)?;
        sort_complex(&mut all_poles);

        let mut paired = vec![false; zeros.len()];
        let mut poles = Vec::new();
        let mut canceled = Vec::new();
        let mut perron_residue = f64::NAN;
        for &p in &all_poles {
            let nearest = zeros
                .iter()
                .enumerate()
                .filter(|(k, _)| !paired[*k])
                .min_by(|a, b| (a.1 - p).norm().total_cmp(&(b.1 - p).norm()))
                .map(|(k, z)| (k, (z - p).norm()));
            let residue = self.residue(p).unwrap_or(f64::INFINITY);
            if (p - Complex64::new(1.0, 0.0)).norm() < 1e-8 {
                perron_residue = residue;
            }
            let cancel = match nearest {
                Some((k, dist)) if dist <= 1e-8 * p.norm().max(1.0) => Some(k),
                Some((k, dist)) if residue < 1e-10 && dist <= 1e-4 => Some(k),
                _ => None,
            };
            match cancel {
                Some(k) => {
                    paired[k] = true;
                    canceled.push(Cancellation { pole: p, zero: zeros[k], residue });
                }
                None => poles.push(p),
            }
        }
        let remaining_zeros: Vec<Complex64> =
            zeros.iter().zip(&paired).filter(|(_, p)| !**p).map(|(z, _)| *z).collect();
        let minimum_phase = remaining_zeros.iter().all(|z| z.norm() < 1.0);
        let stable = poles.iter().all(|p| p.norm() < 1.0);
        Ok(ZeroPole {
            zeros: remaining_zeros,
            poles,
            canceled,
            relative_degree: r,
            minimum_phase,
            stable,
            perron_residue,
            warning,
        })
    }

    /// `|C r| |l B| / |l r|` for right/left eigenvectors at `p`.
    pub fn residue(&self, p: Complex64) -> Result<f64> {
        let (r, l) = eigenvector_pair(&self.a, p)?;
        let cr: Complex64 = r.iter().zip(&self.c).map(|(x, c)| x * c).sum();
        let lb: Complex64 = l.iter().zip(&self.b).map(|(x, b)| x * b).sum();
        let lr: Complex64 = l.iter().zip(&r).map(|(x, y)| x * y).sum();
        Ok((cr * lb / lr).norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodePoint {
    pub omega: f64,
    pub magnitude_db: f64,
    pub phase_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cancellation {
    pub pole: Complex64,
    pub zero: Complex64,
    pub residue: f64,
}

#[derive(Debug, Clone)]
pub struct ZeroPole {
    /// Zeros left after removing canceled pairs.
    pub zeros: Vec<Complex64>,
    /// Poles left after removing canceled pairs.
    pub poles: Vec<Complex64>,
    pub canceled: Vec<Cancellation>,
    pub relative_degree: usize,
    pub minimum_phase: bool,
    pub stable: bool,
    /// Residue at the pole `z = 1`, NaN if no such pole was found.
    pub perron_residue: f64,
    pub warning: Option<String>,
}

impl ZeroPole {
    pub fn perron_canceled(&self) -> bool {
        self.canceled.iter().any(|c| (c.pole - Complex64::new(1.0, 0.0)).norm() < 1e-8)
    }

    pub fn max_zero_modulus(&self) -> f64 {
        self.zeros.iter().fold(0.0, |m, z| m.max(z.norm()))
    }
}

/// Staggered sampling: `m` classes per base period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupersampleFilter {
    pub m: usize,
    pub base_period_minutes: f64,
}

impl SupersampleFilter {
    pub fn new(m: usize, base_period_minutes: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::arg("super-sampling factor must be at least 1"));
        }
        if !(base_period_minutes > 0.0) {
            return Err(Error::arg(format!("base period {base_period_minutes} min must be positive")));
        }
        Ok(SupersampleFilter { m, base_period_minutes })
    }

    pub fn grid_period_minutes(&self) -> f64 {
        self.base_period_minutes / self.m as f64
    }

    /// `L(z) = (1/m) sum_{i=1..m} z^-i`.
    pub fn averaging(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut p = Complex64::new(1.0, 0.0);
        for _ in 0..self.m {
            p *= zi;
            acc += p;
        }
        acc / self.m as f64
    }
}

/// `z^m H0(z^m) L(z)` on the grid time scale.
pub fn supersampled_transfer(sys: &LtiSystem, filter: &SupersampleFilter, z: Complex64) -> Result<Complex64> {
    if z.norm() == 0.0 {
        return Err(Error::arg("supersampled transfer is undefined at z = 0"));
    }
    let zm = z.powu(filter.m as u32);
    Ok(zm * sys.transfer_value(zm)? * filter.averaging(z))
}

pub fn log_space(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if n <= 1 {
        return lo;
    }
    let t = k as f64 / (n - 1) as f64;
    libm::exp(libm::log(lo) + t * (libm::log(hi) - libm::log(lo)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::linalg::dot(a, b)
}

fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

fn sort_complex(v: &mut [Complex64]) {
    v.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(a.re.total_cmp(&b.re)).then(a.im.total_cmp(&b.im)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_derivative_matrix() {
        let p = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let m = LoadModel::custom(p, vec![0.0, 1.0], 0).unwrap();
        let st = NominalStats::compute(&m).unwrap();
        let sys = LtiSystem::linearize(&m, &st).unwrap();
        let want = [[-0.25, 0.25], [-0.25, 0.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((sys.e[(i, j)] - want[i][j]).abs() < 1e-14);
            }
        }
        assert!((sys.b[0] + 0.25).abs() < 1e-14 && (sys.b[1] - 0.25).abs() < 1e-14);
        // DC gain equals the asymptotic variance.
        let g = sys.transfer_value(Complex64::new(1.0, 0.0)).unwrap();
        assert!((g.re - st.kappa2).abs() < 1e-12);
    }

    #[test]
    fn averaging_filter_zeros() {
        let f = SupersampleFilter::new(12, 30.0).unwrap();
        for k in 1..12 {
            let z = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 12.0);
            assert!(f.averaging(z).norm() < 1e-14);
        }
        let one = SupersampleFilter::new(1, 30.0).unwrap();
        let z = Complex64::new(0.3, 1.1);
        assert!((one.averaging(z) - z.inv()).norm() < 1e-15);
    }
}
