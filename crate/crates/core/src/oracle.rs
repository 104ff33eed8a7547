//! Independent checks of the spectral pipeline: exhaustive path
//! enumeration on tiny chains and regenerative Monte-Carlo estimates.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::linalg::Matrix;
use crate::load_model::{LoadModel, SwitchingCurve};
use crate::spectral::{Policy, SpectralDesign};
use crate::stats::NominalStats;
use crate::{Error, Result};

/// Largest number of support paths an enumeration may visit.
pub const PATH_LIMIT: u128 = 2_200_000;

#[derive(Debug, Clone)]
pub struct TinyChain {
    pub name: String,
    pub model: LoadModel,
}

impl TinyChain {
    pub fn new(name: &str, model: LoadModel) -> Self {
        TinyChain { name: String::from(name), model }
    }
}

/// Two-state i.i.d., two-state sticky, three-state ring with a small
/// backward escape, and a four-bin pool model.
pub fn fixtures() -> Vec<TinyChain> {
    let iid = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let sticky = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
    let eps = 0.05;
    let ring = Matrix::from_rows(&[vec![0.0, 1.0 - eps, eps], vec![eps, 0.0, 1.0 - eps], vec![1.0 - eps, eps, 0.0]])
        .unwrap();
    vec![
        TinyChain::new("iid2", LoadModel::custom(iid, vec![0.0, 1.0], 0).unwrap()),
        TinyChain::new("sticky2", LoadModel::custom(sticky, vec![0.0, 1.0], 0).unwrap()),
        TinyChain::new("ring3", LoadModel::custom(ring, vec![0.0, 0.5, 1.0], 0).unwrap()),
        TinyChain::new("pool4", LoadModel::pool(SwitchingCurve::new(6.0, 0.5, 4).unwrap()).unwrap()),
    ]
}

/// Number of support paths of length `horizon` from `x0`.
pub fn path_count(model: &LoadModel, horizon: usize, x0: usize) -> u128 {
    let p = model.sparse();
    let mut ways = vec![0u128; model.dim()];
    ways[x0] = 1;
    for _ in 0..horizon {
        let mut next = vec![0u128; model.dim()];
        for (i, &w) in ways.iter().enumerate() {
            if w > 0 {
                for &j in p.row_cols(i) {
                    next[j] = next[j].saturating_add(w);
                }
            }
        }
        ways = next;
    }
    ways.iter().fold(0u128, |a, &b| a.saturating_add(b))
}

fn guard(model: &LoadModel, horizon: usize, x0: usize) -> Result<()> {
    if x0 >= model.dim() {
        return Err(Error::arg(format!("start state {x0} out of range")));
    }
    let paths = path_count(model, horizon, x0);
    if paths > PATH_LIMIT {
        return Err(Error::EnumerationTooLarge { paths, limit: PATH_LIMIT });
    }
    Ok(())
}

/// Visit every support path of length `horizon` from `x0`, passing
/// `(log p0(path), log q(path), sum_{t=1..T} U(x_t))` to `leaf`, where `q` is
/// the path law of `other` (or `p0` when `None`).
fn enumerate(
    model: &LoadModel,
    other: Option<&Matrix>,
    horizon: usize,
    x0: usize,
    leaf: &mut dyn FnMut(f64, f64, f64),
) {
    fn rec(
        model: &LoadModel,
        other: Option<&Matrix>,
        left: usize,
        x: usize,
        lp: f64,
        lq: f64,
        s: f64,
        leaf: &mut dyn FnMut(f64, f64, f64),
    ) {
        if left == 0 {
            leaf(lp, lq, s);
            return;
        }
        let p = model.sparse();
        for (&y, &w) in p.row_cols(x).iter().zip(p.row_values(x)) {
            let q = other.map_or(w, |m| m[(x, y)]);
            rec(model, other, left - 1, y, lp + libm::log(w), lq + libm::log(q), s + model.utility()[y], leaf);
        }
    }
    rec(model, other, horizon, x0, 0.0, 0.0, 0.0, leaf);
}

/// `log E_x0[exp(zeta sum_{t=1..T} U(X_t))]` by enumeration.
pub fn brute_lambda_t(model: &LoadModel, zeta: f64, horizon: usize, x0: usize) -> Result<f64> {
    guard(model, horizon, x0)?;
    let mut terms = Vec::new();
    enumerate(model, None, horizon, x0, &mut |lp, _, s| terms.push(lp + zeta * s));
    Ok(log_sum_exp(&terms))
}

/// Total probability of all enumerated paths under `P0`.
pub fn brute_total_probability(model: &LoadModel, horizon: usize, x0: usize) -> Result<f64> {
    guard(model, horizon, x0)?;
    let mut total = 0.0;
    enumerate(model, None, horizon, x0, &mut |lp, _, _| total += libm::exp(lp));
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WelfarePolicy {
    /// The finite-horizon optimizer `p0 exp(zeta S) / E[exp(zeta S)]`.
    Twisted,
    /// Paths of the stationary optimal policy.
    Check,
}

/// `zeta E_p[sum U] - D(p || p0)` over paths of length `horizon` from `x0`.
pub fn brute_welfare(model: &LoadModel, zeta: f64, horizon: usize, x0: usize, policy: WelfarePolicy) -> Result<f64> {
    guard(model, horizon, x0)?;
    match policy {
        WelfarePolicy::Twisted => {
            let big = brute_lambda_t(model, zeta, horizon, x0)?;
            let mut w = 0.0;
            enumerate(model, None, horizon, x0, &mut |lp, _, s| {
                let log_ratio = zeta * s - big;
                let p = libm::exp(lp + log_ratio);
                w += p * (zeta * s - log_ratio);
            });
            Ok(w)
        }
        WelfarePolicy::Check => {
            let design = SpectralDesign::solve(model, zeta)?;
            let mut w = 0.0;
            enumerate(model, Some(&design.p_check), horizon, x0, &mut |lp, lq, s| {
                let q = libm::exp(lq);
                w += q * (zeta * s - (lq - lp));
            });
            Ok(w)
        }
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + libm::log(x.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

/// One row of an oracle report.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub fixture: String,
    pub zeta: f64,
    pub horizon: usize,
    pub quantity: String,
    pub pipeline: f64,
    pub oracle: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(fixture: &str, zeta: f64, horizon: usize, quantity: &str, pipeline: f64, oracle: f64, tolerance: f64, pass: bool) -> OracleCheck {
    OracleCheck {
        fixture: String::from(fixture),
        zeta,
        horizon,
        quantity: String::from(quantity),
        pipeline,
        oracle,
        tolerance,
        pass,
    }
}

/// Enumeration checks for every fixture, tilt and horizon, from every
/// start state: path probabilities sum to one, the twisted law attains the
/// log-moment generating function, the optimal stationary policy is within
/// twice the span of `h*`, and `T eta*` is within one span of `Lambda_T`.
pub fn run_enumeration_suite(chains: &[TinyChain], zetas: &[f64], horizons: &[usize]) -> Result<Vec<OracleCheck>> {
    if chains.is_empty() {
        return Err(Error::arg("empty fixture list"));
    }
    let mut out = Vec::new();
    for chain in chains {
        let model = &chain.model;
        for &t in horizons {
            for x0 in 0..model.dim() {
                let total = brute_total_probability(model, t, x0)?;
                out.push(check(&chain.name, 0.0, t, &format!("path_mass[x0={x0}]"), total, 1.0, 1e-12, (total - 1.0).abs() <= 1e-12));
            }
        }
        for &zeta in zetas {
            let design = SpectralDesign::solve(model, zeta)?;
            let span = design.h_span();
            for &t in horizons {
                for x0 in 0..model.dim() {
                    let big = brute_lambda_t(model, zeta, t, x0)?;
                    let w_star = brute_welfare(model, zeta, t, x0, WelfarePolicy::Twisted)?;
                    let w_check = brute_welfare(model, zeta, t, x0, WelfarePolicy::Check)?;
                    let name = &chain.name;
                    out.push(check(name, zeta, t, &format!("W_twisted=Lambda_T[x0={x0}]"), w_star, big, 1e-10, (w_star - big).abs() <= 1e-10));
                    let gap = w_star - w_check;
                    out.push(check(name, zeta, t, &format!("welfare_gap[x0={x0}]"), gap, 2.0 * span, 2.0 * span, gap >= -1e-10 && gap <= 2.0 * span + 1e-10));
                    let dev = (t as f64 * design.eta_star - w_star).abs();
                    out.push(check(name, zeta, t, &format!("T_eta_vs_Lambda_T[x0={x0}]"), dev, span, span, dev <= span + 1e-10));
                }
            }
        }
    }
    Ok(out)
}

/// Regenerative Monte-Carlo estimates with batch-means standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub n_cycles: usize,
    pub eta_hat: f64,
    pub eta_se: f64,
    pub eta0_hat: f64,
    pub kappa2_hat: f64,
    pub kappa2_se: f64,
    pub v_hat: Vec<f64>,
    pub v_se: Vec<f64>,
    pub visits: Vec<u64>,
}

struct Cycle {
    tau: f64,
    su: f64,
}

const BATCHES: usize = 64;

/// Simulate `n_cycles` excursions from the anchor under `P0`. `eta*` solves
/// the empirical `1 = E[exp(sum (zeta U - eta))]` by bisection over
/// `[zeta min U, zeta max U]`; `v(x)` averages the remaining-excursion
/// weight over every visit to `x`; `kappa^2` is the ratio of the mean squared
/// centered excursion sum to the mean excursion length.
pub fn mc_regenerative(model: &LoadModel, zeta: f64, n_cycles: usize, seed: u64) -> Result<McEstimate> {
    if n_cycles < BATCHES {
        return Err(Error::arg(format!("need at least {BATCHES} cycles")));
    }
    let d = model.dim();
    let anchor = model.anchor();
    let law = Policy::nominal(model);
    let u = model.utility();
    // The same seed replays identical excursions, so the v estimates can
    // be accumulated in a second pass once eta is known.
    let simulate = |visit: &mut dyn FnMut(&[u16])| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut path: Vec<u16> = Vec::new();
        for _ in 0..n_cycles {
            let mut x = anchor;
            path.clear();
            path.push(x as u16);
            loop {
                let r = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                x = law.sample(x, r);
                if x == anchor {
                    break;
                }
                path.push(x as u16);
                if path.len() > 1_000_000 {
                    return Err(Error::Degenerate(String::from("excursion exceeded a million steps")));
                }
            }
            visit(&path);
        }
        Ok(())
    };
    let mut cycles = Vec::with_capacity(n_cycles);
    simulate(&mut |path| {
        let su = path.iter().map(|&x| u[x as usize]).sum();
        cycles.push(Cycle { tau: path.len() as f64, su });
    })?;

    let (umin, umax) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let solve_eta = |cs: &[Cycle]| -> f64 {
        let (mut lo, mut hi) = if zeta >= 0.0 { (zeta * umin, zeta * umax) } else { (zeta * umax, zeta * umin) };
        // g(eta) = log mean exp(zeta S - eta tau) is decreasing in eta.
        let g = |eta: f64| {
            let terms: Vec<f64> = cs.iter().map(|c| zeta * c.su - eta * c.tau).collect();
            log_sum_exp(&terms) - libm::log(cs.len() as f64)
        };
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let kappa_of = |cs: &[Cycle]| -> (f64, f64) {
        let st: f64 = cs.iter().map(|c| c.tau).sum();
        let ss: f64 = cs.iter().map(|c| c.su).sum();
        let eta0 = ss / st;
        let a: f64 = cs.iter().map(|c| { let e = c.su - eta0 * c.tau; e * e }).sum();
        (a / st, eta0)
    };

    let eta_hat = solve_eta(&cycles);
    let (kappa2_hat, eta0_hat) = kappa_of(&cycles);
    let bsize = n_cycles / BATCHES;
    let mut eta_b = Vec::with_capacity(BATCHES);
    let mut kap_b = Vec::with_capacity(BATCHES);
    for b in 0..BATCHES {
        let cs = &cycles[b * bsize..(b + 1) * bsize];
        eta_b.push(solve_eta(cs));
        kap_b.push(kappa_of(cs).0);
    }

    let mut v_sum = vec![0.0; d];
    let mut v_sq = vec![0.0; d];
    let mut visits = vec![0u64; d];
    let mut tail = Vec::new();
    simulate(&mut |path| {
        tail.clear();
        tail.resize(path.len(), 0.0);
        let mut acc = 0.0;
        for (k, &x) in path.iter().enumerate().rev() {
            acc += zeta * u[x as usize] - eta_hat;
            tail[k] = acc;
        }
        for (k, &x) in path.iter().enumerate() {
            let w = libm::exp(tail[k]);
            let x = x as usize;
            v_sum[x] += w;
            v_sq[x] += w * w;
            visits[x] += 1;
        }
    })?;
    let mut v_hat = vec![f64::NAN; d];
    let mut v_se = vec![f64::NAN; d];
    for x in 0..d {
        let n = visits[x] as f64;
        if n > 1.0 {
            let mean = v_sum[x] / n;
            let var = (v_sq[x] / n - mean * mean).max(0.0) * n / (n - 1.0);
            v_hat[x] = mean;
            v_se[x] = libm::sqrt(var / n);
        }
    }
    Ok(McEstimate {
        n_cycles,
        eta_hat,
        eta_se: batch_se(&eta_b),
        eta0_hat,
        kappa2_hat,
        kappa2_se: batch_se(&kap_b),
        v_hat,
        v_se,
        visits,
    })
}

fn batch_se(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    libm::sqrt(var / n)
}

/// Monte-Carlo checks of `eta*`, `v` and `kappa^2` against the pipeline at
/// three standard errors.
pub fn run_mc_suite(model: &LoadModel, name: &str, zetas: &[f64], n_cycles: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let stats = NominalStats::compute(model)?;
    let mut out = Vec::new();
    for (k, &zeta) in zetas.iter().enumerate() {
        let design = SpectralDesign::solve(model, zeta)?;
        let mc = mc_regenerative(model, zeta, n_cycles, seed.wrapping_add(k as u64))?;
        let tol = 3.0 * mc.eta_se;
        out.push(check(name, zeta, 0, "eta_star_mc", design.eta_star, mc.eta_hat, tol, (design.eta_star - mc.eta_hat).abs() <= tol.max(1e-12)));
        let tol = 3.0 * mc.kappa2_se;
        out.push(check(name, zeta, 0, "kappa2_mc", stats.kappa2, mc.kappa2_hat, tol, (stats.kappa2 - mc.kappa2_hat).abs() <= tol));
        let mut worst = 0.0_f64;
        for x in 0..model.dim() {
            if mc.visits[x] >= 1000 && mc.v_se[x] > 0.0 {
                worst = worst.max((design.v[x] - mc.v_hat[x]).abs() / mc.v_se[x]);
            }
        }
        out.push(check(name, zeta, 0, "v_mc_max_z", worst, 0.0, 4.0, worst <= 4.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_iid() {
        let f = &fixtures()[0];
        for z in [-1.0, 0.5, 2.0] {
            let l1 = brute_lambda_t(&f.model, z, 1, 0).unwrap();
            assert!((l1 - libm::log((1.0 + libm::exp(z)) / 2.0)).abs() < 1e-14);
        }
        assert!(brute_lambda_t(&f.model, 0.0, 5, 1).unwrap().abs() < 1e-14);
    }

    #[test]
    fn zero_tilt_welfare_is_zero() {
        for f in fixtures() {
            let a = brute_welfare(&f.model, 0.0, 4, 0, WelfarePolicy::Twisted).unwrap();
            let b = brute_welfare(&f.model, 0.0, 4, 0, WelfarePolicy::Check).unwrap();
            assert!(a.abs() < 1e-12 && b.abs() < 1e-10, "{}", f.name);
        }
    }

    #[test]
    fn size_guard() {
        let m = LoadModel::pool(SwitchingCurve::symmetric()).unwrap();
        assert!(matches!(brute_lambda_t(&m, 1.0, 40, 0), Err(Error::EnumerationTooLarge { .. })));
        assert!(run_enumeration_suite(&[], &[1.0], &[4]).is_err());
    }
}
