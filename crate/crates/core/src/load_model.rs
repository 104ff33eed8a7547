//! Finite-state load models: a validated generic container and the
//! pool-pump chain with its daily switching curves.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{Matrix, SparseRows, SUPPORT_EPS};
use crate::{Error, Result};

/// Row sums must be within this of 1.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Off,
    On,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateLabel {
    /// Pool state: mode and number of bins spent in it (1-based).
    Pool { mode: Mode, bin: usize },
    /// Unnamed state of a custom model.
    Index(usize),
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateLabel::Pool { mode: Mode::Off, bin } => write!(f, "off:{bin}"),
            StateLabel::Pool { mode: Mode::On, bin } => write!(f, "on:{bin}"),
            StateLabel::Index(i) => write!(f, "s{i}"),
        }
    }
}

/// The smooth switching function: `2^(g-1) x^g` below 1/2, mirrored above.
pub fn rho_s(x: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::arg(format!("rho_s: x = {x} outside [0, 1]")));
    }
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::arg(format!("rho_s: gamma = {gamma} must be a finite number > 1")));
    }
    Ok(rho_unchecked(x, gamma))
}

fn rho_unchecked(x: f64, gamma: f64) -> f64 {
    let c = libm::pow(2.0, gamma - 1.0);
    if x <= 0.5 {
        c * libm::pow(x, gamma)
    } else {
        1.0 - c * libm::pow(1.0 - x, gamma)
    }
}

/// Switching curves for the pool model.
///
/// The probability of leaving mode `m` after `i` bins is
/// `rho_s((i/T)^(1/delta_m))`, with `delta_on = -log2(1 - alpha)` and
/// `delta_off = -log2(alpha)`. The half-way point of the off-to-on curve then
/// sits at `i/T = 0.5^delta_on = 1 - alpha`, so the pool spends roughly a
/// fraction `alpha` of the day running.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingCurve {
    pub gamma: f64,
    pub alpha: f64,
    pub bins: usize,
}

impl SwitchingCurve {
    pub fn new(gamma: f64, alpha: f64, bins: usize) -> Result<Self> {
        let c = SwitchingCurve { gamma, alpha, bins };
        c.validate()?;
        Ok(c)
    }

    /// The symmetric 48-bin, gamma = 6 curve.
    pub fn symmetric() -> Self {
        SwitchingCurve { gamma: 6.0, alpha: 0.5, bins: 48 }
    }

    /// The 8-hour cleaning schedule (alpha = 1/3).
    pub fn eight_hour() -> Self {
        SwitchingCurve { gamma: 6.0, alpha: 1.0 / 3.0, bins: 48 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return Err(Error::arg(format!("gamma = {} must be a finite number > 1", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::arg(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if self.bins == 0 || self.bins > u16::MAX as usize / 2 {
            return Err(Error::arg(format!("bins = {} must lie in 1..={}", self.bins, u16::MAX / 2)));
        }
        Ok(())
    }

    /// `delta_on = -log2(1 - alpha)`.
    pub fn delta_on(&self) -> f64 {
        -libm::log2(1.0 - self.alpha)
    }

    /// `delta_off = -log2(alpha)`.
    pub fn delta_off(&self) -> f64 {
        -libm::log2(self.alpha)
    }

    /// Probability that an off pool with `i` bins elapsed switches on.
    pub fn p_switch_on(&self, i: usize) -> f64 {
        let x = i as f64 / self.bins as f64;
        rho_unchecked(libm::pow(x, 1.0 / self.delta_on()), self.gamma)
    }

    /// Probability that an on pool with `i` bins elapsed switches off.
    pub fn p_switch_off(&self, i: usize) -> f64 {
        let x = i as f64 / self.bins as f64;
        rho_unchecked(libm::pow(x, 1.0 / self.delta_off()), self.gamma)
    }
}

/// A validated finite-state load model.
#[derive(Debug, Clone)]
pub struct LoadModel {
    labels: Vec<StateLabel>,
    p0: Matrix,
    sparse: SparseRows,
    utility: Vec<f64>,
    anchor: usize,
    sample_period_minutes: f64,
    curve: Option<SwitchingCurve>,
    aperiodic: bool,
}

impl LoadModel {
    /// Pool-pump chain: off states `(off, 1..=T)` first, then `(on, 1..=T)`;
    /// anchor `(on, 1)`; 30-minute bins.
    pub fn pool(curve: SwitchingCurve) -> Result<Self> {
        curve.validate()?;
        let t = curve.bins;
        let d = 2 * t;
        let mut p0 = Matrix::zeros(d, d);
        let mut labels = Vec::with_capacity(d);
        for mode in [Mode::Off, Mode::On] {
            for bin in 1..=t {
                labels.push(StateLabel::Pool { mode, bin });
            }
        }
        for i in 1..=t {
            let off = i - 1;
            let on = t + i - 1;
            let next = i.min(t - 1) + 1;
            let p = curve.p_switch_on(i);
            p0[(off, t)] += p;
            p0[(off, next - 1)] += 1.0 - p;
            let q = curve.p_switch_off(i);
            p0[(on, 0)] += q;
            p0[(on, t + next - 1)] += 1.0 - q;
        }
        let utility = (0..d).map(|k| if k >= t { 1.0 } else { 0.0 }).collect();
        let mut m = Self::assemble(labels, p0, utility, t)?;
        m.curve = Some(curve);
        Ok(m)
    }

    /// Generic model from a row-stochastic, irreducible matrix.
    pub fn custom(p0: Matrix, utility: Vec<f64>, anchor: usize) -> Result<Self> {
        let labels = (0..p0.rows()).map(StateLabel::Index).collect();
        Self::assemble(labels, p0, utility, anchor)
    }

    fn assemble(labels: Vec<StateLabel>, p0: Matrix, utility: Vec<f64>, anchor: usize) -> Result<Self> {
        let d = p0.rows();
        if !p0.is_square() {
            return Err(Error::DimensionMismatch { expected: d, found: p0.cols() });
        }
        if d == 0 {
            return Err(Error::arg("model has no states"));
        }
        if utility.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: utility.len() });
        }
        if anchor >= d {
            return Err(Error::arg(format!("anchor {anchor} out of range for {d} states")));
        }
        for i in 0..d {
            let mut sum = 0.0;
            for (j, &v) in p0.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("P0({i}, {j}) = {v}")));
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry { row: i, col: j, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        for (i, &u) in utility.iter().enumerate() {
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::arg(format!("utility({i}) = {u} outside [0, 1]")));
            }
        }
        let sparse = SparseRows::from_dense(&p0);
        if let Some(state) = unreachable_state(&sparse) {
            return Err(Error::Reducible { state });
        }
        let aperiodic = period(&sparse) == 1;
        Ok(LoadModel { labels, p0, sparse, utility, anchor, sample_period_minutes: 30.0, curve: None, aperiodic })
    }

    pub fn with_sample_period(mut self, minutes: f64) -> Result<Self> {
        if !(minutes > 0.0) || !minutes.is_finite() {
            return Err(Error::arg(format!("sample period {minutes} min must be positive")));
        }
        self.sample_period_minutes = minutes;
        Ok(self)
    }

    pub fn with_anchor(mut self, anchor: usize) -> Result<Self> {
        if anchor >= self.dim() {
            return Err(Error::arg(format!("anchor {anchor} out of range for {} states", self.dim())));
        }
        self.anchor = anchor;
        Ok(self)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[StateLabel] {
        &self.labels
    }

    pub fn p0(&self) -> &Matrix {
        &self.p0
    }

    pub fn sparse(&self) -> &SparseRows {
        &self.sparse
    }

    pub fn utility(&self) -> &[f64] {
        &self.utility
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn sample_period_minutes(&self) -> f64 {
        self.sample_period_minutes
    }

    pub fn curve(&self) -> Option<&SwitchingCurve> {
        self.curve.as_ref()
    }

    pub fn is_aperiodic(&self) -> bool {
        self.aperiodic
    }

    /// `sum_x mu(x) U(x)`.
    pub fn mean_utility(&self, mu: &[f64]) -> f64 {
        mu.iter().zip(&self.utility).map(|(m, u)| m * u).sum()
    }

    pub fn index_of(&self, label: StateLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn describe(&self) -> String {
        match &self.curve {
            Some(c) => format!("pool model: T={} gamma={} alpha={} d={}", c.bins, c.gamma, c.alpha, self.dim()),
            None => format!("custom model: d={}", self.dim()),
        }
    }
}

fn reach(n: usize, start: usize, adj: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// A state that is not mutually reachable with state 0, if any.
fn unreachable_state(p: &SparseRows) -> Option<usize> {
    let n = p.n_rows();
    let mut fwd = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    for i in 0..n {
        for &j in p.row_cols(i) {
            fwd[i].push(j);
            rev[j].push(i);
        }
    }
    let a = reach(n, 0, &fwd);
    let b = reach(n, 0, &rev);
    (0..n).find(|&i| !a[i] || !b[i])
}

/// Period of an irreducible chain: gcd of `level(u) + 1 - level(v)` over edges.
fn period(p: &SparseRows) -> usize {
    let n = p.n_rows();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in p.row_cols(u) {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for (&v, &w) in p.row_cols(u).iter().zip(p.row_values(u)) {
            if w > SUPPORT_EPS {
                let diff = (level[u] + 1).abs_diff(level[v]);
                g = gcd(g, diff);
            }
        }
    }
    g.max(1)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_values() {
        assert_eq!(rho_s(0.5, 6.0).unwrap(), 0.5);
        assert_eq!(rho_s(1.0, 6.0).unwrap(), 1.0);
        assert_eq!(rho_s(0.0, 6.0).unwrap(), 0.0);
        assert!((rho_s(0.25, 6.0).unwrap() - 0.0078125).abs() < 1e-15);
        assert!(rho_s(1.1, 6.0).is_err());
        assert!(rho_s(0.5, 1.0).is_err());
    }

    #[test]
    fn symmetric_pool_has_equal_curves() {
        let m = LoadModel::pool(SwitchingCurve::symmetric()).unwrap();
        assert_eq!(m.dim(), 96);
        assert_eq!(m.anchor(), 48);
        assert_eq!(m.labels()[48], StateLabel::Pool { mode: Mode::On, bin: 1 });
        let c = SwitchingCurve::symmetric();
        assert_eq!(c.delta_on(), 1.0);
        assert_eq!(c.delta_off(), 1.0);
        for i in 1..=48 {
            assert_eq!(c.p_switch_on(i), c.p_switch_off(i));
            assert!((m.p0()[(i - 1, 48)] - c.p_switch_on(i)).abs() < 1e-15);
        }
        assert_eq!(c.p_switch_on(48), 1.0);
        assert!(m.is_aperiodic());
    }

    #[test]
    fn custom_model_errors_are_distinct() {
        let ok = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(LoadModel::custom(ok.clone(), vec![0.0, 1.0], 0).is_ok());
        let bad = Matrix::from_rows(&[vec![0.5, 0.4], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(LoadModel::custom(bad, vec![0.0, 1.0], 0), Err(Error::NotStochastic { row: 0, .. })));
        let id = Matrix::identity(2);
        assert!(matches!(LoadModel::custom(id, vec![0.0, 1.0], 0), Err(Error::Reducible { .. })));
        assert!(matches!(LoadModel::custom(ok, vec![0.0], 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn periodic_chain_detected() {
        let p = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let m = LoadModel::custom(p, vec![0.0, 1.0], 0).unwrap();
        assert!(!m.is_aperiodic());
    }
}
