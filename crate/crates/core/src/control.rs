//! Balancing-authority side of the loop: reference truncation, PI feedback
//! producing the broadcast tilt, closed-loop runs over interchangeable
//! plants, capacity estimation and windup diagnostics.

use alloc::format;
use alloc::vec::Vec;

use crate::agent_sim::AgentPopulation;
use crate::load_model::LoadModel;
use crate::lti::LtiSystem;
use crate::mean_field::MeanField;
use crate::spectral::{PolicyCache, ZETA_MAX};
use crate::{Error, Result};

/// `zeta = kp e + ki sum(e)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    pub integrator: f64,
}

impl Default for PiController {
    fn default() -> Self {
        PiController::new(20.0, 4.0)
    }
}

impl PiController {
    pub fn new(kp: f64, ki: f64) -> Self {
        PiController { kp, ki, integrator: 0.0 }
    }

    pub fn step_error(&mut self, e: f64) -> f64 {
        self.integrator += e;
        self.kp * e + self.ki * self.integrator
    }

    pub fn step(&mut self, r: f64, y: f64) -> f64 {
        self.step_error(r - y)
    }

    pub fn reset(&mut self) {
        self.integrator = 0.0;
    }
}

/// Recompute the tilt sequence from logged references and outputs.
pub fn replay(mut ctrl: PiController, r: &[f64], y: &[f64]) -> Vec<f64> {
    r.iter().zip(y).map(|(&r, &y)| ctrl.step(r, y)).collect()
}

/// Deliverable range of the reference, in on-fraction units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityEnvelope {
    pub plus_demand: f64,
    pub minus_supply: f64,
}

impl CapacityEnvelope {
    pub fn new(plus_demand: f64, minus_supply: f64) -> Result<Self> {
        if !(plus_demand >= 0.0 && minus_supply >= 0.0) {
            return Err(Error::arg(format!("envelope {{+{plus_demand}, -{minus_supply}}} must be nonnegative")));
        }
        Ok(CapacityEnvelope { plus_demand, minus_supply })
    }

    pub fn truncate(&self, r: f64) -> f64 {
        r.clamp(-self.minus_supply, self.plus_demand)
    }

    pub fn contains(&self, r: f64) -> bool {
        r <= self.plus_demand && r >= -self.minus_supply
    }

    /// Scale to MW for `n` loads drawing `p_bar_kw` each when on.
    pub fn to_mw(&self, n: usize, p_bar_kw: f64) -> (f64, f64) {
        let s = n as f64 * p_bar_kw / 1000.0;
        (self.plus_demand * s, self.minus_supply * s)
    }

    pub fn from_mw(plus_mw: f64, minus_mw: f64, n: usize, p_bar_kw: f64) -> Result<Self> {
        let s = n as f64 * p_bar_kw / 1000.0;
        Self::new(plus_mw / s, minus_mw / s)
    }
}

/// A population (or its model) that accepts one tilt per grid tick.
pub trait Backend {
    /// Current aggregate on-fraction.
    fn output(&self) -> f64;
    fn advance(&mut self, zeta: f64) -> Result<()>;
}

impl<B: Backend + ?Sized> Backend for alloc::boxed::Box<B> {
    fn output(&self) -> f64 {
        (**self).output()
    }

    fn advance(&mut self, zeta: f64) -> Result<()> {
        (**self).advance(zeta)
    }
}

#[derive(Debug, Clone)]
pub struct MeanFieldBackend {
    pub model: LoadModel,
    pub cache: PolicyCache,
    pub state: MeanField,
}

impl MeanFieldBackend {
    pub fn new(model: LoadModel, mu0: &[f64], m: usize) -> Result<Self> {
        let state = MeanField::new(mu0, m)?;
        Ok(MeanFieldBackend { model, cache: PolicyCache::default(), state })
    }
}

impl Backend for MeanFieldBackend {
    fn output(&self) -> f64 {
        self.state.output(&self.model)
    }

    fn advance(&mut self, zeta: f64) -> Result<()> {
        self.state.step(&self.model, &mut self.cache, zeta)
    }
}

#[derive(Debug, Clone)]
pub struct AgentBackend {
    pub model: LoadModel,
    pub cache: PolicyCache,
    pub population: AgentPopulation,
}

impl AgentBackend {
    pub fn new(model: LoadModel, population: AgentPopulation) -> Self {
        AgentBackend { model, cache: PolicyCache::default(), population }
    }
}

impl Backend for AgentBackend {
    fn output(&self) -> f64 {
        self.population.output(&self.model)
    }

    fn advance(&mut self, zeta: f64) -> Result<()> {
        self.population.tick(&self.model, &mut self.cache, zeta).map(|_| ())
    }
}

/// The linearized plant. With `m > 1` classes each class keeps its own
/// deviation state and class `t mod m` advances at tick `t`, as in the
/// staggered mean field.
#[derive(Debug, Clone)]
pub struct LtiBackend {
    pub system: LtiSystem,
    x: Vec<Vec<f64>>,
    t: u64,
}

impl LtiBackend {
    pub fn new(system: LtiSystem) -> Self {
        Self::staggered(system, 1)
    }

    pub fn staggered(system: LtiSystem, m: usize) -> Self {
        let x = alloc::vec![alloc::vec![0.0; system.dim()]; m.max(1)];
        LtiBackend { system, x, t: 0 }
    }
}

impl Backend for LtiBackend {
    fn output(&self) -> f64 {
        let m = self.x.len() as f64;
        self.system.y0 + self.x.iter().map(|x| crate::linalg::dot(&self.system.c, x)).sum::<f64>() / m
    }

    fn advance(&mut self, zeta: f64) -> Result<()> {
        let c = (self.t % self.x.len() as u64) as usize;
        let mut next = self.system.a.mul_vec(&self.x[c]);
        next.iter_mut().zip(&self.system.b).for_each(|(n, b)| *n += zeta * b);
        self.x[c] = next;
        self.t += 1;
        Ok(())
    }
}

/// Per-tick record of a closed-loop run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub r: Vec<f64>,
    pub r_truncated: Vec<f64>,
    pub zeta: Vec<f64>,
    pub y: Vec<f64>,
    pub e: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// `rms(e) / rms(r_truncated)`, over ticks `from..`.
    pub fn nrms_from(&self, from: usize) -> f64 {
        nrms(&self.e[from.min(self.len())..], &self.r_truncated[from.min(self.len())..])
    }

    pub fn nrms(&self) -> f64 {
        self.nrms_from(0)
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}

pub fn nrms(e: &[f64], r: &[f64]) -> f64 {
    let d = rms(r);
    if d == 0.0 {
        if rms(e) == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        rms(e) / d
    }
}

/// Run the loop for `reference.len()` ticks. At each tick the output is
/// measured, the reference truncated (when an envelope is given), the PI law
/// evaluated on `r - (y - y0)`, and the plant advanced. The plant receives
/// the tilt clipped to the solver guard; the integrator is not clipped.
pub fn run_closed_loop<B: Backend>(
    backend: &mut B,
    y0: f64,
    reference: &[f64],
    ctrl: &mut PiController,
    envelope: Option<&CapacityEnvelope>,
) -> Result<Trajectory> {
    let n = reference.len();
    let mut out = Trajectory {
        r: Vec::with_capacity(n),
        r_truncated: Vec::with_capacity(n),
        zeta: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
    };
    for (t, &r) in reference.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("reference at tick {t} is {r}")));
        }
        let y = backend.output();
        let rt = envelope.map_or(r, |env| env.truncate(r));
        let e = rt - (y - y0);
        let zeta = ctrl.step_error(e);
        if !zeta.is_finite() {
            return Err(Error::NonFinite(format!(
                "tilt at tick {t} is {zeta} (error {e}, integrator {})",
                ctrl.integrator
            )));
        }
        backend.advance(zeta.clamp(-ZETA_MAX, ZETA_MAX))?;
        out.r.push(r);
        out.r_truncated.push(rt);
        out.zeta.push(zeta);
        out.y.push(y);
        out.e.push(e);
    }
    Ok(out)
}

/// Bisection settings for capacity estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityOptions {
    /// Ticks per trial run.
    pub horizon: usize,
    /// The constant reference is approached along a raised-cosine ramp of
    /// this many ticks, so the step transient does not dominate the score.
    pub ramp: usize,
    /// Largest acceptable normalized RMS error.
    pub tolerance: f64,
    pub iterations: usize,
    pub kp: f64,
    pub ki: f64,
}

impl CapacityOptions {
    /// Four days at the given grid period, 5% tolerance.
    pub fn four_days(ticks_per_day: usize) -> Self {
        CapacityOptions {
            horizon: 4 * ticks_per_day,
            ramp: ticks_per_day / 4,
            tolerance: 0.05,
            iterations: 12,
            kp: 20.0,
            ki: 4.0,
        }
    }
}

/// Reference used by one capacity trial.
pub fn capacity_reference(amplitude: f64, horizon: usize, ramp: usize) -> Vec<f64> {
    (0..horizon)
        .map(|t| {
            if t >= ramp || ramp == 0 {
                amplitude
            } else {
                let x = t as f64 / ramp as f64;
                amplitude * 0.5 * (1.0 - libm::cos(core::f64::consts::PI * x))
            }
        })
        .collect()
}

/// Score of one constant-reference trial.
pub fn capacity_trial<B: Backend>(backend: &mut B, y0: f64, amplitude: f64, opts: &CapacityOptions) -> Result<f64> {
    let r = capacity_reference(amplitude, opts.horizon, opts.ramp);
    let mut ctrl = PiController::new(opts.kp, opts.ki);
    let traj = run_closed_loop(backend, y0, &r, &mut ctrl, None)?;
    Ok(traj.nrms())
}

/// Largest plus and minus constant references that the loop tracks within
/// `opts.tolerance`, found by bisection on the amplitude. `make` builds a
/// fresh plant for every trial.
pub fn estimate_capacity<B: Backend, F: FnMut() -> Result<B>>(
    mut make: F,
    y0: f64,
    opts: &CapacityOptions,
) -> Result<CapacityEnvelope> {
    let mut side = |sign: f64, a_max: f64| -> Result<f64> {
        let mut feasible = |a: f64| -> Result<bool> {
            let mut b = make()?;
            Ok(capacity_trial(&mut b, y0, sign * a, opts)? < opts.tolerance)
        };
        let a_min = 0.01 * a_max;
        if !feasible(a_min)? {
            return Err(Error::Configuration(format!(
                "closed loop misses the {:.1}% tolerance even at amplitude {a_min:.4}",
                100.0 * opts.tolerance
            )));
        }
        if feasible(a_max)? {
            return Ok(a_max);
        }
        let (mut lo, mut hi) = (a_min, a_max);
        for _ in 0..opts.iterations {
            let mid = 0.5 * (lo + hi);
            if feasible(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    };
    let plus = side(1.0, 1.0 - y0)?;
    let minus = side(-1.0, y0)?;
    CapacityEnvelope::new(plus, minus)
}

/// Integrator-windup summary of a run driven past the envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct WindupReport {
    /// RMS error before the first over-capacity episode (after `burn_in`).
    pub baseline_rms: f64,
    /// Largest `|e|` within `window` ticks after any episode ends.
    pub post_max: f64,
    pub ratio: f64,
    pub episodes: usize,
}

/// Episodes are maximal runs where the raw reference lies outside `env`.
pub fn windup_report(traj: &Trajectory, env: &CapacityEnvelope, window: usize, burn_in: usize) -> Result<WindupReport> {
    let n = traj.len();
    let outside: Vec<bool> = traj.r.iter().map(|&r| !env.contains(r)).collect();
    let first = outside.iter().position(|&o| o).ok_or_else(|| Error::arg("reference never leaves the envelope"))?;
    if first <= burn_in + 1 {
        return Err(Error::arg("no baseline ticks before the first over-capacity episode"));
    }
    let baseline_rms = rms(&traj.e[burn_in..first]);
    let mut post_max = 0.0_f64;
    let mut episodes = 0;
    let mut t = first;
    while t < n {
        if outside[t] {
            let mut end = t;
            while end < n && outside[end] {
                end += 1;
            }
            episodes += 1;
            let stop = (end + window).min(n);
            for k in end..stop {
                if outside[k] {
                    break;
                }
                post_max = post_max.max(traj.e[k].abs());
            }
            t = end;
        } else {
            t += 1;
        }
    }
    let ratio = if baseline_rms > 0.0 { post_max / baseline_rms } else { f64::INFINITY };
    Ok(WindupReport { baseline_rms, post_max, ratio, episodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_arithmetic() {
        let mut c = PiController::default();
        assert_eq!(c.step_error(1.0), 24.0);
        assert_eq!(c.step_error(1.0), 28.0);
        let mut c = PiController::default();
        for _ in 0..10 {
            assert_eq!(c.step(0.3, 0.3), 0.0);
        }
    }

    #[test]
    fn truncation_and_mw() {
        let env = CapacityEnvelope::from_mw(695.0, 305.0, 1_000_000, 1.0).unwrap();
        assert!((env.truncate(0.7) - 0.695).abs() < 1e-12);
        assert!((env.truncate(-0.4) + 0.305).abs() < 1e-12);
        assert_eq!(env.truncate(0.1), 0.1);
        let (p, m) = env.to_mw(1_000_000, 1.0);
        assert!((p - 695.0).abs() < 1e-9 && (m - 305.0).abs() < 1e-9);
    }

    #[test]
    fn replay_reproduces() {
        let r = [0.1, 0.2, -0.1, 0.0];
        let y = [0.0, 0.05, 0.1, -0.02];
        let a = replay(PiController::default(), &r, &y);
        let b = replay(PiController::default(), &r, &y);
        assert_eq!(a, b);
        assert_eq!(a[0], 20.0 * 0.1 + 4.0 * 0.1);
    }
}
