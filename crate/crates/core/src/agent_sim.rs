//! Monte-Carlo population of independent loads driven by the broadcast
//! tilt, with staggered classes and an optional per-agent opt-out guard.
//!
//! Randomness is counter based: the uniform used by agent `i` at grid tick
//! `t` is word pair `rank(i)` of ChaCha stream `t + 1`, where `rank(i)` is
//! the agent's position inside its class. Initial states use stream 0,
//! word pair `i`. Trajectories therefore do not depend on how agents are
//! split across threads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::load_model::LoadModel;
use crate::mean_field::check_distribution;
use crate::spectral::{Policy, PolicyCache};
use crate::stats::Potential;
use crate::{Error, Result};

/// Agents per work unit.
const CHUNK: usize = 8192;

/// Initial distribution of a population.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Invariant measure of the nominal chain.
    Stationary,
    /// Invariant measure restricted to states with zero utility.
    AllOff,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Tracking {
    /// Window length in own transitions.
    window: usize,
    words: usize,
    window_days: u32,
    band: Option<(f64, f64)>,
    ring: Vec<Vec<u64>>,
    on: Vec<Vec<u16>>,
    pos: Vec<usize>,
    seen: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AgentPopulation {
    n: usize,
    m: usize,
    seed: u64,
    t: u64,
    /// Class-major: `states[c][k]` is agent `c + m k`.
    states: Vec<Vec<u16>>,
    counts: Vec<Vec<u64>>,
    on_state: Vec<bool>,
    nominal: Policy,
    tracking: Option<Tracking>,
}

#[inline]
fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn class_size(n: usize, m: usize, c: usize) -> usize {
    if c >= n {
        0
    } else {
        (n - c).div_ceil(m)
    }
}

impl AgentPopulation {
    pub fn init(model: &LoadModel, n: usize, m: usize, seed: u64, init: &Init) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("population needs at least one agent"));
        }
        if m == 0 {
            return Err(Error::arg("number of classes must be at least 1"));
        }
        let d = model.dim();
        if d > u16::MAX as usize {
            return Err(Error::arg(format!("{d} states do not fit the compact state encoding")));
        }
        let dist = match init {
            Init::Stationary => Potential::new(model.p0(), model.anchor())?.pi().to_vec(),
            Init::AllOff => {
                let pi = Potential::new(model.p0(), model.anchor())?.pi().to_vec();
                let mut off: Vec<f64> =
                    pi.iter().zip(model.utility()).map(|(p, &u)| if u == 0.0 { *p } else { 0.0 }).collect();
                let s: f64 = off.iter().sum();
                if !(s > 0.0) {
                    return Err(Error::arg("model has no zero-utility state"));
                }
                off.iter_mut().for_each(|p| *p /= s);
                off
            }
            Init::Custom(mu) => {
                if mu.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: mu.len() });
                }
                check_distribution(mu)?;
                mu.clone()
            }
        };
        let mut cdf = Vec::with_capacity(d);
        let mut acc = 0.0;
        for p in &dist {
            acc += p;
            cdf.push(acc);
        }
        let last_pos = dist.iter().rposition(|p| *p > 0.0).unwrap_or(d - 1);
        for c in cdf.iter_mut().skip(last_pos) {
            *c = 1.0;
        }
        let mut states: Vec<Vec<u16>> = (0..m).map(|c| Vec::with_capacity(class_size(n, m, c))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        rng.set_word_pos(0);
        for i in 0..n {
            let u = uniform(&mut rng);
            let s = cdf.partition_point(|&c| c <= u).min(d - 1);
            states[i % m].push(s as u16);
        }
        Self::assemble(model, m, seed, 0, states)
    }

    fn assemble(model: &LoadModel, m: usize, seed: u64, t: u64, states: Vec<Vec<u16>>) -> Result<Self> {
        let d = model.dim();
        let n = states.iter().map(Vec::len).sum();
        let counts = states
            .iter()
            .map(|cls| {
                let mut h = vec![0u64; d];
                cls.iter().for_each(|&s| h[s as usize] += 1);
                h
            })
            .collect();
        let on_state = model.utility().iter().map(|&u| u > 0.5).collect();
        Ok(AgentPopulation {
            n,
            m,
            seed,
            t,
            states,
            counts,
            on_state,
            nominal: Policy::nominal(model),
            tracking: None,
        })
    }

    /// Rebuild a population from states listed in agent order.
    pub fn from_snapshot(model: &LoadModel, m: usize, seed: u64, t: u64, states: &[u16]) -> Result<Self> {
        if m == 0 || states.is_empty() {
            return Err(Error::arg("snapshot needs at least one agent and one class"));
        }
        if let Some(bad) = states.iter().find(|&&s| s as usize >= model.dim()) {
            return Err(Error::arg(format!("snapshot state {bad} out of range")));
        }
        let mut by_class: Vec<Vec<u16>> = vec![Vec::new(); m];
        for (i, &s) in states.iter().enumerate() {
            by_class[i % m].push(s);
        }
        Self::assemble(model, m, seed, t, by_class)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// States in agent order.
    pub fn states(&self) -> Vec<u16> {
        let mut out = vec![0u16; self.n];
        for (c, cls) in self.states.iter().enumerate() {
            for (k, &s) in cls.iter().enumerate() {
                out[c + self.m * k] = s;
            }
        }
        out
    }

    pub fn class_of(&self, agent: usize) -> usize {
        agent % self.m
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.states.iter().map(Vec::len).collect()
    }

    /// Fraction of agents in each state.
    pub fn empirical_distribution(&self) -> Vec<f64> {
        let d = self.on_state.len();
        let mut total = vec![0u64; d];
        for h in &self.counts {
            total.iter_mut().zip(h).for_each(|(t, c)| *t += c);
        }
        total.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    /// `(1/N) sum_i U(X_i)`.
    pub fn output(&self, model: &LoadModel) -> f64 {
        let u = model.utility();
        let s: f64 = self.counts.iter().flat_map(|h| h.iter().zip(u).map(|(&c, &u)| c as f64 * u)).sum();
        s / self.n as f64
    }

    pub fn class_outputs(&self, model: &LoadModel) -> Vec<f64> {
        let u = model.utility();
        self.counts
            .iter()
            .zip(&self.states)
            .map(|(h, cls)| {
                let s: f64 = h.iter().zip(u).map(|(&c, &u)| c as f64 * u).sum();
                if cls.is_empty() {
                    0.0
                } else {
                    s / cls.len() as f64
                }
            })
            .collect()
    }

    /// Record each agent's on/off status over a trailing window of
    /// `window_days`, without changing its behaviour.
    pub fn track_on_hours(&mut self, window_days: u32, steps_per_day: usize) -> Result<()> {
        if window_days == 0 || steps_per_day == 0 {
            return Err(Error::arg("tracking window must cover at least one day"));
        }
        let window = window_days as usize * steps_per_day;
        if window > u16::MAX as usize {
            return Err(Error::arg(format!("tracking window of {window} steps is too long")));
        }
        let words = window.div_ceil(64);
        let band = self.tracking.as_ref().and_then(|t| t.band);
        self.tracking = Some(Tracking {
            window,
            words,
            window_days,
            band,
            ring: self.states.iter().map(|c| vec![0u64; c.len() * words]).collect(),
            on: self.states.iter().map(|c| vec![0u16; c.len()]).collect(),
            pos: vec![0; self.m],
            seen: vec![0; self.m],
        });
        Ok(())
    }

    /// Opt-out guard: an agent whose trailing on-hours per day fall outside
    /// `[lo, hi]` follows the nominal law until it is back in band. An empty
    /// band (`lo >= hi`) guards every agent.
    pub fn set_guard(&mut self, window_days: u32, band: (f64, f64), steps_per_day: usize) -> Result<()> {
        if !(band.0.is_finite() && band.1.is_finite()) {
            return Err(Error::arg("guard band must be finite"));
        }
        let reuse = matches!(&self.tracking, Some(t) if t.window_days == window_days && t.window == window_days as usize * steps_per_day);
        if !reuse {
            self.track_on_hours(window_days, steps_per_day)?;
        }
        if let Some(t) = self.tracking.as_mut() {
            t.band = Some(band);
        }
        Ok(())
    }

    pub fn clear_guard(&mut self) {
        if let Some(t) = self.tracking.as_mut() {
            t.band = None;
        }
    }

    /// Trailing on-hours per day for every agent (agent order), if tracked.
    pub fn on_hours_per_day(&self) -> Option<Vec<f64>> {
        let tr = self.tracking.as_ref()?;
        let mut out = vec![f64::NAN; self.n];
        for c in 0..self.m {
            let seen = tr.seen[c];
            for (k, &on) in tr.on[c].iter().enumerate() {
                if seen > 0 {
                    out[c + self.m * k] = on as f64 / seen as f64 * 24.0;
                }
            }
        }
        Some(out)
    }

    /// Fraction of agents currently overriding the broadcast tilt.
    pub fn guarded_fraction(&self) -> f64 {
        let Some(tr) = self.tracking.as_ref() else { return 0.0 };
        let Some(band) = tr.band else { return 0.0 };
        let mut g = 0usize;
        for c in 0..self.m {
            g += tr.on[c].iter().filter(|&&on| !in_band(band, on, tr.seen[c])).count();
        }
        g as f64 / self.n as f64
    }

    /// Advance the active class with `policy`; returns the output after the move.
    pub fn tick_with(&mut self, model: &LoadModel, policy: &Policy) -> f64 {
        let c = (self.t % self.m as u64) as usize;
        let d = self.on_state.len();
        let mut seed_bytes = [0u8; 32];
        {
            let mut base = ChaCha8Rng::seed_from_u64(self.seed);
            base.fill_bytes(&mut seed_bytes);
        }
        let ctx = Ctx {
            policy,
            nominal: &self.nominal,
            on_state: &self.on_state,
            seed: seed_bytes,
            stream: self.t.wrapping_add(1),
            band: self.tracking.as_ref().and_then(|t| t.band),
            window: self.tracking.as_ref().map_or(0, |t| t.window),
            words: self.tracking.as_ref().map_or(0, |t| t.words),
            pos: self.tracking.as_ref().map_or(0, |t| t.pos[c]),
            seen: self.tracking.as_ref().map_or(0, |t| t.seen[c]),
            d,
        };
        let states = &mut self.states[c];
        let (ring, on): (&mut [u64], &mut [u16]) = match self.tracking.as_mut() {
            Some(t) => (&mut t.ring[c], &mut t.on[c]),
            None => (&mut [], &mut []),
        };
        let mut jobs: Vec<Job<'_>> = Vec::with_capacity(states.len().div_ceil(CHUNK));
        let mut ring_rest = ring;
        let mut on_rest = on;
        for (j, chunk) in states.chunks_mut(CHUNK).enumerate() {
            let len = chunk.len();
            let (r, rr) = core::mem::take(&mut ring_rest).split_at_mut(len * ctx.words);
            ring_rest = rr;
            let (o, or) = core::mem::take(&mut on_rest).split_at_mut(if ctx.words > 0 { len } else { 0 });
            on_rest = or;
            jobs.push((j * CHUNK, chunk, r, o));
        }
        let hist = run_jobs(jobs, &ctx);
        self.counts[c] = hist;
        if let Some(t) = self.tracking.as_mut() {
            t.pos[c] = (t.pos[c] + 1) % t.window;
            t.seen[c] = (t.seen[c] + 1).min(t.window);
        }
        self.t += 1;
        self.output(model)
    }

    pub fn tick(&mut self, model: &LoadModel, cache: &mut PolicyCache, zeta: f64) -> Result<f64> {
        let policy = cache.get(model, zeta)?;
        Ok(self.tick_with(model, &policy))
    }
}

#[inline]
fn in_band(band: (f64, f64), on: u16, seen: usize) -> bool {
    let (lo, hi) = band;
    if lo >= hi {
        return false;
    }
    if seen == 0 {
        return true;
    }
    let h = on as f64 / seen as f64 * 24.0;
    lo <= h && h <= hi
}

struct Ctx<'a> {
    policy: &'a Policy,
    nominal: &'a Policy,
    on_state: &'a [bool],
    seed: [u8; 32],
    stream: u64,
    band: Option<(f64, f64)>,
    window: usize,
    words: usize,
    pos: usize,
    seen: usize,
    d: usize,
}

type Job<'s> = (usize, &'s mut [u16], &'s mut [u64], &'s mut [u16]);

fn advance_chunk(start_rank: usize, states: &mut [u16], ring: &mut [u64], on: &mut [u16], ctx: &Ctx<'_>) -> Vec<u64> {
    let mut hist = vec![0u64; ctx.d];
    let mut rng = ChaCha8Rng::from_seed(ctx.seed);
    rng.set_stream(ctx.stream);
    rng.set_word_pos(2 * start_rank as u128);
    let tracking = ctx.words > 0;
    let (word, bit) = (ctx.pos / 64, ctx.pos % 64);
    for (k, s) in states.iter_mut().enumerate() {
        let u = uniform(&mut rng);
        let guarded = match (tracking, ctx.band) {
            (true, Some(band)) => !in_band(band, on[k], ctx.seen),
            _ => false,
        };
        let law = if guarded { ctx.nominal } else { ctx.policy };
        let next = law.sample(*s as usize, u);
        *s = next as u16;
        hist[next] += 1;
        if tracking {
            let w = &mut ring[k * ctx.words + word];
            let old = (*w >> bit) & 1;
            if ctx.seen >= ctx.window && old == 1 {
                on[k] -= 1;
            }
            if ctx.on_state[next] {
                *w |= 1 << bit;
                on[k] += 1;
            } else {
                *w &= !(1 << bit);
            }
        }
    }
    hist
}

#[cfg(feature = "parallel")]
fn run_jobs(jobs: Vec<Job<'_>>, ctx: &Ctx<'_>) -> Vec<u64> {
    use rayon::prelude::*;
    jobs.into_par_iter()
        .map(|(r, s, ring, on)| advance_chunk(r, s, ring, on, ctx))
        .reduce(
            || vec![0u64; ctx.d],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

#[cfg(not(feature = "parallel"))]
fn run_jobs(jobs: Vec<Job<'_>>, ctx: &Ctx<'_>) -> Vec<u64> {
    let mut total = vec![0u64; ctx.d];
    for (r, s, ring, on) in jobs {
        let h = advance_chunk(r, s, ring, on, ctx);
        total.iter_mut().zip(&h).for_each(|(x, y)| *x += y);
    }
    total
}
