//! The six subcommands. Each takes a validated [`RunConfig`], writes its
//! artifacts under `output.dir`, and returns a typed result whose
//! `summary()` lines are printed by the binary and saved next to the data.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use mfdr_core::agent_sim::{AgentPopulation, Init};
use mfdr_core::control::{
    estimate_capacity, run_closed_loop, windup_report, AgentBackend, Backend, CapacityEnvelope, CapacityOptions,
    LtiBackend, MeanFieldBackend, PiController, Trajectory, WindupReport,
};
use mfdr_core::lti::{log_space, supersampled_transfer, BodePoint, LtiSystem, SupersampleFilter};
use mfdr_core::oracle::{fixtures, run_enumeration_suite, run_mc_suite, OracleCheck};
use mfdr_core::signal::{lowpass, synth_regulation, to_on_fraction, SignalSeries, Units};
use mfdr_core::{LoadModel, NominalStats, SpectralDesign};

use crate::config::{BackendKind, InitKind, ReferenceSource, RunConfig, Scaling};
use crate::csvio::{self, SweepRow};
use crate::error::CliError;
use crate::svg::{Mark, Plot};

/// Lines of `key: value` printed after a command.
pub type Summary = Vec<(String, String)>;

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn kf(k: &str, v: f64) -> (String, String) {
    (k.to_string(), csvio::num(v))
}

/// Model and nominal statistics shared by every command.
pub struct Context {
    pub cfg: RunConfig,
    pub model: LoadModel,
    pub stats: NominalStats,
}

impl Context {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let model = cfg.load_model()?;
        let stats = NominalStats::compute(&model)?;
        Ok(Context { cfg: cfg.clone(), model, stats })
    }

    pub fn y0(&self) -> f64 {
        self.stats.eta0
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(name)
    }

    fn prepare_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.cfg.output.dir)
            .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", self.cfg.output.dir.display())))
    }

    fn svg(&self, plot: &Plot, name: &str) -> Result<(), CliError> {
        if self.cfg.output.svg {
            plot.save(&self.out(name))?;
        }
        Ok(())
    }

    /// Own transitions per day of one load.
    pub fn steps_per_day(&self) -> usize {
        (24.0 * 60.0 / self.cfg.model.period_minutes).round() as usize
    }

    /// A fresh plant of the configured kind in its initial state.
    pub fn backend(&self, kind: BackendKind) -> Result<Box<dyn Backend>, CliError> {
        let m = self.cfg.sim.classes;
        Ok(match kind {
            BackendKind::MeanField => Box::new(MeanFieldBackend::new(self.model.clone(), &self.initial_distribution(), m)?),
            BackendKind::Agents => Box::new(AgentBackend::new(self.model.clone(), self.population()?)),
            BackendKind::Lti => {
                if self.cfg.sim.init != InitKind::Stationary {
                    return Err(CliError::Validation("sim.init: the linear backend starts at the invariant measure".into()));
                }
                Box::new(LtiBackend::staggered(LtiSystem::linearize(&self.model, &self.stats)?, m))
            }
        })
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        match self.cfg.sim.init {
            InitKind::Stationary => self.stats.pi0.clone(),
            InitKind::AllOff => {
                let u = self.model.utility();
                let mut mu: Vec<f64> = self.stats.pi0.iter().zip(u).map(|(&p, &u)| if u == 0.0 { p } else { 0.0 }).collect();
                let s: f64 = mu.iter().sum();
                mu.iter_mut().for_each(|p| *p /= s);
                mu
            }
        }
    }

    pub fn population(&self) -> Result<AgentPopulation, CliError> {
        let sim = &self.cfg.sim;
        if let Some(path) = &sim.restart {
            let snap = csvio::read_snapshot(path)?;
            if snap.classes != sim.classes {
                return Err(CliError::Validation(format!(
                    "sim.restart: snapshot has {} classes, configuration has {}",
                    snap.classes, sim.classes
                )));
            }
            return Ok(AgentPopulation::from_snapshot(&self.model, snap.classes, snap.seed, snap.t, &snap.states)?);
        }
        let init = match sim.init {
            InitKind::Stationary => Init::Stationary,
            InitKind::AllOff => Init::AllOff,
        };
        let mut pop = AgentPopulation::init(&self.model, sim.agents, sim.classes, sim.seed, &init)?;
        let g = &self.cfg.guard;
        if g.enabled {
            pop.set_guard(g.window_days, (g.lo_hours, g.hi_hours), self.steps_per_day())?;
        } else {
            pop.track_on_hours(sim.on_hours_days, self.steps_per_day())?;
        }
        Ok(pop)
    }

    pub fn capacity_options(&self) -> CapacityOptions {
        let c = &self.cfg.control;
        CapacityOptions {
            tolerance: c.capacity_tolerance,
            iterations: c.capacity_iterations,
            kp: c.kp,
            ki: c.ki,
            ..CapacityOptions::four_days(self.cfg.ticks_per_day())
        }
    }

    pub fn estimate_envelope(&self) -> Result<CapacityEnvelope, CliError> {
        let opts = self.capacity_options();
        let kind = self.cfg.control.capacity_backend;
        Ok(estimate_capacity(|| self.backend(kind).map_err(core_err), self.y0(), &opts)?)
    }

    /// Override, else an estimate when asked for or needed for scaling.
    pub fn envelope(&self) -> Result<Option<CapacityEnvelope>, CliError> {
        if let Some((p, m)) = self.cfg.envelope_override() {
            return Ok(Some(CapacityEnvelope::new(p, m)?));
        }
        let needs = matches!(self.cfg.reference.scaling, Scaling::Envelope | Scaling::Full);
        if self.cfg.control.estimate_capacity || needs {
            return Ok(Some(self.estimate_envelope()?));
        }
        Ok(None)
    }

    /// Reference in on-fraction deviation units, one sample per grid tick.
    pub fn reference(&self, env: Option<&CapacityEnvelope>) -> Result<Vec<f64>, CliError> {
        let r = &self.cfg.reference;
        let dt = self.cfg.grid_period_seconds();
        let n = self.cfg.horizon_ticks();
        let units = if r.scaling == Scaling::Raw { Units::OnFraction } else { Units::Mw };
        let mut s = match r.source {
            ReferenceSource::Zero => SignalSeries::new(vec![0.0; n], dt, units)?,
            ReferenceSource::Synth => {
                let s = synth_regulation(self.cfg.sim.days * 24.0, dt, r.seed, (r.band_lo, r.band_hi), r.rms_mw)?;
                SignalSeries { units, ..s }
            }
            ReferenceSource::Csv => {
                let path = r.path.as_ref().expect("validated");
                let s = csvio::load_signal(path, units)?;
                resample(s, dt)?
            }
        };
        if r.lowpass_cph > 0.0 {
            s = lowpass(&s, r.lowpass_cph)?;
        }
        let mut x = s.samples.clone();
        match r.scaling {
            Scaling::Raw => {}
            Scaling::Mw => x = to_on_fraction(&s, r.mw_pools, r.p_bar_kw)?.samples,
            Scaling::Envelope | Scaling::Full => {
                let env = env.ok_or_else(|| CliError::Validation("reference.scaling needs an envelope".into()))?;
                x = scale_to_envelope(&x, env, r.level, r.scaling == Scaling::Full);
            }
        }
        x.resize(n.min(x.len()), 0.0);
        if x.len() < n {
            return Err(CliError::Validation(format!(
                "reference has {} samples at {dt} s, the run needs {n}",
                x.len()
            )));
        }
        Ok(x)
    }
}

fn core_err(e: CliError) -> mfdr_core::Error {
    mfdr_core::Error::Configuration(e.to_string())
}

/// Bring a signal onto the grid period by holding each sample.
fn resample(s: SignalSeries, dt: f64) -> Result<SignalSeries, CliError> {
    let ratio = s.period_seconds / dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-6 * ratio {
        return Err(CliError::Validation(format!(
            "reference.path: sample period {} s is not a multiple of the grid period {dt} s",
            s.period_seconds
        )));
    }
    Ok(s.hold(k as usize))
}

/// `Full` maps `[min, max]` affinely onto `level * [-minus, plus]`; otherwise
/// the signal is scaled so its peaks reach `level` of each side.
pub fn scale_to_envelope(x: &[f64], env: &CapacityEnvelope, level: f64, full: bool) -> Vec<f64> {
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    if full {
        if hi - lo <= 0.0 {
            return vec![0.0; x.len()];
        }
        let (a, b) = (-level * env.minus_supply, level * env.plus_demand);
        x.iter().map(|v| a + (v - lo) / (hi - lo) * (b - a)).collect()
    } else {
        let mut s = f64::INFINITY;
        if hi > 0.0 {
            s = s.min(env.plus_demand / hi);
        }
        if lo < 0.0 {
            s = s.min(env.minus_supply / -lo);
        }
        if !s.is_finite() {
            return vec![0.0; x.len()];
        }
        x.iter().map(|v| v * s * level).collect()
    }
}

// ---------------------------------------------------------------- design

#[derive(Debug, Clone)]
pub struct DesignOutput {
    pub eta0: f64,
    pub kappa2: f64,
    pub sweep: Vec<SweepRow>,
}

impl DesignOutput {
    pub fn summary(&self) -> Summary {
        let at0 = self.sweep.iter().find(|r| r.zeta == 0.0).map(|r| r.on_fraction);
        let mut s = vec![kf("eta0", self.eta0), kf("kappa2", self.kappa2)];
        if let Some(v) = at0 {
            s.push(kf("on_fraction_at_zero", v));
        }
        s.push(kv("sweep_points", self.sweep.len()));
        s.push(kv("eta_star_convex", convex(&self.sweep.iter().map(|r| (r.zeta, r.eta_star)).collect::<Vec<_>>())));
        s
    }
}

/// Second differences nonnegative up to round-off.
pub fn convex(pts: &[(f64, f64)]) -> bool {
    pts.windows(3).all(|w| {
        let (h1, h2) = (w[1].0 - w[0].0, w[2].0 - w[1].0);
        let slope = (w[2].1 - w[1].1) / h2 - (w[1].1 - w[0].1) / h1;
        slope >= -1e-9 * (1.0 + w[1].1.abs())
    })
}

/// Sweep grid; zero is always included.
pub fn sweep_grid(cfg: &RunConfig) -> Vec<f64> {
    let s = &cfg.sweep;
    let mut z: Vec<f64> = (0..s.points)
        .map(|k| s.zeta_min + (s.zeta_max - s.zeta_min) * k as f64 / (s.points - 1) as f64)
        .map(|z| if z.abs() < 1e-12 { 0.0 } else { z })
        .collect();
    if s.zeta_min < 0.0 && s.zeta_max > 0.0 && !z.contains(&0.0) {
        z.push(0.0);
        z.sort_by(f64::total_cmp);
    }
    z
}

pub fn cmd_design(cfg: &RunConfig) -> Result<DesignOutput, CliError> {
    let ctx = Context::new(cfg)?;
    ctx.prepare_dir()?;
    let (model, stats) = (&ctx.model, &ctx.stats);
    csvio::write_model(&ctx.out("model.csv"), model)?;
    csvio::write_curve(&ctx.out("switching_curves.csv"), &cfg.curve())?;
    csvio::write_states(&ctx.out("nominal_states.csv"), model, stats)?;
    csvio::write_scalars(&ctx.out("nominal_scalars.csv"), &[("eta0", stats.eta0), ("kappa2", stats.kappa2)])?;

    let labels: Vec<String> = model.labels().iter().map(|l| l.to_string()).collect();
    let grid = sweep_grid(cfg);
    // Warm-start outward from zero so neighbouring solves share work.
    let zero = grid.iter().position(|&z| z >= 0.0).unwrap_or(0);
    let mut designs: Vec<Option<SpectralDesign>> = vec![None; grid.len()];
    let mut warm: Option<Vec<f64>> = None;
    for k in zero..grid.len() {
        let d = SpectralDesign::solve_warm(model, grid[k], warm.as_deref())?;
        warm = Some(d.v.clone());
        designs[k] = Some(d);
    }
    warm = designs[zero].as_ref().map(|d| d.v.clone());
    for k in (0..zero).rev() {
        let d = SpectralDesign::solve_warm(model, grid[k], warm.as_deref())?;
        warm = Some(d.v.clone());
        designs[k] = Some(d);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (k, d) in designs.into_iter().enumerate() {
        let d = d.expect("filled above");
        if cfg.output.dump_every > 0 && k % cfg.output.dump_every == 0 {
            csvio::write_matrix(&ctx.out(&format!("p_check_{k:03}.csv")), &labels, &d.p_check)?;
        }
        rows.push(SweepRow {
            zeta: d.zeta,
            lambda: d.lambda,
            eta_star: d.eta_star,
            on_fraction: d.steady_state_on_fraction(model),
            taylor_eta: stats.taylor_eta(d.zeta),
            taylor_on_fraction: stats.taylor_on_fraction(d.zeta),
            h_span: d.h_span(),
            iterations: d.iterations,
        });
    }
    csvio::write_sweep(&ctx.out("sweep.csv"), &rows)?;

    let z: Vec<f64> = rows.iter().map(|r| r.zeta).collect();
    let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    ctx.svg(
        &Plot::new("Steady-state on-fraction", "zeta", "fraction of pools on")
            .add("exact", &z, &col(|r| r.on_fraction), Mark::Line)
            .add("eta0 + kappa2 zeta", &z, &col(|r| r.taylor_on_fraction), Mark::Dashed),
        "on_fraction.svg",
    )?;
    ctx.svg(
        &Plot::new("Optimal average welfare", "zeta", "eta*")
            .add("eta*", &z, &col(|r| r.eta_star), Mark::Line)
            .add("second-order", &z, &col(|r| r.taylor_eta), Mark::Dashed),
        "eta_star.svg",
    )?;
    let c = cfg.curve();
    let xs: Vec<f64> = (1..=c.bins).map(|i| i as f64 / c.bins as f64).collect();
    ctx.svg(
        &Plot::new("Nominal switching probabilities", "fraction of a day in mode", "probability")
            .add("off to on", &xs, &(1..=c.bins).map(|i| c.p_switch_on(i)).collect::<Vec<_>>(), Mark::Line)
            .add("on to off", &xs, &(1..=c.bins).map(|i| c.p_switch_off(i)).collect::<Vec<_>>(), Mark::Line),
        "switching_curves.svg",
    )?;
    let states: Vec<f64> = (0..model.dim()).map(|i| i as f64).collect();
    ctx.svg(
        &Plot::new("Nominal invariant measure", "state index (off, then on)", "pi0")
            .add("pi0", &states, &stats.pi0, Mark::Line),
        "pi0.svg",
    )?;
    let out = DesignOutput { eta0: stats.eta0, kappa2: stats.kappa2, sweep: rows };
    write_summary(&ctx, &out.summary())?;
    Ok(out)
}

// ---------------------------------------------------------------- analyze-lti

#[derive(Debug, Clone)]
pub struct LtiOutput {
    pub dc_gain: f64,
    pub kappa2: f64,
    pub minimum_phase: bool,
    pub stable: bool,
    pub perron_canceled: bool,
    pub perron_residue: f64,
    pub max_zero_modulus: f64,
    pub relative_degree: usize,
    pub zeros: usize,
    pub filter_zeros: Vec<Complex64>,
    pub warning: Option<String>,
}

impl LtiOutput {
    pub fn summary(&self) -> Summary {
        let mut s = vec![
            kf("dc_gain", self.dc_gain),
            kf("kappa2", self.kappa2),
            kv("minimum_phase", self.minimum_phase),
            kv("stable", self.stable),
            kv("perron_pole_canceled", self.perron_canceled),
            kf("perron_residue", self.perron_residue),
            kv("relative_degree", self.relative_degree),
            kv("zeros", self.zeros),
            kf("max_zero_modulus", self.max_zero_modulus),
            kv("averaging_filter_zeros", self.filter_zeros.len()),
        ];
        if let Some(w) = &self.warning {
            s.push(kv("warning", w));
        }
        s
    }
}

fn unwrap_deg(prev: Option<f64>, mut phase: f64) -> f64 {
    if let Some(p) = prev {
        while phase - p > 180.0 {
            phase -= 360.0;
        }
        while phase - p < -180.0 {
            phase += 360.0;
        }
    }
    phase
}

/// Zeros of the class-averaging filter: the nontrivial `m`-th roots of unity.
pub fn averaging_zeros(m: usize) -> Vec<Complex64> {
    (1..m).map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64)).collect()
}

pub fn cmd_analyze_lti(cfg: &RunConfig) -> Result<LtiOutput, CliError> {
    let ctx = Context::new(cfg)?;
    ctx.prepare_dir()?;
    let sys = LtiSystem::linearize(&ctx.model, &ctx.stats)?;
    let n_freq = 400;
    let base = sys.bode(n_freq, 1e-3, std::f64::consts::PI)?;
    csvio::write_bode(&ctx.out("bode.csv"), &base, None, cfg.model.period_minutes)?;

    let m = cfg.sim.classes;
    let filter = SupersampleFilter::new(m, cfg.model.period_minutes)?;
    let mut grid = Vec::with_capacity(n_freq);
    let mut prev = None;
    for k in 0..n_freq {
        let w = log_space(1e-3 / m as f64, std::f64::consts::PI, n_freq, k);
        let z = Complex64::from_polar(1.0, w);
        // The averaging filter vanishes at its own zeros; step around them.
        let h = match supersampled_transfer(&sys, &filter, z) {
            Ok(h) => h,
            Err(mfdr_core::Error::PoleProximity(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let phase = unwrap_deg(prev, h.im.atan2(h.re).to_degrees());
        prev = Some(phase);
        grid.push(BodePoint { omega: w, magnitude_db: 20.0 * h.norm().log10(), phase_deg: phase });
    }
    csvio::write_bode(&ctx.out("bode_grid.csv"), &grid, None, filter.grid_period_minutes())?;

    let zp = sys.zeros_poles()?;
    let filter_zeros = averaging_zeros(m);
    csvio::write_zero_pole(&ctx.out("zeros_poles.csv"), &zp, &filter_zeros)?;

    // Step responses on the grid clock: one class versus m staggered classes.
    let ticks = 4 * cfg.ticks_per_day().min(48 * m);
    let mut single = LtiBackend::new(sys.clone());
    let mut stag = LtiBackend::staggered(sys.clone(), m);
    let (mut y1, mut ym) = (Vec::with_capacity(ticks), Vec::with_capacity(ticks));
    for t in 0..ticks {
        y1.push(single.output() - sys.y0);
        ym.push(stag.output() - sys.y0);
        // The single-class plant only moves once per base period.
        if t % m == 0 {
            single.advance(1.0)?;
        }
        stag.advance(1.0)?;
    }
    let zeta = vec![1.0; ticks];
    csvio::write_open_loop(
        &ctx.out("step_grid.csv"),
        filter.grid_period_minutes() * 60.0,
        &zeta,
        &ym,
        &["y_base_period".to_string()],
        &y1.iter().map(|&v| vec![v]).collect::<Vec<_>>(),
    )?;

    let hz = |pts: &[BodePoint], period_min: f64| -> Vec<f64> {
        pts.iter().map(|p| p.omega / (2.0 * std::f64::consts::PI) * 60.0 / period_min).collect()
    };
    let (fb, fg) = (hz(&base, cfg.model.period_minutes), hz(&grid, filter.grid_period_minutes()));
    ctx.svg(
        &Plot::new("Linearized aggregate: magnitude", "frequency (cycles/hour)", "dB")
            .log_x()
            .add("base period", &fb, &base.iter().map(|p| p.magnitude_db).collect::<Vec<_>>(), Mark::Line)
            .add(&format!("staggered, m = {m}"), &fg, &grid.iter().map(|p| p.magnitude_db).collect::<Vec<_>>(), Mark::Line),
        "bode_magnitude.svg",
    )?;
    ctx.svg(
        &Plot::new("Linearized aggregate: phase", "frequency (cycles/hour)", "degrees")
            .log_x()
            .add("base period", &fb, &base.iter().map(|p| p.phase_deg).collect::<Vec<_>>(), Mark::Line)
            .add(&format!("staggered, m = {m}"), &fg, &grid.iter().map(|p| p.phase_deg).collect::<Vec<_>>(), Mark::Line),
        "bode_phase.svg",
    )?;
    let circle: Vec<f64> = (0..=360).map(|k| (k as f64).to_radians()).collect();
    let re = |v: &[Complex64]| v.iter().map(|z| z.re).collect::<Vec<_>>();
    let im = |v: &[Complex64]| v.iter().map(|z| z.im).collect::<Vec<_>>();
    let active_poles: Vec<Complex64> =
        zp.poles.iter().filter(|p| !zp.canceled.iter().any(|c| c.pole == **p)).cloned().collect();
    ctx.svg(
        &Plot::new("Poles and zeros", "real", "imaginary")
            .equal_aspect()
            .guide(circle.iter().map(|t| t.cos()).collect(), circle.iter().map(|t| t.sin()).collect())
            .add("zeros", &re(&zp.zeros), &im(&zp.zeros), Mark::Points)
            .add("poles", &re(&active_poles), &im(&active_poles), Mark::Crosses),
        "zeros_poles.svg",
    )?;
    let t_h: Vec<f64> = (0..ticks).map(|t| t as f64 * filter.grid_period_minutes() / 60.0).collect();
    ctx.svg(
        &Plot::new("Response to a unit step in zeta", "hours", "on-fraction deviation")
            .add("base period", &t_h, &y1, Mark::Line)
            .add(&format!("staggered, m = {m}"), &t_h, &ym, Mark::Line),
        "step_grid.svg",
    )?;

    let out = LtiOutput {
        dc_gain: sys.transfer_value(Complex64::new(1.0, 0.0))?.re,
        kappa2: ctx.stats.kappa2,
        minimum_phase: zp.minimum_phase,
        stable: zp.stable,
        perron_canceled: zp.perron_canceled(),
        perron_residue: zp.perron_residue,
        max_zero_modulus: zp.max_zero_modulus(),
        relative_degree: zp.relative_degree,
        zeros: zp.zeros.len(),
        filter_zeros,
        warning: zp.warning.clone(),
    };
    write_summary(&ctx, &out.summary())?;
    Ok(out)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub zeta: Vec<f64>,
    pub y: Vec<f64>,
    /// First tick after the step at which the output moved.
    pub response_delay_ticks: Option<usize>,
    pub grid_period_seconds: f64,
}

impl SimulateOutput {
    pub fn summary(&self) -> Summary {
        let d = self.response_delay_ticks;
        vec![
            kv("ticks", self.y.len()),
            kf("grid_period_seconds", self.grid_period_seconds),
            kv("response_delay_ticks", d.map_or("none".into(), |d| d.to_string())),
            kv("response_delay_seconds", d.map_or("none".into(), |d| (d as f64 * self.grid_period_seconds).to_string())),
            kf("final_y", self.y.last().copied().unwrap_or(f64::NAN)),
        ]
    }
}

/// Ticks from the step until the output first departs from its pre-step
/// value by more than `threshold`.
pub fn response_delay(y: &[f64], step_at: usize, threshold: f64) -> Option<usize> {
    let before = *y.get(step_at)?;
    y.iter().skip(step_at + 1).position(|v| (v - before).abs() > threshold).map(|k| k + 1)
}

/// Open-loop run: `zeta = 0` before `sim.step_at`, `sim.step_zeta` after.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateOutput, CliError> {
    let ctx = Context::new(cfg)?;
    ctx.prepare_dir()?;
    let n = cfg.horizon_ticks();
    let step_at = cfg.sim.step_at;
    let dt = cfg.grid_period_seconds();
    let mut zeta = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut extra: Vec<Vec<f64>> = Vec::new();
    let mut extra_names: Vec<String> = Vec::new();
    let dump = cfg.sim.dump_states;
    match cfg.sim.backend {
        BackendKind::Agents => {
            let mut b = AgentBackend::new(ctx.model.clone(), ctx.population()?);
            if dump {
                extra_names = (0..cfg.sim.classes).map(|c| format!("y_class_{c}")).collect();
            }
            for t in 0..n {
                let z = if t >= step_at { cfg.sim.step_zeta } else { 0.0 };
                y.push(b.output());
                if dump {
                    extra.push(b.population.class_outputs(&ctx.model));
                }
                zeta.push(z);
                b.advance(z)?;
            }
            if dump {
                let p = &b.population;
                csvio::write_snapshot(&ctx.out("snapshot.csv"), p.seed(), p.t(), p.classes(), &p.states())?;
            }
        }
        BackendKind::MeanField => {
            let mut b = MeanFieldBackend::new(ctx.model.clone(), &ctx.initial_distribution(), cfg.sim.classes)?;
            if dump {
                extra_names = ctx.model.labels().iter().map(|l| format!("mu_{l}")).collect();
            }
            for t in 0..n {
                let z = if t >= step_at { cfg.sim.step_zeta } else { 0.0 };
                y.push(b.output());
                if dump {
                    extra.push(b.state.distribution());
                }
                zeta.push(z);
                b.advance(z)?;
            }
        }
        BackendKind::Lti => {
            let mut b = ctx.backend(BackendKind::Lti)?;
            for t in 0..n {
                let z = if t >= step_at { cfg.sim.step_zeta } else { 0.0 };
                y.push(b.output());
                zeta.push(z);
                b.advance(z)?;
            }
        }
    }
    csvio::write_open_loop(&ctx.out("simulate.csv"), dt, &zeta, &y, &extra_names, &extra)?;
    let t_h: Vec<f64> = (0..n).map(|t| t as f64 * dt / 3600.0).collect();
    ctx.svg(
        &Plot::new("Open-loop response", "hours", "on-fraction").add("y", &t_h, &y, Mark::Line),
        "simulate.svg",
    )?;
    let threshold = match cfg.sim.backend {
        BackendKind::Agents => 3.0 / (cfg.sim.agents as f64).sqrt(),
        _ => 1e-12,
    };
    let out = SimulateOutput { response_delay_ticks: response_delay(&y, step_at, threshold), zeta, y, grid_period_seconds: dt };
    write_summary(&ctx, &out.summary())?;
    Ok(out)
}

// ---------------------------------------------------------------- track

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub trajectory: Trajectory,
    pub nrms: f64,
    pub envelope: Option<CapacityEnvelope>,
    pub windup: Option<WindupReport>,
    pub on_hours: Option<Vec<f64>>,
    pub guarded_fraction: Option<f64>,
    pub mw_scale: f64,
}

impl TrackOutput {
    pub fn summary(&self) -> Summary {
        let mut s = vec![kv("ticks", self.trajectory.len()), kf("nrms", self.nrms)];
        if let Some(env) = &self.envelope {
            s.push(kf("envelope_plus", env.plus_demand));
            s.push(kf("envelope_minus", env.minus_supply));
            s.push(kf("envelope_plus_mw", env.plus_demand * self.mw_scale));
            s.push(kf("envelope_minus_mw", env.minus_supply * self.mw_scale));
        }
        if let Some(w) = &self.windup {
            s.push(kv("over_capacity_episodes", w.episodes));
            s.push(kf("baseline_rms", w.baseline_rms));
            s.push(kf("post_episode_max_abs_error", w.post_max));
            s.push(kf("windup_ratio", w.ratio));
            s.push(kv("windup_flag", w.ratio > 10.0));
        }
        if let Some(h) = &self.on_hours {
            let v: Vec<f64> = h.iter().cloned().filter(|x| x.is_finite()).collect();
            if !v.is_empty() {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
                s.push(kf("on_hours_mean", mean));
                s.push(kf("on_hours_sd", sd));
            }
        }
        if let Some(g) = self.guarded_fraction {
            s.push(kf("guarded_fraction", g));
        }
        s
    }
}

pub fn cmd_track(cfg: &RunConfig) -> Result<TrackOutput, CliError> {
    let ctx = Context::new(cfg)?;
    ctx.prepare_dir()?;
    let env = ctx.envelope()?;
    let r = ctx.reference(env.as_ref())?;
    let mut ctrl = PiController::new(cfg.control.kp, cfg.control.ki);
    let truncation = if cfg.control.truncate { env.as_ref() } else { None };
    let dt = cfg.grid_period_seconds();
    let (traj, on_hours, guarded) = match cfg.sim.backend {
        BackendKind::Agents => {
            let mut b = AgentBackend::new(ctx.model.clone(), ctx.population()?);
            let traj = run_closed_loop(&mut b, ctx.y0(), &r, &mut ctrl, truncation)?;
            let p = &b.population;
            if cfg.sim.dump_states {
                csvio::write_snapshot(&ctx.out("snapshot.csv"), p.seed(), p.t(), p.classes(), &p.states())?;
            }
            let g = cfg.guard.enabled.then(|| p.guarded_fraction());
            (traj, p.on_hours_per_day(), g)
        }
        kind => {
            let mut b = ctx.backend(kind)?;
            (run_closed_loop(&mut b, ctx.y0(), &r, &mut ctrl, truncation)?, None, None)
        }
    };
    csvio::write_trajectory(&ctx.out("track.csv"), &traj, dt)?;
    let nrms = traj.nrms();
    let windup = match &env {
        Some(e) if traj.r.iter().any(|&x| !e.contains(x)) => {
            windup_report(&traj, e, cfg.control.windup_window, cfg.control.windup_burn_in).ok()
        }
        _ => None,
    };
    let t_h: Vec<f64> = (0..traj.len()).map(|t| t as f64 * dt / 3600.0).collect();
    let dev: Vec<f64> = traj.y.iter().map(|y| y - ctx.y0()).collect();
    let mut plot = Plot::new("Closed-loop tracking", "hours", "on-fraction deviation")
        .add("reference", &t_h, &traj.r, Mark::Line)
        .add("output", &t_h, &dev, Mark::Line);
    if truncation.is_some() {
        plot = plot.add("truncated reference", &t_h, &traj.r_truncated, Mark::Dashed);
    }
    ctx.svg(&plot, "track.svg")?;
    ctx.svg(&Plot::new("Broadcast tilt", "hours", "zeta").add("zeta", &t_h, &traj.zeta, Mark::Line), "zeta.svg")?;
    if let Some(h) = &on_hours {
        let vals: Vec<f64> = h.iter().cloned().filter(|x| x.is_finite()).collect();
        let hist = csvio::histogram(&vals, 0.0, 24.0, 48);
        csvio::write_histogram(&ctx.out("on_hours.csv"), &hist)?;
        let mut edges: Vec<f64> = hist.iter().map(|b| b.0).collect();
        edges.push(24.0);
        let mut counts: Vec<f64> = hist.iter().map(|b| b.2 as f64).collect();
        counts.push(0.0);
        ctx.svg(
            &Plot::new("Hours on per day, per agent", "hours", "agents").add("agents", &edges, &counts, Mark::Bars),
            "on_hours.svg",
        )?;
    }
    let out = TrackOutput {
        trajectory: traj,
        nrms,
        envelope: env,
        windup,
        on_hours,
        guarded_fraction: guarded,
        mw_scale: cfg.reference.mw_pools as f64 * cfg.reference.p_bar_kw / 1000.0,
    };
    write_summary(&ctx, &out.summary())?;
    Ok(out)
}

// ---------------------------------------------------------------- capacity

#[derive(Debug, Clone)]
pub struct CapacityOutput {
    pub envelope: CapacityEnvelope,
    pub y0: f64,
    pub mw_scale: f64,
}

impl CapacityOutput {
    pub fn summary(&self) -> Summary {
        let e = &self.envelope;
        vec![
            kf("y0", self.y0),
            kf("plus_demand", e.plus_demand),
            kf("minus_supply", e.minus_supply),
            kf("plus_demand_mw", e.plus_demand * self.mw_scale),
            kf("minus_supply_mw", e.minus_supply * self.mw_scale),
            kf("ratio", e.plus_demand / e.minus_supply),
        ]
    }
}

pub fn cmd_capacity(cfg: &RunConfig) -> Result<CapacityOutput, CliError> {
    let ctx = Context::new(cfg)?;
    ctx.prepare_dir()?;
    let envelope = ctx.estimate_envelope()?;
    let mw_scale = cfg.reference.mw_pools as f64 * cfg.reference.p_bar_kw / 1000.0;
    csvio::write_scalars(
        &ctx.out("capacity.csv"),
        &[
            ("plus_demand", envelope.plus_demand),
            ("minus_supply", envelope.minus_supply),
            ("plus_demand_mw", envelope.plus_demand * mw_scale),
            ("minus_supply_mw", envelope.minus_supply * mw_scale),
        ],
    )?;
    let out = CapacityOutput { envelope, y0: ctx.y0(), mw_scale };
    write_summary(&ctx, &out.summary())?;
    Ok(out)
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub checks: Vec<OracleCheck>,
}

impl VerifyOutput {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn summary(&self) -> Summary {
        let mut quantities: Vec<&str> = self.checks.iter().map(|c| c.quantity.as_str()).collect();
        quantities.sort_unstable();
        quantities.dedup();
        let mut s = vec![kv("checks", self.checks.len()), kv("failures", self.failures())];
        for q in quantities {
            let (n, ok) = self.checks.iter().filter(|c| c.quantity == q).fold((0, 0), |(n, ok), c| (n + 1, ok + c.pass as usize));
            s.push(kv(q, format!("{ok}/{n} pass")));
        }
        s
    }
}

/// Oracle suite. Returns the report even when checks fail; the binary maps
/// failures to exit code 3.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyOutput, CliError> {
    let ctx = Context::new(cfg)?;
    ctx.prepare_dir()?;
    let v = &cfg.verify;
    if v.fixtures.is_empty() {
        return Err(CliError::Validation("verify.fixtures: empty fixture list".into()));
    }
    let all = fixtures();
    let mut chosen = Vec::new();
    for name in &v.fixtures {
        let f = all.iter().find(|f| &f.name == name).ok_or_else(|| {
            let known: Vec<&str> = all.iter().map(|f| f.name.as_str()).collect();
            CliError::Validation(format!("verify.fixtures: unknown fixture {name:?} (known: {})", known.join(", ")))
        })?;
        chosen.push(f.clone());
    }
    let mut checks = run_enumeration_suite(&chosen, &v.zetas, &v.horizons)?;
    if v.mc_cycles > 0 && !v.mc_zetas.is_empty() {
        checks.extend(run_mc_suite(&ctx.model, "pool", &v.mc_zetas, v.mc_cycles, v.mc_seed)?);
    }
    csvio::write_oracle_report(&ctx.out("oracle_report.csv"), &checks)?;
    let out = VerifyOutput { checks };
    write_summary(&ctx, &out.summary())?;
    Ok(out)
}

fn write_summary(ctx: &Context, lines: &Summary) -> Result<(), CliError> {
    let text: String = lines.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
    fs::write(ctx.out("summary.txt"), text)?;
    Ok(())
}

/// Convenience for tests and scripts: a config rooted at `dir`.
pub fn config_in(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output.dir = dir.to_path_buf();
    cfg
}
