//! Run configuration: a `key = value` file with sections, every key also
//! settable from the command line. Flags win over the file.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use mfdr_core::{LoadModel, SwitchingCurve};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Bins per mode.
    pub bins: usize,
    pub gamma: f64,
    /// Target fraction of time running.
    pub alpha: f64,
    pub period_minutes: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { bins: 48, gamma: 6.0, alpha: 0.5, period_minutes: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub zeta_min: f64,
    pub zeta_max: f64,
    pub points: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { zeta_min: -6.0, zeta_max: 6.0, points: 121 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    MeanField,
    Agents,
    Lti,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Stationary,
    AllOff,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub backend: BackendKind,
    pub agents: usize,
    /// Staggered classes per base period.
    pub classes: usize,
    pub seed: u64,
    pub days: f64,
    pub init: InitKind,
    /// Tilt applied by `simulate` from tick `step_at` on.
    pub step_zeta: f64,
    pub step_at: usize,
    /// Write the full distribution (mean field) or per-class outputs (agents).
    pub dump_states: bool,
    /// Trailing window of the per-agent on-hours statistic.
    pub on_hours_days: u32,
    /// Start the agent population from a snapshot file.
    pub restart: Option<PathBuf>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            backend: BackendKind::MeanField,
            agents: 100_000,
            classes: 12,
            seed: 1,
            days: 4.0,
            init: InitKind::Stationary,
            step_zeta: 0.1,
            step_at: 24,
            dump_states: false,
            on_hours_days: 1,
            restart: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub kp: f64,
    pub ki: f64,
    /// Clip the reference to the envelope.
    pub truncate: bool,
    /// Envelope override in on-fraction units; both or neither.
    pub envelope_plus: Option<f64>,
    pub envelope_minus: Option<f64>,
    /// Estimate the envelope before a tracking run.
    pub estimate_capacity: bool,
    pub capacity_tolerance: f64,
    pub capacity_iterations: usize,
    /// Plant used for the capacity bisection.
    pub capacity_backend: BackendKind,
    /// Window for the windup report, in grid ticks.
    pub windup_window: usize,
    /// Ticks skipped before the baseline error of the windup report.
    pub windup_burn_in: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            kp: 20.0,
            ki: 4.0,
            truncate: true,
            envelope_plus: None,
            envelope_minus: None,
            estimate_capacity: false,
            capacity_tolerance: 0.05,
            capacity_iterations: 12,
            capacity_backend: BackendKind::MeanField,
            windup_window: 50,
            windup_burn_in: 48,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSource {
    Synth,
    Csv,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Peaks reach `level` times the envelope on each side.
    Envelope,
    /// Affine map of the signal range onto `level` times the envelope.
    Full,
    /// Values are MW at `mw_pools` loads of `p_bar_kw`.
    Mw,
    /// Values are on-fraction deviations already.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub source: ReferenceSource,
    pub path: Option<PathBuf>,
    pub band_lo: f64,
    pub band_hi: f64,
    /// RMS of the synthesized signal in MW (before scaling).
    pub rms_mw: f64,
    pub seed: u64,
    /// Zero disables the low-pass stage.
    pub lowpass_cph: f64,
    pub scaling: Scaling,
    pub level: f64,
    pub mw_pools: usize,
    pub p_bar_kw: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection {
            source: ReferenceSource::Synth,
            path: None,
            band_lo: 0.01,
            band_hi: 0.06,
            rms_mw: 200.0,
            seed: 7,
            lowpass_cph: 0.0,
            scaling: Scaling::Envelope,
            level: 0.6,
            mw_pools: 1_000_000,
            p_bar_kw: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardSection {
    pub enabled: bool,
    pub window_days: u32,
    /// Band of on-hours per day outside of which an agent reverts to the
    /// nominal policy.
    pub lo_hours: f64,
    pub hi_hours: f64,
}

impl Default for GuardSection {
    fn default() -> Self {
        GuardSection { enabled: false, window_days: 1, lo_hours: 8.0, hi_hours: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub fixtures: Vec<String>,
    pub zetas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub mc_cycles: usize,
    pub mc_zetas: Vec<f64>,
    pub mc_seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            fixtures: vec!["iid2".into(), "sticky2".into(), "ring3".into(), "pool4".into()],
            zetas: vec![-2.0, -1.0, 1.0, 2.0],
            horizons: vec![4, 8, 12],
            mc_cycles: 20_000,
            mc_zetas: vec![0.0, 1.0],
            mc_seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub svg: bool,
    /// Dump the full twisted matrix at every `dump_every`-th sweep point
    /// (zero disables).
    pub dump_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), svg: true, dump_every: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub sweep: SweepSection,
    pub sim: SimSection,
    pub control: ControlSection,
    pub reference: ReferenceSection,
    pub guard: GuardSection,
    pub verify: VerifySection,
    pub output: OutputSection,
}

/// Command-line mirror of every configuration key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Configuration file (`key = value` lines under `[section]` headers).
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, help_heading = "model")]
    pub bins: Option<usize>,
    #[arg(long, help_heading = "model")]
    pub gamma: Option<f64>,
    #[arg(long, help_heading = "model")]
    pub alpha: Option<f64>,
    #[arg(long, help_heading = "model")]
    pub period_minutes: Option<f64>,

    #[arg(long, allow_hyphen_values = true, help_heading = "sweep")]
    pub zeta_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true, help_heading = "sweep")]
    pub zeta_max: Option<f64>,
    #[arg(long, help_heading = "sweep")]
    pub points: Option<usize>,

    #[arg(long, value_enum, help_heading = "sim")]
    pub backend: Option<BackendKind>,
    #[arg(long, short = 'n', help_heading = "sim")]
    pub agents: Option<usize>,
    #[arg(long, short = 'm', help_heading = "sim")]
    pub classes: Option<usize>,
    #[arg(long, help_heading = "sim")]
    pub seed: Option<u64>,
    #[arg(long, help_heading = "sim")]
    pub days: Option<f64>,
    #[arg(long, value_enum, help_heading = "sim")]
    pub init: Option<InitKind>,
    #[arg(long, allow_hyphen_values = true, help_heading = "sim")]
    pub step_zeta: Option<f64>,
    #[arg(long, help_heading = "sim")]
    pub step_at: Option<usize>,
    #[arg(long, help_heading = "sim")]
    pub dump_states: Option<bool>,
    #[arg(long, help_heading = "sim")]
    pub on_hours_days: Option<u32>,
    #[arg(long, help_heading = "sim")]
    pub restart: Option<PathBuf>,

    #[arg(long, help_heading = "control")]
    pub kp: Option<f64>,
    #[arg(long, help_heading = "control")]
    pub ki: Option<f64>,
    #[arg(long, help_heading = "control")]
    pub truncate: Option<bool>,
    #[arg(long, help_heading = "control")]
    pub envelope_plus: Option<f64>,
    #[arg(long, help_heading = "control")]
    pub envelope_minus: Option<f64>,
    #[arg(long, help_heading = "control")]
    pub estimate_capacity: Option<bool>,
    #[arg(long, help_heading = "control")]
    pub capacity_tolerance: Option<f64>,
    #[arg(long, help_heading = "control")]
    pub capacity_iterations: Option<usize>,
    #[arg(long, value_enum, help_heading = "control")]
    pub capacity_backend: Option<BackendKind>,
    #[arg(long, help_heading = "control")]
    pub windup_window: Option<usize>,
    #[arg(long, help_heading = "control")]
    pub windup_burn_in: Option<usize>,

    #[arg(long = "reference", value_enum, help_heading = "reference")]
    pub source: Option<ReferenceSource>,
    #[arg(long = "reference-path", help_heading = "reference")]
    pub path: Option<PathBuf>,
    #[arg(long, help_heading = "reference")]
    pub band_lo: Option<f64>,
    #[arg(long, help_heading = "reference")]
    pub band_hi: Option<f64>,
    #[arg(long, help_heading = "reference")]
    pub rms_mw: Option<f64>,
    #[arg(long = "reference-seed", help_heading = "reference")]
    pub reference_seed: Option<u64>,
    #[arg(long, help_heading = "reference")]
    pub lowpass_cph: Option<f64>,
    #[arg(long, value_enum, help_heading = "reference")]
    pub scaling: Option<Scaling>,
    #[arg(long, help_heading = "reference")]
    pub level: Option<f64>,
    #[arg(long, help_heading = "reference")]
    pub mw_pools: Option<usize>,
    #[arg(long, help_heading = "reference")]
    pub p_bar_kw: Option<f64>,

    #[arg(long = "guard", help_heading = "guard")]
    pub guard_enabled: Option<bool>,
    #[arg(long = "guard-window-days", help_heading = "guard")]
    pub guard_window_days: Option<u32>,
    #[arg(long = "guard-lo-hours", help_heading = "guard")]
    pub guard_lo_hours: Option<f64>,
    #[arg(long = "guard-hi-hours", help_heading = "guard")]
    pub guard_hi_hours: Option<f64>,

    #[arg(long, value_delimiter = ',', help_heading = "verify")]
    pub fixtures: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, help_heading = "verify")]
    pub zetas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', help_heading = "verify")]
    pub horizons: Option<Vec<usize>>,
    #[arg(long, help_heading = "verify")]
    pub mc_cycles: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, help_heading = "verify")]
    pub mc_zetas: Option<Vec<f64>>,
    #[arg(long, help_heading = "verify")]
    pub mc_seed: Option<u64>,

    #[arg(long = "out", short = 'o', help_heading = "output")]
    pub dir: Option<PathBuf>,
    #[arg(long, help_heading = "output")]
    pub svg: Option<bool>,
    #[arg(long, help_heading = "output")]
    pub dump_every: Option<usize>,
}

macro_rules! apply {
    ($flags:expr, $cfg:expr, $( $flag:ident => $($field:ident).+ ),* $(,)?) => {
        $( if let Some(v) = $flags.$flag.clone() { $cfg.$($field).+ = v.into(); } )*
    };
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// File (if any) overlaid with flags, then validated.
    pub fn resolve(flags: &ConfigFlags) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_flags(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_flags(&mut self, f: &ConfigFlags) {
        apply!(f, self,
            bins => model.bins, gamma => model.gamma, alpha => model.alpha,
            period_minutes => model.period_minutes,
            zeta_min => sweep.zeta_min, zeta_max => sweep.zeta_max, points => sweep.points,
            backend => sim.backend, agents => sim.agents, classes => sim.classes, seed => sim.seed,
            days => sim.days, init => sim.init, step_zeta => sim.step_zeta, step_at => sim.step_at,
            dump_states => sim.dump_states, on_hours_days => sim.on_hours_days,
            kp => control.kp, ki => control.ki, truncate => control.truncate,
            estimate_capacity => control.estimate_capacity,
            capacity_tolerance => control.capacity_tolerance,
            capacity_iterations => control.capacity_iterations,
            capacity_backend => control.capacity_backend,
            windup_window => control.windup_window, windup_burn_in => control.windup_burn_in,
            source => reference.source, band_lo => reference.band_lo, band_hi => reference.band_hi,
            rms_mw => reference.rms_mw, reference_seed => reference.seed,
            lowpass_cph => reference.lowpass_cph, scaling => reference.scaling,
            level => reference.level, mw_pools => reference.mw_pools, p_bar_kw => reference.p_bar_kw,
            guard_enabled => guard.enabled, guard_window_days => guard.window_days,
            guard_lo_hours => guard.lo_hours, guard_hi_hours => guard.hi_hours,
            fixtures => verify.fixtures, zetas => verify.zetas, horizons => verify.horizons,
            mc_cycles => verify.mc_cycles, mc_zetas => verify.mc_zetas, mc_seed => verify.mc_seed,
            dir => output.dir, svg => output.svg, dump_every => output.dump_every,
        );
        if let Some(v) = f.envelope_plus {
            self.control.envelope_plus = Some(v);
        }
        if let Some(v) = f.envelope_minus {
            self.control.envelope_minus = Some(v);
        }
        if let Some(p) = &f.restart {
            self.sim.restart = Some(p.clone());
        }
        if let Some(p) = &f.path {
            self.reference.path = Some(p.clone());
        }
    }

    /// Checks every field against the preconditions of the code that uses it.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Validation(format!("{field}: {msg}")));
        let m = &self.model;
        if let Err(e) = SwitchingCurve::new(m.gamma, m.alpha, m.bins) {
            let field = if !(m.gamma > 1.0) || !m.gamma.is_finite() {
                "model.gamma"
            } else if !(m.alpha > 0.0 && m.alpha < 1.0) {
                "model.alpha"
            } else {
                "model.bins"
            };
            return bad(field, e.to_string());
        }
        if !(m.period_minutes > 0.0 && m.period_minutes.is_finite()) {
            return bad("model.period_minutes", format!("{} must be positive", m.period_minutes));
        }
        let s = &self.sweep;
        if !(s.zeta_min.is_finite() && s.zeta_max.is_finite() && s.zeta_min < s.zeta_max) {
            return bad("sweep.zeta_min", format!("need zeta_min < zeta_max, got [{}, {}]", s.zeta_min, s.zeta_max));
        }
        if s.zeta_min.abs().max(s.zeta_max.abs()) > mfdr_core::spectral::ZETA_MAX {
            return bad("sweep.zeta_max", format!("|zeta| must not exceed {}", mfdr_core::spectral::ZETA_MAX));
        }
        if s.points < 2 {
            return bad("sweep.points", format!("{} must be at least 2", s.points));
        }
        let sim = &self.sim;
        if sim.agents == 0 {
            return bad("sim.agents", "must be positive".into());
        }
        if sim.classes == 0 {
            return bad("sim.classes", "must be positive".into());
        }
        if !(sim.days > 0.0 && sim.days.is_finite()) {
            return bad("sim.days", format!("{} must be positive", sim.days));
        }
        if !sim.step_zeta.is_finite() || sim.step_zeta.abs() > mfdr_core::spectral::ZETA_MAX {
            return bad("sim.step_zeta", format!("{} outside the tilt guard", sim.step_zeta));
        }
        if sim.on_hours_days == 0 {
            return bad("sim.on_hours_days", "must be positive".into());
        }
        let c = &self.control;
        if !(c.kp.is_finite() && c.ki.is_finite()) {
            return bad("control.kp", "gains must be finite".into());
        }
        match (c.envelope_plus, c.envelope_minus) {
            (Some(p), Some(n)) => {
                if !(p >= 0.0 && n >= 0.0 && p.is_finite() && n.is_finite()) {
                    return bad("control.envelope_plus", format!("envelope ({p}, {n}) must be nonnegative"));
                }
            }
            (None, None) => {}
            _ => return bad("control.envelope_minus", "set both envelope sides or neither".into()),
        }
        if !(c.capacity_tolerance > 0.0 && c.capacity_tolerance < 1.0) {
            return bad("control.capacity_tolerance", format!("{} must lie in (0, 1)", c.capacity_tolerance));
        }
        if c.capacity_iterations == 0 {
            return bad("control.capacity_iterations", "must be positive".into());
        }
        let r = &self.reference;
        if r.source == ReferenceSource::Csv && r.path.is_none() {
            return bad("reference.path", "required when reference.source = \"csv\"".into());
        }
        if r.source == ReferenceSource::Synth && !(r.band_lo >= 0.0 && r.band_lo < r.band_hi) {
            return bad("reference.band_lo", format!("need 0 <= band_lo < band_hi, got [{}, {}]", r.band_lo, r.band_hi));
        }
        if !(r.rms_mw >= 0.0) {
            return bad("reference.rms_mw", format!("{} must be nonnegative", r.rms_mw));
        }
        if !(r.lowpass_cph >= 0.0) {
            return bad("reference.lowpass_cph", format!("{} must be nonnegative", r.lowpass_cph));
        }
        if !(r.level > 0.0 && r.level.is_finite()) {
            return bad("reference.level", format!("{} must be positive", r.level));
        }
        if r.mw_pools == 0 || !(r.p_bar_kw > 0.0) {
            return bad("reference.mw_pools", "pool count and p_bar_kw must be positive".into());
        }
        let g = &self.guard;
        if g.enabled && (g.window_days == 0 || !(g.lo_hours >= 0.0) || !(g.hi_hours <= 24.0)) {
            return bad("guard.lo_hours", format!("band [{}, {}] h/day over {} days is invalid", g.lo_hours, g.hi_hours, g.window_days));
        }
        let v = &self.verify;
        if v.zetas.iter().any(|z| !z.is_finite()) {
            return bad("verify.zetas", "must be finite".into());
        }
        if v.horizons.iter().any(|&h| h == 0) {
            return bad("verify.horizons", "must be positive".into());
        }
        if v.mc_cycles != 0 && v.mc_cycles < 64 {
            return bad("verify.mc_cycles", format!("{} is below the 64 batches needed for error bars", v.mc_cycles));
        }
        Ok(())
    }

    pub fn curve(&self) -> SwitchingCurve {
        SwitchingCurve { gamma: self.model.gamma, alpha: self.model.alpha, bins: self.model.bins }
    }

    pub fn load_model(&self) -> Result<LoadModel, CliError> {
        Ok(LoadModel::pool(self.curve())?.with_sample_period(self.model.period_minutes)?)
    }

    /// Grid ticks per day.
    pub fn ticks_per_day(&self) -> usize {
        (24.0 * 60.0 / self.model.period_minutes * self.sim.classes as f64).round() as usize
    }

    pub fn grid_period_seconds(&self) -> f64 {
        self.model.period_minutes * 60.0 / self.sim.classes as f64
    }

    pub fn horizon_ticks(&self) -> usize {
        (self.sim.days * self.ticks_per_day() as f64).round() as usize
    }

    pub fn envelope_override(&self) -> Option<(f64, f64)> {
        self.control.envelope_plus.zip(self.control.envelope_minus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_defaults() {
        let cfg = RunConfig::parse_str("[model]\nalpha = 0.3333333333333333\n[sim]\nbackend = \"agents\"\nagents = 1000\n").unwrap();
        assert_eq!(cfg.sim.backend, BackendKind::Agents);
        assert_eq!(cfg.sim.agents, 1000);
        assert_eq!(cfg.model.bins, 48);
        assert_eq!(cfg.control.kp, 20.0);
    }

    #[test]
    fn unknown_key_names_field() {
        let err = RunConfig::parse_str("[model]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::parse_str("[control]\nkp = 5\n").unwrap();
        let flags = ConfigFlags { kp: Some(7.0), alpha: Some(0.25), ..Default::default() };
        cfg.apply_flags(&flags);
        assert_eq!(cfg.control.kp, 7.0);
        assert_eq!(cfg.model.alpha, 0.25);
    }

    #[test]
    fn validation_names_field() {
        let mut cfg = RunConfig::default();
        cfg.model.alpha = 1.5;
        assert!(cfg.validate().unwrap_err().to_string().starts_with("model.alpha"));
        let mut cfg = RunConfig::default();
        cfg.control.envelope_plus = Some(0.3);
        assert!(cfg.validate().unwrap_err().to_string().starts_with("control.envelope_minus"));
    }
}
