//! Uniformly sampled reference signals: synthesis of a band-limited
//! regulation surrogate, zero-phase low-pass conditioning, unit conversion.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    OnFraction,
    Mw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub samples: Vec<f64>,
    pub period_seconds: f64,
    pub units: Units,
}

/// Relative tolerance on sample spacing.
pub const SPACING_TOL: f64 = 1e-6;

impl SignalSeries {
    pub fn new(samples: Vec<f64>, period_seconds: f64, units: Units) -> Result<Self> {
        if !(period_seconds > 0.0) || !period_seconds.is_finite() {
            return Err(Error::arg(format!("sample period {period_seconds} s must be positive")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} is {}", samples[i])));
        }
        Ok(SignalSeries { samples, period_seconds, units })
    }

    /// Build from `(time, value)` pairs, requiring a uniform grid.
    pub fn from_timed(times: &[f64], values: &[f64], units: Units) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), found: values.len() });
        }
        if times.is_empty() {
            return Err(Error::arg("empty series"));
        }
        let period = if times.len() == 1 { 1.0 } else { times[1] - times[0] };
        if !(period > 0.0) {
            return Err(Error::arg(format!("time stamps must increase (step {period})")));
        }
        for (k, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if (step - period).abs() > SPACING_TOL * period {
                return Err(Error::arg(format!(
                    "non-uniform grid: step {step} after sample {k} differs from {period}"
                )));
            }
        }
        Self::new(values.to_vec(), period, units)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_hours(&self) -> f64 {
        self.samples.len() as f64 * self.period_seconds / 3600.0
    }

    pub fn rms(&self) -> f64 {
        crate::control::rms(&self.samples)
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.samples.iter().sum::<f64>() / self.samples.len() as f64
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SignalSeries {
        SignalSeries { samples: self.samples.iter().map(|&x| f(x)).collect(), ..self.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sample-and-hold onto a finer grid with `factor` samples per input sample.
    pub fn hold(&self, factor: usize) -> SignalSeries {
        let f = factor.max(1);
        let samples = self.samples.iter().flat_map(|&x| core::iter::repeat_n(x, f)).collect();
        SignalSeries { samples, period_seconds: self.period_seconds / f as f64, units: self.units }
    }
}

/// Nyquist frequency in cycles per hour.
pub fn nyquist_cph(period_seconds: f64) -> f64 {
    1800.0 / period_seconds
}

/// Sum of equal-amplitude, random-phase sinusoids at every DFT bin of the
/// record that lies in `[f_lo, f_hi]` cycles per hour, scaled to `rms_mw`.
/// Using exact bin frequencies keeps all energy inside the band and makes
/// the record zero-mean.
pub fn synth_regulation(
    duration_hours: f64,
    period_seconds: f64,
    seed: u64,
    band: (f64, f64),
    rms_mw: f64,
) -> Result<SignalSeries> {
    let (f_lo, f_hi) = band;
    if !(period_seconds > 0.0) || !(duration_hours > 0.0) {
        return Err(Error::arg("duration and sample period must be positive"));
    }
    if !(f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyquist_cph(period_seconds)) {
        return Err(Error::arg(format!(
            "band [{f_lo}, {f_hi}] cycles/hour must satisfy 0 <= lo < hi <= {}",
            nyquist_cph(period_seconds)
        )));
    }
    if !(rms_mw >= 0.0) {
        return Err(Error::arg(format!("rms {rms_mw} must be nonnegative")));
    }
    let n = libm::round(duration_hours * 3600.0 / period_seconds) as usize;
    if n < 4 {
        return Err(Error::arg("record shorter than four samples"));
    }
    let bin_cph = 3600.0 / (n as f64 * period_seconds);
    let k_lo = (libm::ceil(f_lo / bin_cph) as usize).max(1);
    let k_hi = (libm::floor(f_hi / bin_cph) as usize).min((n - 1) / 2);
    if k_lo > k_hi {
        return Err(Error::arg(format!("band [{f_lo}, {f_hi}] contains no frequency of a {duration_hours} h record")));
    }
    let mut samples = vec![0.0; n];
    if rms_mw == 0.0 {
        return SignalSeries::new(samples, period_seconds, Units::Mw);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in k_lo..=k_hi {
        let phase = 2.0 * PI * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64);
        let w = 2.0 * PI * k as f64 / n as f64;
        for (t, s) in samples.iter_mut().enumerate() {
            *s += libm::cos(w * t as f64 + phase);
        }
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    samples.iter_mut().for_each(|s| *s -= mean);
    let r = crate::control::rms(&samples);
    samples.iter_mut().for_each(|s| *s *= rms_mw / r);
    SignalSeries::new(samples, period_seconds, Units::Mw)
}

/// Forward-backward first-order low-pass with cutoff in cycles per hour.
/// Zero phase, unit DC gain.
pub fn lowpass(series: &SignalSeries, cutoff_cph: f64) -> Result<SignalSeries> {
    if !(cutoff_cph > 0.0 && cutoff_cph <= nyquist_cph(series.period_seconds)) {
        return Err(Error::arg(format!(
            "cutoff {cutoff_cph} cycles/hour must lie in (0, {}]",
            nyquist_cph(series.period_seconds)
        )));
    }
    let a = libm::exp(-2.0 * PI * cutoff_cph / 3600.0 * series.period_seconds);
    let mut y = series.samples.clone();
    let pass = |y: &mut [f64]| {
        let mut prev = match y.first() {
            Some(&v) => v,
            None => return,
        };
        for v in y.iter_mut() {
            prev = a * prev + (1.0 - a) * *v;
            *v = prev;
        }
    };
    pass(&mut y);
    y.reverse();
    pass(&mut y);
    y.reverse();
    Ok(SignalSeries { samples: y, ..series.clone() })
}

/// Amplitude gain of the forward-backward filter at `f_cph` (the squared
/// magnitude of one pass).
pub fn lowpass_gain(cutoff_cph: f64, period_seconds: f64, f_cph: f64) -> f64 {
    let a = libm::exp(-2.0 * PI * cutoff_cph / 3600.0 * period_seconds);
    let w = 2.0 * PI * f_cph / 3600.0 * period_seconds;
    let den = 1.0 - 2.0 * a * libm::cos(w) + a * a;
    (1.0 - a) * (1.0 - a) / den
}

/// MW to on-fraction for `n` loads of `p_bar_kw` each.
pub fn to_on_fraction(series: &SignalSeries, n: usize, p_bar_kw: f64) -> Result<SignalSeries> {
    if series.units != Units::Mw {
        return Err(Error::arg("series is not in MW"));
    }
    let scale = full_scale_mw(n, p_bar_kw)?;
    Ok(SignalSeries { units: Units::OnFraction, ..series.map(|x| x / scale) })
}

/// On-fraction to MW for `n` loads of `p_bar_kw` each.
pub fn to_mw(series: &SignalSeries, n: usize, p_bar_kw: f64) -> Result<SignalSeries> {
    if series.units != Units::OnFraction {
        return Err(Error::arg("series is not an on-fraction"));
    }
    let scale = full_scale_mw(n, p_bar_kw)?;
    Ok(SignalSeries { units: Units::Mw, ..series.map(|x| x * scale) })
}

fn full_scale_mw(n: usize, p_bar_kw: f64) -> Result<f64> {
    if n == 0 || !(p_bar_kw > 0.0) {
        return Err(Error::arg("population size and per-load power must be positive"));
    }
    Ok(n as f64 * p_bar_kw / 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        let s = SignalSeries::new(vec![500.0, 0.0, -125.0], 150.0, Units::Mw).unwrap();
        let f = to_on_fraction(&s, 1_000_000, 1.0).unwrap();
        assert_eq!(f.samples[0], 0.5);
        assert_eq!(f.samples[1], 0.0);
        let back = to_mw(&f, 1_000_000, 1.0).unwrap();
        for (a, b) in back.samples.iter().zip(&s.samples) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(to_mw(&s, 10, 1.0).is_err());
    }

    #[test]
    fn lowpass_constant_and_zero() {
        let s = SignalSeries::new(vec![3.5; 100], 150.0, Units::OnFraction).unwrap();
        let y = lowpass(&s, 0.5).unwrap();
        assert!(y.samples.iter().all(|v| (v - 3.5).abs() < 1e-12));
        let z = SignalSeries::new(vec![0.0; 10], 150.0, Units::OnFraction).unwrap();
        assert!(lowpass(&z, 0.5).unwrap().samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn synth_zero_rms() {
        let s = synth_regulation(24.0, 150.0, 1, (0.25, 2.0), 0.0).unwrap();
        assert!(s.samples.iter().all(|v| *v == 0.0));
        assert!(synth_regulation(24.0, 150.0, 1, (2.0, 1.0), 1.0).is_err());
        assert!(synth_regulation(24.0, 150.0, 1, (1.0, 20.0), 1.0).is_err());
    }

    #[test]
    fn timed_grid_checks() {
        assert!(SignalSeries::from_timed(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0], Units::Mw).is_ok());
        assert!(SignalSeries::from_timed(&[0.0, 1.0, 2.1], &[1.0, 2.0, 3.0], Units::Mw).is_err());
        assert!(SignalSeries::from_timed(&[], &[], Units::Mw).is_err());
    }
}
