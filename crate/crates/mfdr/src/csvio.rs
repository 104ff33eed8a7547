//! CSV readers and writers. Floats are written in shortest round-trip form,
//! so files are byte-identical across runs and parse back exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;

use mfdr_core::control::Trajectory;
use mfdr_core::linalg::Matrix;
use mfdr_core::lti::{BodePoint, ZeroPole};
use mfdr_core::oracle::OracleCheck;
use mfdr_core::signal::{SignalSeries, Units};
use mfdr_core::{LoadModel, NominalStats, SwitchingCurve};

use crate::error::CliError;

pub type Writer = csv::Writer<BufWriter<File>>;

pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 {
        // Avoid "-0".
        "0".to_string()
    } else if (1e-5..1e15).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn create(path: &Path) -> Result<Writer, CliError> {
    let f = File::create(path).map_err(|e| CliError::Validation(format!("cannot create {}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn row<I: IntoIterator<Item = String>>(w: &mut Writer, fields: I) -> Result<(), CliError> {
    w.write_record(fields.into_iter().collect::<Vec<_>>())?;
    Ok(())
}

fn header(w: &mut Writer, names: &[&str]) -> Result<(), CliError> {
    w.write_record(names)?;
    Ok(())
}

fn finish(mut w: Writer) -> Result<(), CliError> {
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, line: u64, what: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::Validation(format!("line {line}: cannot parse {what} {:?}", s.trim())))
}

/// Metadata lines `# key = value` at the top of a file.
fn split_header(text: &str) -> (BTreeMap<String, String>, usize) {
    let mut meta = BTreeMap::new();
    let mut skipped = 0;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
        skipped += 1;
    }
    (meta, skipped)
}

/// Model as a dense matrix: a metadata header, then one row per state with
/// its label, utility and transition probabilities.
pub fn write_model(path: &Path, model: &LoadModel) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    if let Some(c) = model.curve() {
        writeln!(f, "# bins = {}", c.bins)?;
        writeln!(f, "# gamma = {}", num(c.gamma))?;
        writeln!(f, "# alpha = {}", num(c.alpha))?;
    }
    writeln!(f, "# anchor = {}", model.anchor())?;
    writeln!(f, "# period_minutes = {}", num(model.sample_period_minutes()))?;
    let mut w = csv::Writer::from_writer(f);
    let labels: Vec<String> = model.labels().iter().map(|l| l.to_string()).collect();
    let mut head = vec!["label".to_string(), "utility".to_string()];
    head.extend(labels.iter().cloned());
    w.write_record(&head)?;
    let p = model.p0();
    for i in 0..model.dim() {
        let mut rec = vec![labels[i].clone(), num(model.utility()[i])];
        rec.extend(p.row(i).iter().map(|&x| num(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_model`]. Pool headers rebuild the pool model and
/// check that the stored matrix agrees with it.
pub fn read_model(path: &Path) -> Result<LoadModel, CliError> {
    let text = std::fs::read_to_string(path)?;
    let (meta, skipped) = split_header(&text);
    let get = |k: &str| -> Result<Option<f64>, CliError> {
        meta.get(k)
            .map(|v| v.parse::<f64>().map_err(|_| CliError::Validation(format!("{}: bad header value {k} = {v}", path.display()))))
            .transpose()
    };
    let anchor = get("anchor")?.ok_or_else(|| CliError::Validation(format!("{}: missing header anchor", path.display())))?;
    let period = get("period_minutes")?.unwrap_or(30.0);
    let body: String = text.lines().skip(skipped).collect::<Vec<_>>().join("\n");
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let mut utility = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + skipped as u64;
        if rec.len() < 3 {
            return Err(CliError::Validation(format!("line {line}: expected label, utility and probabilities")));
        }
        utility.push(parse_f64(&rec[1], line, "utility")?);
        let r = rec.iter().skip(2).map(|s| parse_f64(s, line, "probability")).collect::<Result<Vec<_>, _>>()?;
        rows.push(r);
    }
    let p0 = Matrix::from_rows(&rows)?;
    let custom = LoadModel::custom(p0, utility, anchor as usize)?.with_sample_period(period)?;
    match (get("bins")?, get("gamma")?, get("alpha")?) {
        (Some(b), Some(g), Some(a)) => {
            let pool = LoadModel::pool(SwitchingCurve::new(g, a, b as usize)?)?
                .with_sample_period(period)?
                .with_anchor(anchor as usize)?;
            let diff = pool.p0().max_abs_diff(custom.p0());
            if diff > 0.0 {
                return Err(CliError::Validation(format!(
                    "{}: matrix differs from the pool model named in the header by {diff:e}",
                    path.display()
                )));
            }
            Ok(pool)
        }
        _ => Ok(custom),
    }
}

/// Per-state table of the nominal statistics.
pub fn write_states(path: &Path, model: &LoadModel, stats: &NominalStats) -> Result<(), CliError> {
    let mut w = create(path)?;
    header(&mut w, &["state", "label", "utility", "pi0", "h", "s"])?;
    for (i, l) in model.labels().iter().enumerate() {
        row(&mut w, [
            i.to_string(),
            l.to_string(),
            num(model.utility()[i]),
            num(stats.pi0[i]),
            num(stats.h[i]),
            num(stats.s[i]),
        ])?;
    }
    finish(w)
}

pub fn write_scalars(path: &Path, values: &[(&str, f64)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    header(&mut w, &["name", "value"])?;
    for (k, v) in values {
        row(&mut w, [k.to_string(), num(*v)])?;
    }
    finish(w)
}

pub fn write_curve(path: &Path, curve: &SwitchingCurve) -> Result<(), CliError> {
    let mut w = create(path)?;
    header(&mut w, &["bin", "fraction_of_day", "p_switch_on", "p_switch_off"])?;
    for i in 1..=curve.bins {
        row(&mut w, [
            i.to_string(),
            num(i as f64 / curve.bins as f64),
            num(curve.p_switch_on(i)),
            num(curve.p_switch_off(i)),
        ])?;
    }
    finish(w)
}

/// One row of the tilt sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub zeta: f64,
    pub lambda: f64,
    pub eta_star: f64,
    pub on_fraction: f64,
    pub taylor_eta: f64,
    pub taylor_on_fraction: f64,
    pub h_span: f64,
    pub iterations: usize,
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut w = create(path)?;
    header(&mut w, &[
        "zeta",
        "lambda",
        "eta_star",
        "on_fraction",
        "taylor_eta",
        "taylor_on_fraction",
        "h_span",
        "iterations",
    ])?;
    for r in rows {
        row(&mut w, [
            num(r.zeta),
            num(r.lambda),
            num(r.eta_star),
            num(r.on_fraction),
            num(r.taylor_eta),
            num(r.taylor_on_fraction),
            num(r.h_span),
            r.iterations.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_matrix(path: &Path, labels: &[String], m: &Matrix) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut head = vec!["from".to_string()];
    head.extend(labels.iter().cloned());
    w.write_record(&head)?;
    for (i, l) in labels.iter().enumerate() {
        let mut rec = vec![l.clone()];
        rec.extend(m.row(i).iter().map(|&x| num(x)));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Bode table: base-period response and, when given, the staggered one.
pub fn write_bode(path: &Path, base: &[BodePoint], grid: Option<&[BodePoint]>, period_minutes: f64) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut head = vec!["omega", "cycles_per_hour", "magnitude_db", "phase_deg"];
    if grid.is_some() {
        head.extend(["grid_magnitude_db", "grid_phase_deg"]);
    }
    header(&mut w, &head)?;
    for (k, p) in base.iter().enumerate() {
        let cph = p.omega / (2.0 * std::f64::consts::PI) * 60.0 / period_minutes;
        let mut rec = vec![num(p.omega), num(cph), num(p.magnitude_db), num(p.phase_deg)];
        if let Some(g) = grid {
            rec.push(num(g[k].magnitude_db));
            rec.push(num(g[k].phase_deg));
        }
        row(&mut w, rec)?;
    }
    finish(w)
}

pub fn write_zero_pole(path: &Path, zp: &ZeroPole, filter_zeros: &[Complex64]) -> Result<(), CliError> {
    let mut w = create(path)?;
    header(&mut w, &["kind", "re", "im", "modulus", "canceled", "residue"])?;
    let canceled = |z: &Complex64, pole: bool| {
        zp.canceled.iter().find(|c| if pole { c.pole == *z } else { c.zero == *z })
    };
    for p in &zp.poles {
        let c = canceled(p, true);
        row(&mut w, [
            "pole".into(),
            num(p.re),
            num(p.im),
            num(p.norm()),
            c.is_some().to_string(),
            c.map_or(String::new(), |c| num(c.residue)),
        ])?;
    }
    for z in &zp.zeros {
        row(&mut w, ["zero".into(), num(z.re), num(z.im), num(z.norm()), "false".into(), String::new()])?;
    }
    for c in &zp.canceled {
        row(&mut w, [
            "zero".into(),
            num(c.zero.re),
            num(c.zero.im),
            num(c.zero.norm()),
            "true".into(),
            num(c.residue),
        ])?;
    }
    for z in filter_zeros {
        row(&mut w, ["filter_zero".into(), num(z.re), num(z.im), num(z.norm()), "false".into(), String::new()])?;
    }
    finish(w)
}

/// Closed-loop trajectory with time stamps in seconds.
pub fn write_trajectory(path: &Path, traj: &Trajectory, period_seconds: f64) -> Result<(), CliError> {
    let mut w = create(path)?;
    header(&mut w, &["t", "r", "r_truncated", "zeta", "y", "e"])?;
    for k in 0..traj.len() {
        row(&mut w, [
            num(k as f64 * period_seconds),
            num(traj.r[k]),
            num(traj.r_truncated[k]),
            num(traj.zeta[k]),
            num(traj.y[k]),
            num(traj.e[k]),
        ])?;
    }
    finish(w)
}

/// Open-loop run: tilt, output and optional extra columns per tick.
pub fn write_open_loop(
    path: &Path,
    period_seconds: f64,
    zeta: &[f64],
    y: &[f64],
    extra_names: &[String],
    extra: &[Vec<f64>],
) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut head = vec!["t".to_string(), "zeta".to_string(), "y".to_string()];
    head.extend(extra_names.iter().cloned());
    w.write_record(&head)?;
    for k in 0..y.len() {
        let mut rec = vec![num(k as f64 * period_seconds), num(zeta[k]), num(y[k])];
        if let Some(e) = extra.get(k) {
            rec.extend(e.iter().map(|&x| num(x)));
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn write_oracle_report(path: &Path, checks: &[OracleCheck]) -> Result<(), CliError> {
    let mut w = create(path)?;
    header(&mut w, &["fixture", "zeta", "horizon", "quantity", "pipeline", "oracle", "tolerance", "pass"])?;
    for c in checks {
        row(&mut w, [
            c.fixture.clone(),
            num(c.zeta),
            c.horizon.to_string(),
            c.quantity.clone(),
            num(c.pipeline),
            num(c.oracle),
            num(c.tolerance),
            c.pass.to_string(),
        ])?;
    }
    finish(w)
}

/// Population snapshot: metadata header, then `agent,state`.
pub fn write_snapshot(path: &Path, seed: u64, t: u64, classes: usize, states: &[u16]) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# seed = {seed}")?;
    writeln!(f, "# t = {t}")?;
    writeln!(f, "# classes = {classes}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["agent", "state"])?;
    for (i, s) in states.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub seed: u64,
    pub t: u64,
    pub classes: usize,
    pub states: Vec<u16>,
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, CliError> {
    let text = std::fs::read_to_string(path)?;
    let (meta, skipped) = split_header(&text);
    let get = |k: &str| -> Result<u64, CliError> {
        meta.get(k)
            .and_then(|v| v.parse::<u64>().ok())
            .ok_or_else(|| CliError::Validation(format!("{}: missing or bad header {k}", path.display())))
    };
    let (seed, t, classes) = (get("seed")?, get("t")?, get("classes")? as usize);
    let body: String = text.lines().skip(skipped).collect::<Vec<_>>().join("\n");
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let mut states = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + skipped as u64;
        let agent: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| CliError::Validation(format!("line {line}: bad agent index")))?;
        if agent != k {
            return Err(CliError::Validation(format!("line {line}: agents must be listed in order (expected {k})")));
        }
        let s: u16 = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| CliError::Validation(format!("line {line}: bad state")))?;
        states.push(s);
    }
    Ok(Snapshot { seed, t, classes, states })
}

/// Two-column `(time_seconds, value)` signal. A non-numeric first row is
/// treated as a header.
pub fn load_signal(path: &Path, units: Units) -> Result<SignalSeries, CliError> {
    let f = File::open(path).map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_reader(f);
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Validation(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(CliError::Validation(format!("{}: line {line}: expected 2 columns, found {}", path.display(), rec.len())));
        }
        if k == 0 && rec[0].parse::<f64>().is_err() {
            continue;
        }
        let at = |e: CliError| CliError::Validation(format!("{}: {e}", path.display()));
        times.push(parse_f64(&rec[0], line, "time").map_err(at)?);
        values.push(parse_f64(&rec[1], line, "value").map_err(at)?);
    }
    if times.is_empty() {
        return Err(CliError::Validation(format!("{}: empty series", path.display())));
    }
    SignalSeries::from_timed(&times, &values, units).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_signal(path: &Path, s: &SignalSeries) -> Result<(), CliError> {
    let mut w = create(path)?;
    let unit = match s.units {
        Units::Mw => "mw",
        Units::OnFraction => "on_fraction",
    };
    header(&mut w, &["time_seconds", unit])?;
    for (k, v) in s.samples.iter().enumerate() {
        row(&mut w, [num(k as f64 * s.period_seconds), num(*v)])?;
    }
    finish(w)
}

/// Histogram over equal-width bins on `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v - lo) / width).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        counts[k] += 1;
    }
    counts.into_iter().enumerate().map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c)).collect()
}

pub fn write_histogram(path: &Path, hist: &[(f64, f64, usize)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    header(&mut w, &["lo_hours", "hi_hours", "agents"])?;
    for (lo, hi, c) in hist {
        row(&mut w, [num(*lo), num(*hi), c.to_string()])?;
    }
    finish(w)
}
