//! Deterministic distribution flow `mu_{t+1} = mu_t P_check(zeta_t)`.
//!
//! With `m > 1` the population is split into `m` staggered classes; class
//! `t mod m` advances at grid tick `t` while the others hold, exactly like
//! the agent simulator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::load_model::LoadModel;
use crate::spectral::{Policy, PolicyCache};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct MeanField {
    classes: Vec<Vec<f64>>,
    t: u64,
    scratch: Vec<f64>,
}

impl MeanField {
    /// Every class starts from `mu0`.
    pub fn new(mu0: &[f64], m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::arg("number of classes must be at least 1"));
        }
        check_distribution(mu0)?;
        Ok(MeanField { classes: vec![mu0.to_vec(); m], t: 0, scratch: vec![0.0; mu0.len()] })
    }

    /// Single class, one transition per tick.
    pub fn single(mu0: &[f64]) -> Result<Self> {
        Self::new(mu0, 1)
    }

    pub fn classes(&self) -> usize {
        self.classes.len()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn class_distribution(&self, i: usize) -> &[f64] {
        &self.classes[i]
    }

    /// Advance the active class under `policy`.
    pub fn step_with(&mut self, policy: &Policy) {
        let c = (self.t % self.classes.len() as u64) as usize;
        let mu = &mut self.classes[c];
        policy.step_distribution_into(mu, &mut self.scratch);
        let total: f64 = self.scratch.iter().sum();
        for (m, s) in mu.iter_mut().zip(&self.scratch) {
            *m = s / total;
        }
        self.t += 1;
    }

    pub fn step(&mut self, model: &LoadModel, cache: &mut PolicyCache, zeta: f64) -> Result<()> {
        let policy = cache.get(model, zeta)?;
        self.step_with(&policy);
        Ok(())
    }

    /// Population distribution (class average).
    pub fn distribution(&self) -> Vec<f64> {
        let m = self.classes.len() as f64;
        let mut out = vec![0.0; self.scratch.len()];
        for c in &self.classes {
            out.iter_mut().zip(c).for_each(|(o, v)| *o += v / m);
        }
        out
    }

    /// `sum_x mu(x) U(x)` over the whole population.
    pub fn output(&self, model: &LoadModel) -> f64 {
        let m = self.classes.len() as f64;
        self.classes.iter().map(|c| model.mean_utility(c)).sum::<f64>() / m
    }

    pub fn class_outputs(&self, model: &LoadModel) -> Vec<f64> {
        self.classes.iter().map(|c| model.mean_utility(c)).collect()
    }
}

pub fn check_distribution(mu: &[f64]) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::arg("empty distribution"));
    }
    if let Some(i) = mu.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::arg(format!("distribution entry {i} is {}", mu[i])));
    }
    let s: f64 = mu.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("distribution sums to {s}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::load_model::SwitchingCurve;
    use crate::stats::NominalStats;

    #[test]
    fn stationary_is_fixed_point() {
        let model = LoadModel::pool(SwitchingCurve::symmetric()).unwrap();
        let st = NominalStats::compute(&model).unwrap();
        let mut mf = MeanField::single(&st.pi0).unwrap();
        let mut cache = PolicyCache::default();
        mf.step(&model, &mut cache, 0.0).unwrap();
        let diff: f64 = mf.distribution().iter().zip(&st.pi0).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff < 1e-12);
        assert!((mf.output(&model) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn point_mass_reads_row() {
        let model = LoadModel::pool(SwitchingCurve::symmetric()).unwrap();
        let mut mu0 = vec![0.0; 96];
        mu0[0] = 1.0;
        let mut mf = MeanField::single(&mu0).unwrap();
        mf.step_with(&Policy::nominal(&model));
        let mu = mf.distribution();
        let p1 = model.curve().unwrap().p_switch_on(1);
        assert!((mu[48] - p1).abs() < 1e-15);
        assert!((mu[1] - (1.0 - p1)).abs() < 1e-15);
    }

    #[test]
    fn classes_advance_in_turn() {
        let model = LoadModel::pool(SwitchingCurve::symmetric()).unwrap();
        let mut mu0 = vec![0.0; 96];
        mu0[0] = 1.0;
        let mut mf = MeanField::new(&mu0, 3).unwrap();
        mf.step_with(&Policy::nominal(&model));
        assert_eq!(mf.class_distribution(1)[0], 1.0);
        assert!(mf.class_distribution(0)[0] < 1.0);
    }
}
