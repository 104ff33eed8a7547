use mfdr_core::agent_sim::{AgentPopulation, Init};
use mfdr_core::control::{
    replay, run_closed_loop, Backend, CapacityEnvelope, LtiBackend, MeanFieldBackend, PiController,
};
use mfdr_core::lti::LtiSystem;
use mfdr_core::mean_field::MeanField;
use mfdr_core::signal::{lowpass, lowpass_gain, synth_regulation, SignalSeries, Units};
use mfdr_core::{LoadModel, NominalStats, PolicyCache, SpectralDesign, SwitchingCurve};
use proptest::prelude::*;

fn small_pool() -> LoadModel {
    LoadModel::pool(SwitchingCurve::new(6.0, 0.5, 12).unwrap()).unwrap()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn agents_are_deterministic_per_seed() {
    let model = small_pool();
    let run = |seed| {
        let mut pop = AgentPopulation::init(&model, 5000, 4, seed, &Init::Stationary).unwrap();
        let mut cache = PolicyCache::default();
        for t in 0..60 {
            pop.tick(&model, &mut cache, (t as f64 * 0.1).sin()).unwrap();
        }
        pop.states()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn agents_follow_the_mean_field() {
    let model = small_pool();
    let st = NominalStats::compute(&model).unwrap();
    let zetas: Vec<f64> = (0..40).map(|t| 1.5 * (t as f64 * 0.2).sin()).collect();
    let mut mf = MeanField::new(&st.pi0, 1).unwrap();
    let mut cache = PolicyCache::default();
    for &z in &zetas {
        mf.step(&model, &mut cache, z).unwrap();
    }
    let mut gaps = Vec::new();
    for n in [1_000usize, 100_000] {
        let mut pop = AgentPopulation::init(&model, n, 1, 17, &Init::Stationary).unwrap();
        for &z in &zetas {
            pop.tick(&model, &mut cache, z).unwrap();
        }
        gaps.push(l1(&pop.empirical_distribution(), &mf.distribution()));
    }
    // A hundredfold population should cut the gap roughly tenfold.
    assert!(gaps[1] < 0.3 * gaps[0], "{gaps:?}");
    assert!(gaps[1] < 0.05, "{gaps:?}");
}

#[test]
fn all_off_start_has_no_load_on() {
    let model = small_pool();
    let pop = AgentPopulation::init(&model, 2000, 3, 1, &Init::AllOff).unwrap();
    assert_eq!(pop.output(&model), 0.0);
    assert_eq!(pop.class_sizes().iter().sum::<usize>(), 2000);
}

#[test]
fn snapshot_round_trip_continues_identically() {
    let model = small_pool();
    let mut cache = PolicyCache::default();
    let mut a = AgentPopulation::init(&model, 3000, 3, 9, &Init::Stationary).unwrap();
    for _ in 0..10 {
        a.tick(&model, &mut cache, 0.7).unwrap();
    }
    let mut b = AgentPopulation::from_snapshot(&model, 3, a.seed(), a.t(), &a.states()).unwrap();
    for _ in 0..10 {
        a.tick(&model, &mut cache, -0.4).unwrap();
        b.tick(&model, &mut cache, -0.4).unwrap();
    }
    assert_eq!(a.states(), b.states());
}

#[test]
fn lti_step_reaches_dc_gain() {
    let model = small_pool();
    let st = NominalStats::compute(&model).unwrap();
    let sys = LtiSystem::linearize(&model, &st).unwrap();
    let y = sys.simulate(&vec![0.2; 3000]);
    assert!((y[2999] - 0.2 * st.kappa2).abs() < 1e-9 * (1.0 + st.kappa2));
    let dc = sys.transfer_value(num_complex::Complex64::new(1.0, 0.0)).unwrap();
    assert!((dc.re - st.kappa2).abs() < 1e-9);
}

#[test]
fn mean_field_matches_small_tilt_steady_state() {
    let model = small_pool();
    let st = NominalStats::compute(&model).unwrap();
    let mut mf = MeanField::single(&st.pi0).unwrap();
    let mut cache = PolicyCache::default();
    for _ in 0..3000 {
        mf.step(&model, &mut cache, 0.05).unwrap();
    }
    let exact = SpectralDesign::solve(&model, 0.05).unwrap().steady_state_on_fraction(&model);
    assert!((mf.output(&model) - exact).abs() < 1e-9);
    assert!((exact - st.taylor_on_fraction(0.05)).abs() < 0.01 * exact);
}

#[test]
fn boxed_backends_forward() {
    let model = small_pool();
    let st = NominalStats::compute(&model).unwrap();
    let mut plain = MeanFieldBackend::new(model.clone(), &st.pi0, 2).unwrap();
    let mut boxed: Box<dyn Backend> = Box::new(MeanFieldBackend::new(model, &st.pi0, 2).unwrap());
    let r: Vec<f64> = (0..50).map(|t| 0.05 * (t as f64 * 0.1).sin()).collect();
    let a = run_closed_loop(&mut plain, st.eta0, &r, &mut PiController::default(), None).unwrap();
    let b = run_closed_loop(&mut boxed, st.eta0, &r, &mut PiController::default(), None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn closed_loop_tilts_replay_from_logs() {
    let model = small_pool();
    let st = NominalStats::compute(&model).unwrap();
    let sys = LtiSystem::linearize(&model, &st).unwrap();
    let mut plant = LtiBackend::staggered(sys, 3);
    let env = CapacityEnvelope::new(0.03, 0.03).unwrap();
    let r: Vec<f64> = (0..120).map(|t| 0.05 * (t as f64 * 0.05).sin()).collect();
    let traj = run_closed_loop(&mut plant, st.eta0, &r, &mut PiController::new(5.0, 1.0), Some(&env)).unwrap();
    assert!(traj.r_truncated.iter().all(|x| x.abs() <= 0.03));
    let y_dev: Vec<f64> = traj.y.iter().map(|y| y - st.eta0).collect();
    assert_eq!(replay(PiController::new(5.0, 1.0), &traj.r_truncated, &y_dev), traj.zeta);
}

#[test]
fn staggered_lti_output_averages_classes() {
    let model = small_pool();
    let st = NominalStats::compute(&model).unwrap();
    let sys = LtiSystem::linearize(&model, &st).unwrap();
    let mut single = LtiBackend::new(sys.clone());
    let mut stag = LtiBackend::staggered(sys, 4);
    single.advance(1.0).unwrap();
    stag.advance(1.0).unwrap();
    // One of four classes moved.
    let full = single.output() - st.eta0;
    assert!(full > 0.0);
    assert!(((stag.output() - st.eta0) - 0.25 * full).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pi_is_proportional_plus_running_sum(kp in 0.0f64..50.0, ki in 0.0f64..10.0, e in prop::collection::vec(-1.0f64..1.0, 1..50)) {
        let mut c = PiController::new(kp, ki);
        let mut sum = 0.0;
        for &x in &e {
            sum += x;
            let u = c.step_error(x);
            prop_assert!((u - (kp * x + ki * sum)).abs() < 1e-9);
        }
    }

    #[test]
    fn truncation_is_a_clamp(plus in 0.01f64..0.9, minus in 0.01f64..0.9, r in -2.0f64..2.0) {
        let env = CapacityEnvelope::new(plus, minus).unwrap();
        prop_assert_eq!(env.truncate(r), r.clamp(-minus, plus));
        prop_assert_eq!(env.contains(r), r == env.truncate(r));
    }

    #[test]
    fn synth_has_requested_rms_and_zero_mean(seed in 0u64..1000, rms in 1.0f64..500.0) {
        let s = synth_regulation(24.0, 150.0, seed, (0.25, 2.0), rms).unwrap();
        prop_assert!((s.rms() - rms).abs() < 1e-9 * rms);
        prop_assert!(s.mean().abs() < 1e-9 * rms);
    }

    #[test]
    fn lowpass_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..100) {
        let x = synth_regulation(6.0, 60.0, seed, (0.5, 20.0), 1.0).unwrap();
        let y = synth_regulation(6.0, 60.0, seed + 1, (0.5, 20.0), 1.0).unwrap();
        let mix = SignalSeries::new(
            x.samples.iter().zip(&y.samples).map(|(p, q)| a * p + b * q).collect(), 60.0, Units::Mw,
        ).unwrap();
        let lx = lowpass(&x, 2.0).unwrap();
        let ly = lowpass(&y, 2.0).unwrap();
        let lm = lowpass(&mix, 2.0).unwrap();
        for i in 0..lm.len() {
            prop_assert!((lm.samples[i] - a * lx.samples[i] - b * ly.samples[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn synth_energy_stays_in_band() {
    let s = synth_regulation(24.0, 150.0, 5, (0.5, 1.5), 100.0).unwrap();
    let n = s.len();
    let power = |f_cph: f64| {
        let w = 2.0 * std::f64::consts::PI * f_cph * 150.0 / 3600.0;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, x) in s.samples.iter().enumerate() {
            re += x * (w * t as f64).cos();
            im += x * (w * t as f64).sin();
        }
        (re * re + im * im) / (n as f64 * n as f64)
    };
    let inside = power(1.0);
    for f in [0.25, 2.0, 4.0, 8.0] {
        assert!(power(f) < 1e-20 + 1e-12 * inside, "energy leaks at {f} cycles/hour");
    }
    assert!(inside > 0.0);
}

#[test]
fn lowpass_attenuates_above_cutoff() {
    let period = 60.0;
    let cutoff = 1.0;
    let f = 4.0;
    let n = 6000;
    let w = 2.0 * std::f64::consts::PI * f * period / 3600.0;
    let x = SignalSeries::new((0..n).map(|t| (w * t as f64).sin()).collect(), period, Units::Mw).unwrap();
    let y = lowpass(&x, cutoff).unwrap();
    let mid = n / 4..3 * n / 4;
    let ratio = (y.samples[mid.clone()].iter().map(|v| v * v).sum::<f64>()
        / x.samples[mid].iter().map(|v| v * v).sum::<f64>())
    .sqrt();
    let db = 20.0 * ratio.log10();
    assert!(db < -6.0, "only {db} dB at {f} cycles/hour");
    let predicted = 20.0 * lowpass_gain(cutoff, period, f).log10();
    assert!((db - predicted).abs() < 0.1, "{db} vs {predicted}");
}

#[test]
fn lti_loop_removes_step_error() {
    let model = LoadModel::pool(SwitchingCurve::symmetric()).unwrap();
    let st = NominalStats::compute(&model).unwrap();
    let sys = LtiSystem::linearize(&model, &st).unwrap();
    let mut plant = LtiBackend::staggered(sys, 12);
    let r = vec![0.05; 5000];
    let traj = run_closed_loop(&mut plant, st.eta0, &r, &mut PiController::default(), None).unwrap();
    let last = traj.e.last().unwrap().abs();
    assert!(last < 1e-4, "residual error {last}");
}
