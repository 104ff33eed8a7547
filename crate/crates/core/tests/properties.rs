use mfdr_core::linalg::{norm_inf, Matrix};
use mfdr_core::mean_field::MeanField;
use mfdr_core::spectral::{perron, twisted_matrix, SpectralDesign};
use mfdr_core::stats::NominalStats;
use mfdr_core::{LoadModel, PolicyCache, SwitchingCurve};
use proptest::prelude::*;

fn chain() -> impl Strategy<Value = LoadModel> {
    (2usize..=5)
        .prop_flat_map(|d| {
            (
                prop::collection::vec(prop::collection::vec(0.05f64..1.0, d), d),
                prop::collection::vec(0.0f64..1.0, d),
            )
        })
        .prop_map(|(rows, u)| {
            let rows: Vec<Vec<f64>> = rows
                .into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|x| x / s).collect()
                })
                .collect();
            LoadModel::custom(Matrix::from_rows(&rows).unwrap(), u, 0).unwrap()
        })
}

/// Random chain with some zero transitions, kept irreducible by a cycle.
fn sparse_chain() -> impl Strategy<Value = LoadModel> {
    (3usize..=6)
        .prop_flat_map(|d| {
            (
                Just(d),
                prop::collection::vec(prop::collection::vec(prop::option::weighted(0.4, 0.05f64..1.0), d), d),
                prop::collection::vec(0.0f64..1.0, d),
            )
        })
        .prop_map(|(d, rows, u)| {
            let rows: Vec<Vec<f64>> = rows
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut r: Vec<f64> = r.into_iter().map(|x| x.unwrap_or(0.0)).collect();
                    r[(i + 1) % d] += 0.5;
                    r[i] += 0.1;
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|x| x / s).collect()
                })
                .collect();
            LoadModel::custom(Matrix::from_rows(&rows).unwrap(), u, 0).unwrap()
        })
}

fn eta(model: &LoadModel, zeta: f64) -> f64 {
    SpectralDesign::solve(model, zeta).unwrap().eta_star
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn twisted_chain_is_stochastic_and_stationary(model in chain(), zeta in -5.0f64..5.0) {
        let sd = SpectralDesign::solve(&model, zeta).unwrap();
        let d = model.dim();
        for i in 0..d {
            let s: f64 = sd.p_check.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let back = sd.p_check.vec_mul(&sd.pi_check);
        let diff: Vec<f64> = back.iter().zip(&sd.pi_check).map(|(a, b)| a - b).collect();
        prop_assert!(norm_inf(&diff) < 1e-10);
        prop_assert!((sd.pi_check.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perron_residual_and_positivity(model in chain(), zeta in -5.0f64..5.0) {
        let ep = perron(&model, zeta, None, 100_000).unwrap();
        prop_assert!(ep.lambda > 0.0);
        prop_assert!(ep.v.iter().all(|&x| x > 0.0));
        prop_assert!((ep.v[model.anchor()] - 1.0).abs() < 1e-14);
        let u = model.utility();
        let p = model.p0();
        for i in 0..model.dim() {
            let pv: f64 = (0..model.dim()).map(|j| p[(i, j)] * ep.v[j]).sum::<f64>() * (zeta * u[i]).exp();
            prop_assert!((pv - ep.lambda * ep.v[i]).abs() <= 1e-10 * ep.lambda.max(1.0) * norm_inf(&ep.v));
        }
    }

    #[test]
    fn support_is_preserved(model in sparse_chain(), zeta in -4.0f64..4.0) {
        let sd = SpectralDesign::solve(&model, zeta).unwrap();
        let p = model.p0();
        for i in 0..model.dim() {
            for j in 0..model.dim() {
                prop_assert_eq!(p[(i, j)] > 0.0, sd.p_check[(i, j)] > 0.0);
            }
        }
    }

    #[test]
    fn eta_is_convex(model in chain(), a in -4.0f64..4.0, b in -4.0f64..4.0) {
        let mid = eta(&model, 0.5 * (a + b));
        prop_assert!(eta(&model, a) + eta(&model, b) >= 2.0 * mid - 1e-9);
    }

    #[test]
    fn eta_slope_is_twisted_mean(model in chain(), zeta in -3.0f64..3.0) {
        let step = 1e-4;
        let fd = (eta(&model, zeta + step) - eta(&model, zeta - step)) / (2.0 * step);
        let sd = SpectralDesign::solve(&model, zeta).unwrap();
        prop_assert!((fd - model.mean_utility(&sd.pi_check)).abs() < 1e-6);
    }

    #[test]
    fn relative_value_is_log_eigenvector(model in chain(), zeta in -3.0f64..3.0) {
        let sd = SpectralDesign::solve(&model, zeta).unwrap();
        for (h, v) in sd.h_star.iter().zip(&sd.v) {
            prop_assert!((h - v.ln()).abs() < 1e-12);
        }
        let twisted = twisted_matrix(&model, zeta, sd.lambda, &sd.v);
        prop_assert!(twisted.max_abs_diff(&sd.p_check) < 1e-14);
    }

    #[test]
    fn poisson_solutions_satisfy_their_equations(model in chain()) {
        let st = NominalStats::compute(&model).unwrap();
        let p = model.p0();
        let u = model.utility();
        let d = model.dim();
        prop_assert_eq!(st.h[model.anchor()], 0.0);
        prop_assert_eq!(st.s[model.anchor()], 0.0);
        for i in 0..d {
            let ph: f64 = (0..d).map(|j| p[(i, j)] * st.h[j]).sum();
            prop_assert!((st.h[i] - ph - (u[i] - st.eta0)).abs() < 1e-10);
        }
        let eta0: f64 = st.pi0.iter().zip(u).map(|(a, b)| a * b).sum();
        prop_assert!((eta0 - st.eta0).abs() < 1e-14);
        prop_assert!(st.kappa2 >= -1e-12);
    }

    #[test]
    fn second_derivative_is_asymptotic_variance(model in chain()) {
        let st = NominalStats::compute(&model).unwrap();
        let step = 1e-3;
        let fd = (eta(&model, step) - 2.0 * eta(&model, 0.0) + eta(&model, -step)) / (step * step);
        prop_assert!((fd - st.kappa2).abs() < 1e-5 * (1.0 + st.kappa2));
    }

    #[test]
    fn mean_field_stays_a_distribution(model in chain(), zetas in prop::collection::vec(-6.0f64..6.0, 1..40), m in 1usize..5) {
        let st = NominalStats::compute(&model).unwrap();
        let mut mf = MeanField::new(&st.pi0, m).unwrap();
        let mut cache = PolicyCache::default();
        for z in zetas {
            mf.step(&model, &mut cache, z).unwrap();
            let mu = mf.distribution();
            prop_assert!(mu.iter().all(|&x| x >= 0.0));
            prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classes_agree_after_whole_rounds(zeta in -3.0f64..3.0, m in 2usize..6, rounds in 1usize..4) {
        let model = LoadModel::pool(SwitchingCurve::new(6.0, 0.5, 8).unwrap()).unwrap();
        let st = NominalStats::compute(&model).unwrap();
        let mut mf = MeanField::new(&st.pi0, m).unwrap();
        let mut cache = PolicyCache::default();
        for _ in 0..m * rounds {
            mf.step(&model, &mut cache, zeta).unwrap();
        }
        for c in 1..m {
            let diff: f64 = mf.class_distribution(0).iter().zip(mf.class_distribution(c)).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(diff < 1e-14);
        }
    }
}

#[test]
fn on_fraction_is_monotone_in_the_tilt() {
    for alpha in [0.5, 1.0 / 3.0] {
        let model = LoadModel::pool(SwitchingCurve::new(6.0, alpha, 48).unwrap()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        let mut warm: Option<Vec<f64>> = None;
        for k in -40..=40 {
            let zeta = k as f64 * 0.25;
            let sd = SpectralDesign::solve_warm(&model, zeta, warm.as_deref()).unwrap();
            let on = sd.steady_state_on_fraction(&model);
            assert!(on >= prev - 1e-12, "alpha {alpha}: on-fraction drops at zeta {zeta}");
            prev = on;
            warm = Some(sd.v);
        }
    }
}
