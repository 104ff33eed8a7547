use mfdr_core::oracle::{brute_lambda_t, brute_total_probability, fixtures, mc_regenerative, run_enumeration_suite, run_mc_suite};
use mfdr_core::{NominalStats, SpectralDesign};

#[test]
fn enumeration_suite_passes_on_all_fixtures() {
    let checks = run_enumeration_suite(&fixtures(), &[-2.0, -0.5, 0.5, 2.0], &[3, 6, 9]).unwrap();
    assert!(!checks.is_empty());
    let bad: Vec<_> = checks.iter().filter(|c| !c.pass).collect();
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn finite_horizon_growth_rate_approaches_eta() {
    for chain in fixtures() {
        let sd = SpectralDesign::solve(&chain.model, 1.0).unwrap();
        assert!((brute_total_probability(&chain.model, 8, 0).unwrap() - 1.0).abs() < 1e-12);
        let l8 = brute_lambda_t(&chain.model, 1.0, 8, 0).unwrap();
        let l12 = brute_lambda_t(&chain.model, 1.0, 12, 0).unwrap();
        assert!(((l12 - l8) / 4.0 - sd.eta_star).abs() < 2.0 * sd.h_span() / 4.0 + 1e-12, "{}", chain.name);
    }
}

#[test]
fn regenerative_estimates_cover_the_exact_values() {
    let chain = fixtures().into_iter().find(|c| c.name == "sticky2").unwrap();
    let st = NominalStats::compute(&chain.model).unwrap();
    let mc = mc_regenerative(&chain.model, 0.5, 40_000, 3).unwrap();
    let exact = SpectralDesign::solve(&chain.model, 0.5).unwrap().eta_star;
    assert!((mc.eta_hat - exact).abs() < 4.0 * mc.eta_se);
    assert!((mc.kappa2_hat - st.kappa2).abs() < 4.0 * mc.kappa2_se);
    let suite = run_mc_suite(&chain.model, &chain.name, &[0.0, 1.0], 20_000, 5).unwrap();
    assert!(suite.iter().all(|c| c.pass), "{suite:#?}");
}
