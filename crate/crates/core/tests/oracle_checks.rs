use spatcount::oracle::{
    brute_force_n_posterior, geweke_style_joint_check, GewekeConfig, GewekeDesign,
};
use spatcount::sampler::run_chains;
use spatcount::*;

fn mcmc_n_distribution(
    data: &CountData,
    traps: &TrapArray,
    space: &StateSpace,
    algorithm: Algorithm,
    m: usize,
) -> Vec<f64> {
    let problem = Problem { data, traps, space, marked: None };
    let cfg = McmcConfig {
        algorithm,
        augmentation: m,
        iterations: 60_000,
        burn_in: 2_000,
        thin: 1,
        chains: 2,
        fixed_sigma: Some(0.5),
        fixed_lambda0: Some(0.5),
        store_centers: false,
        seed: 17,
        ..Default::default()
    };
    let chains = run_chains(problem, &PriorSpec::default(), &cfg).unwrap();
    let mut freq = vec![0.0; m + 1];
    let mut total = 0.0;
    for d in chains.iter().flat_map(|c| &c.draws) {
        freq[d.n] += 1.0;
        total += 1.0;
    }
    freq.iter().map(|f| f / total).collect()
}

#[test]
fn single_trap_posterior_matches_enumeration() {
    let traps = TrapArray::new(vec![Point::new(0.0, 0.0)]).unwrap();
    let space = StateSpace::new(-1.0, 1.0, -1.0, 1.0).unwrap();
    let data = CountData::zeros(1, 5).unwrap();
    let exact = brute_force_n_posterior(&data, &traps, &space, 0.5, 0.5, 1, 21).unwrap();
    let fine = brute_force_n_posterior(&data, &traps, &space, 0.5, 0.5, 1, 41).unwrap();
    assert!(exact.total_variation(&fine.probs) < 0.005);
    for algorithm in [Algorithm::Marginal, Algorithm::Conditional] {
        let p = mcmc_n_distribution(&data, &traps, &space, algorithm, 1);
        let tv = exact.total_variation(&p);
        assert!(tv < 0.02, "{algorithm}: {p:?} vs {:?}", exact.probs);
    }
}

#[test]
fn geweke_passes_for_both_algorithms() {
    let design = GewekeDesign::standard();
    for algorithm in [Algorithm::Marginal, Algorithm::Conditional] {
        let gc = GewekeConfig { algorithm, ..Default::default() };
        let report = geweke_style_joint_check(&design, &gc).unwrap();
        assert!(!report.stats.is_empty());
        assert!(report.max_abs_z() < 4.0, "{algorithm}: {report:?}");
    }
}

#[test]
fn geweke_passes_with_marked_individuals() {
    let design = GewekeDesign { marked: 2, ..GewekeDesign::standard() };
    for algorithm in [Algorithm::Marginal, Algorithm::Conditional] {
        let gc = GewekeConfig { algorithm, seed: 3, ..Default::default() };
        let report = geweke_style_joint_check(&design, &gc).unwrap();
        assert!(report.max_abs_z() < 4.0, "{algorithm}: {report:?}");
    }
}

#[test]
fn geweke_detects_missing_jacobian() {
    let design = GewekeDesign::standard();
    let gc = GewekeConfig { omit_sigma_jacobian: true, ..Default::default() };
    let report = geweke_style_joint_check(&design, &gc).unwrap();
    assert!(report.max_abs_z() > 6.0, "{report:?}");
}

#[test]
fn geweke_is_deterministic() {
    let design = GewekeDesign::standard();
    let gc = GewekeConfig { sweeps: 2_000, burn_in: 100, ..Default::default() };
    let a = geweke_style_joint_check(&design, &gc).unwrap();
    let b = geweke_style_joint_check(&design, &gc).unwrap();
    assert_eq!(a, b);
}
