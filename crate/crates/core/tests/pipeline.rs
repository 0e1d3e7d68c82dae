use std::sync::Arc;

use samq::aggregation::{self, Aggregation};
use samq::bench::{self, DummyDemoConfig, ExperimentConfig, Method};
use samq::data::{self, Dataset, DatasetMeta, InitDistribution, SamplingMode, Transition};
use samq::diagnostics::{self, DiagnoseInputs, PopulationOptions, Theorem2Inputs};
use samq::env::{self, BusEnvConfig};
use samq::irl::{self, IrlOptions};
use samq::mdp::{self, MdpSpec, RewardModel, ThetaVector};
use samq::nfmle::{self, NfmleOptions};
use samq::Error;

/// Three-state chain whose kernel entries are multiples of 1/10.
fn tenths_mdp() -> MdpSpec {
    let rows = vec![
        vec![(0, 0.5), (1, 0.5)],
        vec![(0, 1.0)],
        vec![(1, 0.3), (2, 0.7)],
        vec![(0, 0.9), (2, 0.1)],
        vec![(2, 1.0)],
        vec![(0, 0.2), (1, 0.2), (2, 0.6)],
    ];
    MdpSpec::new(
        vec![vec![0.0], vec![1.0], vec![2.0]],
        vec!["continue".into(), "replace".into()],
        0.9,
        rows,
        RewardModel::BusEngine { mileage_coord: 0 },
    )
    .unwrap()
}

/// Ten transitions per (state, action), replicated in proportion to the kernel.
fn exact_kernel_dataset(mdp: &MdpSpec, repeat: usize) -> Dataset {
    let mut transitions = Vec::new();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for &(next, p) in mdp.transition_row(s, a) {
                let copies = (p * 10.0).round() as usize * repeat;
                for _ in 0..copies {
                    transitions.push(Transition { state: mdp.state(s).to_vec(), action: a, next: mdp.state(next).to_vec() });
                }
            }
        }
    }
    let meta = DatasetMeta {
        gamma: mdp.gamma(),
        n_actions: mdp.n_actions(),
        env_digest: String::new(),
        seed: None,
        n: 0,
        dims: 0,
        reward: Some(mdp.reward_model().clone()),
    };
    Dataset::new(transitions, meta).unwrap()
}

#[test]
fn identity_aggregation_on_exact_kernel_data_reproduces_soft_q() {
    let mdp = tenths_mdp();
    let ds = exact_kernel_dataset(&mdp, 1);
    let agg = Aggregation::identity(Arc::clone(mdp.state_space()));
    let theta = ThetaVector::new(vec![0.4, 1.5]).unwrap();
    let agg_q = nfmle::solve_aggregated_q(&ds, &agg, mdp.reward_model(), &theta, mdp.gamma(), 1e-13).unwrap();
    let full = mdp::soft_q_solve(&mdp, &theta, 1e-13, 100_000).unwrap().q;
    for s in 0..mdp.n_states() {
        for a in 0..2 {
            assert!((agg_q.value(s, a) - full.value(s, a)).abs() < 1e-10);
        }
    }
}

#[test]
fn identity_aggregated_estimate_matches_exact_estimate() {
    let mdp = tenths_mdp();
    let theta_star = ThetaVector::new(vec![0.4, 1.5]).unwrap();
    let base = exact_kernel_dataset(&mdp, 20);
    // Same support and kernel, choices resampled from the true policy.
    let sim = data::simulate(&mdp, &theta_star, 4000, 3, &InitDistribution::Uniform, SamplingMode::Iid).unwrap();
    let sim = Dataset::new(sim.transitions().to_vec(), base.meta().clone()).unwrap();
    let agg = Aggregation::identity(Arc::clone(mdp.state_space()));
    let init = ThetaVector::new(vec![0.1, 1.0]).unwrap();
    let opts = NfmleOptions::default();
    // Aggregated fits use empirical transitions, the exact fit uses the true kernel.
    let a = nfmle::nfmle_estimate(&base, &agg, mdp.reward_model(), &init, &opts).unwrap();
    let b = nfmle::exact_nfmle(&base, &mdp, &init, &opts).unwrap();
    assert!(a.theta_hat.squared_distance(&b.theta_hat).sqrt() < 1e-4, "{:?} vs {:?}", a.theta_hat, b.theta_hat);
    let c = nfmle::exact_nfmle(&sim, &mdp, &init, &opts).unwrap();
    assert!(c.converged);
    assert!(c.log_likelihood >= c.log_likelihood_init);
}

#[test]
fn full_pipeline_is_deterministic() {
    let cfg = BusEnvConfig { mileage_grid_size: 30, ..Default::default() };
    let mdp = env::make_bus_env(&cfg).unwrap();
    let run = || {
        let ds = data::simulate(&mdp, &cfg.theta_true, 3000, 11, &InitDistribution::Uniform, SamplingMode::Iid).unwrap();
        let q = irl::estimate_q(&ds, ds.gamma(), &IrlOptions::default()).unwrap().q;
        let support = ds.support().points().to_vec();
        let agg = aggregation::cluster_states(&q, &support, 6, 11, 5).unwrap();
        let rewards = nfmle::dataset_rewards(&ds).unwrap();
        let init = ThetaVector::new(vec![0.1, 1.0]).unwrap();
        let report = nfmle::nfmle_estimate(&ds, &agg, &rewards, &init, &NfmleOptions::default()).unwrap();
        (q.table().to_vec(), agg.assign().to_vec(), report.theta_hat.values)
    };
    assert_eq!(run(), run());
}

#[test]
fn benchmark_table_is_deterministic_and_shaped() {
    let cfg = ExperimentConfig {
        env: BusEnvConfig { mileage_grid_size: 25, ..Default::default() },
        n: 3000,
        n_s_list: vec![4, 8],
        replications: 2,
        seed: 5,
        ..Default::default()
    };
    let a = bench::run_experiment(&cfg).unwrap();
    let b = bench::run_experiment(&cfg).unwrap();
    assert_eq!(a.rows.len(), 3 * 2);
    let strip = |t: &bench::BenchmarkTable| -> Vec<(Method, usize, f64, f64)> {
        t.rows.iter().map(|r| (r.method, r.n_s, r.mse_mean, r.mse_std)).collect()
    };
    assert_eq!(strip(&a), strip(&b));
    for r in &a.rows {
        assert!(r.mse_std >= 0.0 && r.mse_mean >= 0.0);
    }
    let full: Vec<f64> = a.rows.iter().filter(|r| r.method == Method::Nfmle).map(|r| r.mse_mean).collect();
    assert!(full.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn benchmark_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        env: BusEnvConfig { mileage_grid_size: 12, ..Default::default() },
        n: 2000,
        n_s_list: vec![3],
        methods: vec![Method::NfmleSa],
        replications: 1,
        output_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let table = bench::run_experiment(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(bench::read_table_csv(&csv).unwrap().rows.len(), table.rows.len());
    assert!(dir.path().join("table.md").exists());
    assert!(dir.path().join("runs.json").exists());
    assert!(dir.path().join("rows.json").exists());
}

#[test]
fn dummy_demo_purity_is_a_fraction_and_identity_is_pure() {
    let cfg = DummyDemoConfig { n: 20_000, ..Default::default() };
    let res = bench::run_dummy_state_demo(&cfg).unwrap();
    for p in [res.samq_purity, res.adhoc_purity] {
        assert!((0.0..=1.0).contains(&p));
    }
    let coords: Vec<f64> = res.rows.iter().map(|r| r.true_coord).collect();
    // Identity on distinct true coordinates leaves no pair to split.
    assert_eq!(bench::column_purity(&[0.0, 1.0, 2.0], &[0, 1, 2]), 1.0);
    let identity: Vec<usize> = (0..coords.len()).collect();
    assert_eq!(bench::column_purity(&coords, &identity), 0.0);
    let by_column: Vec<usize> = coords.iter().map(|c| (c * 100.0) as usize).collect();
    assert_eq!(bench::column_purity(&coords, &by_column), 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demo.csv");
    bench::write_demo_csv(&res, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("true_coord,dummy_0,samq_cluster,adhoc_cluster"));
    assert_eq!(text.lines().count(), res.rows.len() + 1);
}

#[test]
fn dummy_demo_needs_a_dummy_coordinate() {
    let cfg = DummyDemoConfig { env: BusEnvConfig { mileage_grid_size: 10, ..Default::default() }, ..Default::default() };
    assert!(bench::run_dummy_state_demo(&cfg).is_err());
}

#[test]
fn one_cluster_bus_aggregation_holds_with_slack() {
    let cfg = BusEnvConfig { mileage_grid_size: 8, ..Default::default() };
    let mdp = env::make_bus_env(&cfg).unwrap();
    let agg = Aggregation::new(Arc::clone(mdp.state_space()), vec![0; 8], vec![0]).unwrap();
    match diagnostics::population_check(&mdp, &cfg.theta_true, &agg, &PopulationOptions::default()) {
        Ok(pc) => {
            assert!(pc.theorem1.holds);
            assert!(pc.theorem1.slack() > 0.0);
        }
        // One cluster cannot separate the two parameters; a flat direction is a valid outcome.
        Err(Error::DiagnosticUnavailable(msg)) => assert!(msg.contains("concave"), "{msg}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn two_cluster_bus_aggregation_satisfies_population_inequalities() {
    let cfg = BusEnvConfig { mileage_grid_size: 8, ..Default::default() };
    let mdp = env::make_bus_env(&cfg).unwrap();
    let agg = Aggregation::new(Arc::clone(mdp.state_space()), vec![0, 0, 0, 0, 1, 1, 1, 1], vec![1, 5]).unwrap();
    let pc = diagnostics::population_check(&mdp, &cfg.theta_true, &agg, &PopulationOptions::default()).unwrap();
    for r in [&pc.lemma, &pc.gap_bound, &pc.theorem1] {
        assert!(r.holds, "{r:?}");
        assert!(r.certified);
    }
    assert!(pc.likelihood_gap >= 0.0);
}

#[test]
fn concavity_is_positive_on_bus_estimates() {
    let cfg = BusEnvConfig::default();
    let mdp = env::make_bus_env(&cfg).unwrap();
    let ds = data::simulate(&mdp, &cfg.theta_true, 10_000, 0, &InitDistribution::Uniform, SamplingMode::Iid).unwrap();
    let agg = aggregation::ad_hoc_aggregation(ds.support().points(), 10).unwrap();
    let rewards = nfmle::dataset_rewards(&ds).unwrap();
    let init = ThetaVector::new(vec![0.1, 1.0]).unwrap();
    let report = nfmle::nfmle_estimate(&ds, &agg, &rewards, &init, &NfmleOptions::default()).unwrap();
    let c_h = diagnostics::estimate_concavity(&ds, &agg, &rewards, &report.theta_hat, 1e-3).unwrap();
    assert!(c_h > 0.0, "C_H = {c_h}");
}

#[test]
fn bound_report_components_are_non_negative() {
    let cfg = BusEnvConfig { mileage_grid_size: 8, ..Default::default() };
    let mdp = env::make_bus_env(&cfg).unwrap();
    let ds = data::simulate(&mdp, &cfg.theta_true, 20_000, 2, &InitDistribution::Uniform, SamplingMode::Iid).unwrap();
    let q = irl::estimate_q(&ds, ds.gamma(), &IrlOptions::default()).unwrap().q;
    let support = ds.support().points().to_vec();
    let agg = aggregation::cluster_states(&q, &support, 4, 0, 5).unwrap();
    let rewards = nfmle::dataset_rewards(&ds).unwrap();
    let init = ThetaVector::with_bounds(vec![0.1, 1.0], vec![(0.0, 2.0), (0.0, 10.0)]).unwrap();
    let est = nfmle::nfmle_estimate(&ds, &agg, &rewards, &init, &NfmleOptions::default()).unwrap();
    let report = diagnostics::bound_report(&DiagnoseInputs {
        dataset: &ds,
        aggregation: &agg,
        rewards: &rewards,
        theta_hat: &est.theta_hat,
        q_hat: Some(&q),
        truth: Some((&mdp, &cfg.theta_true)),
        delta: 0.05,
        theta_card: diagnostics::theta_card_proxy(init.bounds.as_ref().unwrap(), 0.01),
        r_max: None,
        h: 1e-3,
    })
    .unwrap();
    let values = [
        report.eps_q,
        report.eps_dis_hat,
        report.c_q,
        report.c_clustering,
        report.theta_gap,
        report.thm1_bound,
        report.thm2_bias,
        report.thm2_variance,
        Some(report.c_uni),
        Some(report.r_max),
    ];
    for v in values.into_iter().flatten() {
        assert!(v >= 0.0);
    }
    for r in &report.inequalities {
        assert_eq!(r.holds, r.lhs <= r.rhs);
    }
    assert_eq!(report.inequalities.iter().filter(|r| r.certified).count(), 3);
    let json = serde_json::to_string(&report).unwrap();
    let back: diagnostics::BoundReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert!(report.table().contains("theorem1"));
}

#[test]
fn bound_has_interior_minimum_over_n_s() {
    let base = Theorem2Inputs {
        n_s: 5,
        n_a: 2,
        gamma: 0.95,
        r_max: 5.0,
        c_h: 0.01,
        c_uni: 0.1,
        c_q: 0.0,
        c_clustering: 0.0,
        n: 1e6,
        delta: 0.05,
        theta_card: diagnostics::theta_card_proxy(&[(0.0, 2.0), (0.0, 10.0)], 0.01),
    };
    let sweep = diagnostics::theorem2_sweep(&base, &[2, 3, 5, 10, 20, 50, 100, 200], 1.0).unwrap();
    assert!(diagnostics::interior_minimum(&sweep).is_some());
    assert!(sweep.last().unwrap().bound.is_none());

    let totals: Vec<f64> = [1e6, 1e7, 1e8, 1e10]
        .iter()
        .map(|&n| diagnostics::theorem2_bound(&Theorem2Inputs { n, ..base.clone() }).unwrap().total)
        .collect();
    assert!(totals.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn coverage_failure_names_the_cell() {
    let mdp = tenths_mdp();
    let mut ds = exact_kernel_dataset(&mdp, 1);
    let kept: Vec<Transition> = ds.transitions().iter().filter(|t| !(t.state == [2.0] && t.action == 1)).cloned().collect();
    ds = Dataset::new(kept, ds.meta().clone()).unwrap();
    let agg = Aggregation::identity(Arc::new(ds.support()));
    let err = nfmle::solve_aggregated_q(&ds, &agg, mdp.reward_model(), &ThetaVector::new(vec![0.1, 1.0]).unwrap(), 0.9, 1e-10)
        .unwrap_err();
    match err {
        Error::Coverage(msg) => assert!(msg.contains("action 1"), "{msg}"),
        e => panic!("{e}"),
    }
}
