use std::sync::Arc;

use proptest::prelude::*;
use samq::aggregation::{self, Aggregation};
use samq::data::{self, Dataset, InitDistribution, SamplingMode};
use samq::diagnostics::{instance_rng, random_aggregation, random_instance, RandomInstance};
use samq::mdp::{self, MdpSpec, QFunction, RewardFeatures, ThetaVector};
use samq::nfmle::{self, AggregatedProblem, AggregatedQ};
use samq::Result;

fn instance(seed: u64, n_states: usize, n_actions: usize) -> RandomInstance {
    random_instance(&mut instance_rng(seed), n_states, n_actions, 2).unwrap()
}

fn sample(inst: &RandomInstance, n: usize, seed: u64) -> Dataset {
    data::simulate(&inst.mdp, &inst.theta_star, n, seed, &InitDistribution::Uniform, SamplingMode::Iid).unwrap()
}

/// Appends a constant feature so the last θ entry shifts every reward.
struct Shifted<'a>(&'a dyn RewardFeatures);

impl RewardFeatures for Shifted<'_> {
    fn n_params(&self) -> usize {
        self.0.n_params() + 1
    }

    fn features(&self, point: &[f64], action: usize) -> Result<Vec<f64>> {
        let mut f = self.0.features(point, action)?;
        f.push(1.0);
        Ok(f)
    }
}

/// Rewards read at the projected state.
struct Projected<'a> {
    inner: &'a MdpSpec,
    agg: &'a Aggregation,
}

impl RewardFeatures for Projected<'_> {
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn features(&self, point: &[f64], action: usize) -> Result<Vec<f64>> {
        self.inner.features(&self.agg.project(point, None)?, action)
    }
}

fn q_table(mdp: &MdpSpec, values: &[f64]) -> QFunction {
    QFunction::new(Arc::clone(mdp.state_space()), mdp.n_actions(), values.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn soft_bellman_is_gamma_contraction(
        seed in any::<u64>(),
        a in prop::collection::vec(-50.0f64..50.0, 10),
        b in prop::collection::vec(-50.0f64..50.0, 10),
    ) {
        let inst = instance(seed, 5, 2);
        let (qa, qb) = (q_table(&inst.mdp, &a), q_table(&inst.mdp, &b));
        let ta = mdp::soft_bellman_apply(&qa, &inst.mdp, &inst.theta_star).unwrap();
        let tb = mdp::soft_bellman_apply(&qb, &inst.mdp, &inst.theta_star).unwrap();
        prop_assert!(ta.sup_distance(&tb) <= inst.mdp.gamma() * qa.sup_distance(&qb) + 1e-9);
    }

    #[test]
    fn empirical_operator_is_gamma_contraction(
        seed in any::<u64>(),
        a in prop::collection::vec(-50.0f64..50.0, 4),
        b in prop::collection::vec(-50.0f64..50.0, 4),
    ) {
        let inst = instance(seed, 4, 2);
        let ds = sample(&inst, 2000, seed);
        let mut rng = instance_rng(seed ^ 0x5eed);
        let agg = random_aggregation(&mut rng, Arc::new(ds.support()), 2).unwrap();
        let problem = AggregatedProblem::new(&ds, &agg, &inst.mdp, ds.gamma(), 1);
        prop_assume!(problem.is_ok());
        let problem = problem.unwrap();
        let fa = AggregatedQ { n_s: 2, n_actions: 2, table: a };
        let fb = AggregatedQ { n_s: 2, n_actions: 2, table: b };
        let ta = problem.apply(&fa, &inst.theta_star).unwrap();
        let tb = problem.apply(&fb, &inst.theta_star).unwrap();
        prop_assert!(ta.sup_distance(&tb) <= ds.gamma() * fa.sup_distance(&fb) + 1e-9);
    }

    #[test]
    fn softmax_is_normalized_and_shift_invariant(
        row in prop::collection::vec(-300.0f64..300.0, 1..6),
        c in -1e3f64..1e3,
    ) {
        let q = QFunction::from_rows(vec![vec![0.0]], vec![row.clone()]).unwrap();
        let p = mdp::choice_prob(&q, 0).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let shifted = mdp::choice_prob(&q.shifted(c), 0).unwrap();
        for (x, y) in p.iter().zip(&shifted) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn log_sum_exp_is_one_lipschitz(
        pair in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 1..8),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
        let lx = mdp::log_sum_exp(&x).unwrap();
        let ly = mdp::log_sum_exp(&y).unwrap();
        let sup = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!((lx - ly).abs() <= sup + 1e-9 * (1.0 + lx.abs()));
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lx >= max && lx <= max + (x.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn projection_is_idempotent(
        points in prop::collection::btree_set((0i32..40, 0i32..40), 3..30),
        seed in any::<u64>(),
        k in 1usize..6,
    ) {
        let states: Vec<Vec<f64>> = points.iter().map(|&(a, b)| vec![a as f64, b as f64]).collect();
        let k = k.min(states.len());
        let rows: Vec<Vec<f64>> = states.iter().map(|p| vec![p[0].sin() * 3.0, p[1] * 0.1]).collect();
        let q = QFunction::from_rows(states.clone(), rows).unwrap();
        for agg in [
            aggregation::cluster_states(&q, &states, k, seed, 3).unwrap(),
            aggregation::ad_hoc_aggregation(&states, k).unwrap(),
        ] {
            for p in &states {
                let once = agg.project(p, None).unwrap();
                prop_assert_eq!(agg.project(&once, None).unwrap(), once);
            }
        }
    }

    #[test]
    fn aggregated_q_depends_on_states_only_through_projection(seed in any::<u64>()) {
        let inst = instance(seed, 6, 2);
        let ds = sample(&inst, 3000, seed);
        let mut rng = instance_rng(seed.rotate_left(7));
        let agg = random_aggregation(&mut rng, Arc::new(ds.support()), 3).unwrap();
        let gamma = ds.gamma();
        let base = nfmle::solve_aggregated_q(&ds, &agg, &inst.mdp, &inst.theta_star, gamma, 1e-12);
        prop_assume!(base.is_ok());
        let base = base.unwrap();

        // Next states enter only through their cluster.
        let next_projected = Dataset::new(
            ds.transitions()
                .iter()
                .map(|t| data::Transition { next: agg.project(&t.next, None).unwrap(), ..t.clone() })
                .collect(),
            ds.meta().clone(),
        )
        .unwrap();
        let q_next = nfmle::solve_aggregated_q(&next_projected, &agg, &inst.mdp, &inst.theta_star, gamma, 1e-12).unwrap();
        prop_assert_eq!(&q_next, &base);

        // With rewards read at Π(s), projecting every state changes nothing.
        let projected_rewards = Projected { inner: &inst.mdp, agg: &agg };
        let a = nfmle::solve_aggregated_q(&ds, &agg, &projected_rewards, &inst.theta_star, gamma, 1e-12).unwrap();
        let all_projected = ds.map_states(|p| agg.project(p, None)).unwrap();
        let b = nfmle::solve_aggregated_q(&all_projected, &agg, &projected_rewards, &inst.theta_star, gamma, 1e-12).unwrap();
        prop_assert!(a.sup_distance(&b) < 1e-9);
    }

    #[test]
    fn aggregated_likelihood_ignores_row_order(seed in any::<u64>()) {
        let inst = instance(seed, 5, 2);
        let ds = sample(&inst, 1000, seed);
        let agg = Aggregation::identity(Arc::new(ds.support()));
        let ll = nfmle::aggregated_log_likelihood(&ds, &agg, &inst.mdp, &inst.theta_star, ds.gamma());
        prop_assume!(ll.is_ok());
        let mut perm: Vec<usize> = (0..ds.len()).collect();
        let mut rng = instance_rng(seed.wrapping_add(1));
        for i in (1..perm.len()).rev() {
            perm.swap(i, rand::Rng::gen_range(&mut rng, 0..=i));
        }
        let shuffled = ds.permuted(&perm).unwrap();
        let ll2 = nfmle::aggregated_log_likelihood(&shuffled, &agg, &inst.mdp, &inst.theta_star, ds.gamma()).unwrap();
        prop_assert!((ll.unwrap() - ll2).abs() < 1e-10);
    }

    #[test]
    fn reward_shift_moves_q_and_keeps_likelihood(seed in any::<u64>(), c in -5.0f64..5.0) {
        let inst = instance(seed, 5, 2);
        let ds = sample(&inst, 1500, seed);
        let mut rng = instance_rng(!seed);
        let agg = random_aggregation(&mut rng, Arc::new(ds.support()), 2).unwrap();
        let rewards = Shifted(&inst.mdp);
        let problem = AggregatedProblem::new(&ds, &agg, &rewards, ds.gamma(), 1);
        prop_assume!(problem.is_ok());
        let problem = problem.unwrap();
        let theta = |shift: f64| {
            let mut v = inst.theta_star.values.clone();
            v.push(shift);
            ThetaVector::new(v).unwrap()
        };
        let opts = mdp::SolverOptions::new(1e-12, 100_000).unwrap();
        let (f0, _) = problem.solve(&theta(0.0), None, opts).unwrap();
        let (fc, _) = problem.solve(&theta(c), None, opts).unwrap();
        let expected = c / (1.0 - ds.gamma());
        for (x, y) in f0.table.iter().zip(&fc.table) {
            prop_assert!((y - x - expected).abs() < 1e-8);
        }
        let l0 = problem.log_likelihood(&f0).unwrap();
        let lc = problem.log_likelihood(&fc).unwrap();
        prop_assert!((l0 - lc).abs() < 1e-9);
    }

    #[test]
    fn soft_q_fixed_point_is_consistent(seed in any::<u64>()) {
        let inst = instance(seed, 4, 3);
        let sol = mdp::soft_q_solve(&inst.mdp, &inst.theta_star, 1e-12, 100_000).unwrap();
        let again = mdp::soft_bellman_apply(&sol.q, &inst.mdp, &inst.theta_star).unwrap();
        prop_assert!(again.sup_distance(&sol.q) <= 1e-11);
    }
}
