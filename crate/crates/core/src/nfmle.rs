//! Nested fixed-point maximum likelihood, on aggregated states or on the full
//! MDP.
//!
//! The aggregated operator averages, over observations in cell `(s̃, a)`,
//! `r(sᵢ, aᵢ; θ) + γ·lse f(Π(sᵢ'), ·)`. Rewards are linear in θ, so each cell
//! only needs its mean feature vector and the empirical distribution of
//! next-state clusters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregation::Aggregation;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{self, MdpSpec, QFunction, RewardFeatures, RewardModel, SolverOptions, ThetaVector};
use crate::optim::{self, GradientOptions, NelderMeadOptions, OptimResult};

/// Q-table over aggregated states, `n_s × n_a`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedQ {
    pub n_s: usize,
    pub n_actions: usize,
    pub table: Vec<f64>,
}

impl AggregatedQ {
    pub fn zeros(n_s: usize, n_actions: usize) -> Self {
        Self { n_s, n_actions, table: vec![0.0; n_s * n_actions] }
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.table[c * self.n_actions..(c + 1) * self.n_actions]
    }

    pub fn value(&self, c: usize, a: usize) -> f64 {
        self.table[c * self.n_actions + a]
    }

    pub fn sup_distance(&self, other: &AggregatedQ) -> f64 {
        mdp::sup_diff(&self.table, &other.table)
    }
}

/// The dataset's reward family as recorded in its metadata.
pub fn dataset_rewards(dataset: &Dataset) -> Result<RewardModel> {
    dataset.meta().reward.clone().ok_or_else(|| {
        Error::invalid("dataset metadata carries no point-evaluable reward family; supply the MDP")
    })
}

/// Sufficient statistics of a dataset under an aggregation.
#[derive(Clone, Debug)]
pub struct AggregatedProblem {
    n_s: usize,
    n_a: usize,
    n_params: usize,
    gamma: f64,
    /// Observations per cell `c * n_a + a`.
    counts: Vec<usize>,
    /// Likelihood weight per cell (observation share).
    cell_weights: Vec<f64>,
    /// Mean reward features per cell.
    feature_means: Vec<f64>,
    /// Distinct observed feature vectors, for reward bound checks.
    feature_obs: Vec<Vec<f64>>,
    /// Empirical distribution of next-state clusters per cell.
    next_weights: Vec<Vec<(usize, f64)>>,
}

impl AggregatedProblem {
    /// Builds cell statistics. Every cell needs at least `min_cell_count` observations.
    pub fn new(
        dataset: &Dataset,
        aggregation: &Aggregation,
        rewards: &dyn RewardFeatures,
        gamma: f64,
        min_cell_count: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1)"));
        }
        let n_s = aggregation.n_s();
        let n_a = dataset.n_actions();
        let k = rewards.n_params();
        let cells = n_s * n_a;
        let mut counts = vec![0usize; cells];
        let mut feature_sums = vec![0.0; cells * k];
        let mut next_counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); cells];
        let mut distinct: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cells];
        let locate = |p: &[f64]| {
            aggregation
                .cluster_of(p)
                .ok_or_else(|| Error::invalid(format!("state {p:?} is not covered by the aggregation")))
        };
        for t in dataset.transitions() {
            let c = locate(&t.state)?;
            let cn = locate(&t.next)?;
            let cell = c * n_a + t.action;
            let phi = rewards.features(&t.state, t.action)?;
            if phi.len() != k {
                return Err(Error::invalid("reward features have inconsistent length"));
            }
            counts[cell] += 1;
            for (s, f) in feature_sums[cell * k..(cell + 1) * k].iter_mut().zip(&phi) {
                *s += f;
            }
            if !distinct[cell].contains(&phi) {
                distinct[cell].push(phi);
            }
            *next_counts[cell].entry(cn).or_insert(0) += 1;
        }
        let threshold = min_cell_count.max(1);
        for c in 0..n_s {
            for a in 0..n_a {
                let n = counts[c * n_a + a];
                if n < threshold {
                    return Err(Error::Coverage(format!(
                        "aggregated cell (state {c} at {:?}, action {a}) has {n} observations, need {threshold}",
                        aggregation.representative(c)
                    )));
                }
            }
        }
        let mut feature_means = feature_sums;
        for cell in 0..cells {
            for v in &mut feature_means[cell * k..(cell + 1) * k] {
                *v /= counts[cell] as f64;
            }
        }
        let next_weights = next_counts
            .into_iter()
            .zip(&counts)
            .map(|(m, &n)| m.into_iter().map(|(c, k)| (c, k as f64 / n as f64)).collect())
            .collect();
        let n_obs = dataset.len();
        let cell_weights = counts.iter().map(|&c| c as f64 / n_obs as f64).collect();
        Ok(Self {
            n_s,
            n_a,
            n_params: k,
            gamma,
            counts,
            cell_weights,
            feature_means,
            feature_obs: distinct.into_iter().flatten().collect(),
            next_weights,
        })
    }

    /// Builds a problem from population quantities: per-cell likelihood
    /// weights, mean reward features and next-cluster distributions.
    pub(crate) fn from_parts(
        n_s: usize,
        n_a: usize,
        gamma: f64,
        cell_weights: Vec<f64>,
        feature_means: Vec<f64>,
        next_weights: Vec<Vec<(usize, f64)>>,
        n_params: usize,
    ) -> Self {
        Self {
            n_s,
            n_a,
            n_params,
            gamma,
            counts: vec![0; n_s * n_a],
            cell_weights,
            feature_means,
            feature_obs: Vec::new(),
            next_weights,
        }
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn n_actions(&self) -> usize {
        self.n_a
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Observation count of cell `(c, a)`.
    pub fn count(&self, c: usize, a: usize) -> usize {
        self.counts[c * self.n_a + a]
    }

    fn check_theta(&self, theta: &ThetaVector) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::invalid(format!(
                "theta has {} entries, reward needs {}",
                theta.len(),
                self.n_params
            )));
        }
        Ok(())
    }

    /// Cell-average rewards `r̄(s̃, a; θ)`.
    pub fn cell_rewards(&self, theta: &ThetaVector) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let k = self.n_params;
        Ok((0..self.counts.len())
            .map(|cell| mdp::dot(&self.feature_means[cell * k..(cell + 1) * k], theta.as_slice()))
            .collect())
    }

    /// Largest `|r(sᵢ, aᵢ; θ)|` over observations.
    pub fn max_abs_reward(&self, theta: &ThetaVector) -> f64 {
        self.feature_obs
            .iter()
            .map(|phi| mdp::dot(phi, theta.as_slice()).abs())
            .fold(0.0, f64::max)
    }

    fn sweep(&self, rewards: &[f64], f: &[f64], values: &mut [f64], out: &mut [f64]) {
        let n_a = self.n_a;
        for (c, v) in values.iter_mut().enumerate() {
            *v = mdp::lse(&f[c * n_a..(c + 1) * n_a]);
        }
        for (cell, o) in out.iter_mut().enumerate() {
            let cont: f64 = self.next_weights[cell].iter().map(|&(c, w)| w * values[c]).sum();
            *o = rewards[cell] + self.gamma * cont;
        }
    }

    fn check_shape(&self, f: &AggregatedQ) -> Result<()> {
        if f.n_s != self.n_s || f.n_actions != self.n_a || f.table.len() != self.n_s * self.n_a {
            return Err(Error::invalid("aggregated Q shape does not match the aggregation"));
        }
        Ok(())
    }

    /// One application of the empirical aggregated operator.
    pub fn apply(&self, f: &AggregatedQ, theta: &ThetaVector) -> Result<AggregatedQ> {
        self.check_shape(f)?;
        let rewards = self.cell_rewards(theta)?;
        let mut values = vec![0.0; self.n_s];
        let mut out = vec![0.0; f.table.len()];
        self.sweep(&rewards, &f.table, &mut values, &mut out);
        Ok(AggregatedQ { n_s: self.n_s, n_actions: self.n_a, table: out })
    }

    /// Fixed point of [`AggregatedProblem::apply`]; returns the table and the iteration count.
    pub fn solve(
        &self,
        theta: &ThetaVector,
        init: Option<&AggregatedQ>,
        opts: SolverOptions,
    ) -> Result<(AggregatedQ, usize)> {
        let opts = SolverOptions::new(opts.tol, opts.max_iter)?;
        let rewards = self.cell_rewards(theta)?;
        let mut current = match init {
            Some(f) => {
                self.check_shape(f)?;
                f.table.clone()
            }
            None => vec![0.0; self.n_s * self.n_a],
        };
        let mut next = vec![0.0; current.len()];
        let mut values = vec![0.0; self.n_s];
        let mut residual = f64::INFINITY;
        for iter in 1..=opts.max_iter {
            self.sweep(&rewards, &current, &mut values, &mut next);
            residual = mdp::sup_diff(&next, &current);
            std::mem::swap(&mut current, &mut next);
            if residual <= opts.tol || self.gamma == 0.0 {
                return Ok((AggregatedQ { n_s: self.n_s, n_actions: self.n_a, table: current }, iter));
            }
        }
        Err(Error::Convergence { iterations: opts.max_iter, residual })
    }

    /// `(1/N) Σᵢ [f(Π(sᵢ), aᵢ) − lse f(Π(sᵢ), ·)]`.
    pub fn log_likelihood(&self, f: &AggregatedQ) -> Result<f64> {
        self.check_shape(f)?;
        let n_a = self.n_a;
        let mut total = 0.0;
        for c in 0..self.n_s {
            let row = f.row(c);
            let z = mdp::lse(row);
            for a in 0..n_a {
                let w = self.cell_weights[c * n_a + a];
                if w > 0.0 {
                    total += w * (row[a] - z);
                }
            }
        }
        Ok(total)
    }
}

/// One application of the empirical aggregated Bellman operator.
pub fn empirical_bellman_apply(
    f: &AggregatedQ,
    dataset: &Dataset,
    aggregation: &Aggregation,
    rewards: &dyn RewardFeatures,
    theta: &ThetaVector,
    gamma: f64,
) -> Result<AggregatedQ> {
    AggregatedProblem::new(dataset, aggregation, rewards, gamma, 1)?.apply(f, theta)
}

/// Fixed point of the empirical aggregated Bellman operator, from `f ≡ 0`.
pub fn solve_aggregated_q(
    dataset: &Dataset,
    aggregation: &Aggregation,
    rewards: &dyn RewardFeatures,
    theta: &ThetaVector,
    gamma: f64,
    tol: f64,
) -> Result<AggregatedQ> {
    let problem = AggregatedProblem::new(dataset, aggregation, rewards, gamma, 1)?;
    Ok(problem.solve(theta, None, SolverOptions::new(tol, mdp::DEFAULT_MAX_ITER)?)?.0)
}

/// Estimated aggregated log-likelihood at `theta`.
pub fn aggregated_log_likelihood(
    dataset: &Dataset,
    aggregation: &Aggregation,
    rewards: &dyn RewardFeatures,
    theta: &ThetaVector,
    gamma: f64,
) -> Result<f64> {
    let problem = AggregatedProblem::new(dataset, aggregation, rewards, gamma, 1)?;
    let (f, _) = problem.solve(theta, None, SolverOptions::default())?;
    problem.log_likelihood(&f)
}

/// Outer optimizer choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    NelderMead(NelderMeadOptions),
    GradientAscent(GradientOptions),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::NelderMead(NelderMeadOptions::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NfmleOptions {
    pub optimizer: Optimizer,
    pub inner: SolverOptions,
    /// Minimum observations per aggregated cell.
    pub min_cell_count: usize,
    /// Rewards beyond this bound make a candidate θ infeasible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

impl Default for NfmleOptions {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            inner: SolverOptions::default(),
            min_cell_count: 1,
            r_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub theta: Vec<f64>,
    pub log_likelihood: f64,
}

/// Result of one likelihood maximization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub theta_hat: ThetaVector,
    pub log_likelihood: f64,
    pub log_likelihood_init: f64,
    /// Inner fixed-point iteration counts: iterations → number of solves.
    pub inner_iterations: BTreeMap<usize, usize>,
    pub outer_trace: Vec<TracePoint>,
    pub outer_iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<serde_json::Value>,
}

impl EstimationReport {
    pub fn squared_error(&self, theta_star: &ThetaVector) -> f64 {
        self.theta_hat.squared_distance(theta_star)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs the outer loop over `objective`, which returns the likelihood and
/// the inner iteration count for a parameter vector.
fn maximize<F>(mut objective: F, theta_init: &ThetaVector, opts: &NfmleOptions) -> Result<EstimationReport>
where
    F: FnMut(&ThetaVector) -> Result<(f64, usize)>,
{
    let mut histogram = BTreeMap::new();
    let mut infeasible = 0usize;
    let mut eval = |x: &[f64]| -> Result<f64> {
        let theta = theta_init.with_values(x);
        match objective(&theta) {
            Ok((ll, iters)) => {
                *histogram.entry(iters).or_insert(0) += 1;
                Ok(ll)
            }
            Err(Error::RewardBound { .. }) | Err(Error::Convergence { .. }) => {
                infeasible += 1;
                Ok(f64::NEG_INFINITY)
            }
            Err(e) => Err(e),
        }
    };
    let ll_init = eval(theta_init.as_slice())?;
    let bounds = theta_init.bounds.as_deref();
    let result: OptimResult = match &opts.optimizer {
        Optimizer::NelderMead(nm) => optim::nelder_mead_max(&mut eval, theta_init.as_slice(), bounds, nm)?,
        Optimizer::GradientAscent(g) => optim::gradient_ascent_max(&mut eval, theta_init.as_slice(), bounds, g)?,
    };
    drop(eval);
    let mut warning = None;
    if !result.converged {
        warning = Some(format!(
            "outer optimizer stopped after {} iterations without meeting its tolerance; returning best point",
            result.iterations
        ));
    }
    if infeasible > 0 {
        let note = format!("{infeasible} candidate parameter vectors were infeasible");
        warning = Some(match warning {
            Some(w) => format!("{w}; {note}"),
            None => note,
        });
    }
    if !result.fx.is_finite() {
        return Err(Error::invalid("no feasible parameter vector was found"));
    }
    Ok(EstimationReport {
        theta_hat: theta_init.with_values(&result.x),
        log_likelihood: result.fx,
        log_likelihood_init: ll_init,
        inner_iterations: histogram,
        outer_trace: result
            .trace
            .into_iter()
            .map(|(theta, log_likelihood)| TracePoint { theta, log_likelihood })
            .collect(),
        outer_iterations: result.iterations,
        evaluations: result.evaluations + 1,
        converged: result.converged,
        warning,
        diagnostics: None,
    })
}

/// Maximizes the estimated aggregated likelihood over θ, warm-starting inner solves.
pub fn nfmle_estimate(
    dataset: &Dataset,
    aggregation: &Aggregation,
    rewards: &dyn RewardFeatures,
    theta_init: &ThetaVector,
    opts: &NfmleOptions,
) -> Result<EstimationReport> {
    let problem = AggregatedProblem::new(dataset, aggregation, rewards, dataset.gamma(), opts.min_cell_count)?;
    nfmle_estimate_problem(&problem, theta_init, opts)
}

/// [`nfmle_estimate`] on precomputed cell statistics.
pub fn nfmle_estimate_problem(
    problem: &AggregatedProblem,
    theta_init: &ThetaVector,
    opts: &NfmleOptions,
) -> Result<EstimationReport> {
    let mut warm: Option<AggregatedQ> = None;
    maximize(
        |theta| {
            if let Some(r_max) = opts.r_max {
                let worst = problem.max_abs_reward(theta);
                if worst > r_max {
                    return Err(Error::RewardBound { state: 0, action: 0, value: worst, r_max });
                }
            }
            let (f, iters) = problem.solve(theta, warm.as_ref(), opts.inner)?;
            let ll = problem.log_likelihood(&f)?;
            warm = Some(f);
            Ok((ll, iters))
        },
        theta_init,
        opts,
    )
}

/// Observed `(state, action)` counts, indexed into the MDP's states.
#[derive(Clone, Debug)]
pub struct ExactProblem<'a> {
    mdp: &'a MdpSpec,
    counts: Vec<usize>,
    n_obs: usize,
}

impl<'a> ExactProblem<'a> {
    pub fn new(dataset: &Dataset, mdp: &'a MdpSpec) -> Result<Self> {
        if dataset.n_actions() != mdp.n_actions() {
            return Err(Error::invalid("dataset and MDP disagree on the number of actions"));
        }
        let n_a = mdp.n_actions();
        let mut counts = vec![0usize; mdp.n_states() * n_a];
        for t in dataset.transitions() {
            let s = mdp
                .state_index(&t.state)
                .ok_or_else(|| Error::invalid(format!("dataset state {:?} is not an MDP state", t.state)))?;
            counts[s * n_a + t.action] += 1;
        }
        Ok(Self { mdp, counts, n_obs: dataset.len() })
    }

    /// `(1/N) Σᵢ [Q(sᵢ, aᵢ) − lse Q(sᵢ, ·)]`.
    pub fn log_likelihood(&self, q: &QFunction) -> f64 {
        let n_a = self.mdp.n_actions();
        let mut total = 0.0;
        for s in 0..self.mdp.n_states() {
            let row = q.row(s);
            let z = mdp::lse(row);
            for a in 0..n_a {
                let n = self.counts[s * n_a + a];
                if n > 0 {
                    total += n as f64 * (row[a] - z);
                }
            }
        }
        total / self.n_obs as f64
    }
}

/// Full-state likelihood maximization with inner solves on the whole MDP.
pub fn exact_nfmle(
    dataset: &Dataset,
    mdp_spec: &MdpSpec,
    theta_init: &ThetaVector,
    opts: &NfmleOptions,
) -> Result<EstimationReport> {
    if (mdp_spec.gamma() - dataset.gamma()).abs() > 1e-12 {
        return Err(Error::invalid("dataset and MDP disagree on the discount"));
    }
    let problem = ExactProblem::new(dataset, mdp_spec)?;
    let mut warm: Option<QFunction> = None;
    maximize(
        |theta| {
            if let Some(r_max) = opts.r_max {
                let worst = mdp_spec.max_abs_reward(theta);
                if worst > r_max {
                    return Err(Error::RewardBound { state: 0, action: 0, value: worst, r_max });
                }
            }
            let sol = mdp::soft_q_solve_from(mdp_spec, theta, warm.as_ref(), opts.inner)?;
            let ll = problem.log_likelihood(&sol.q);
            warm = Some(sol.q);
            Ok((ll, sol.iterations))
        },
        theta_init,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Transition};
    use crate::mdp::StateSpace;
    use std::sync::Arc;

    fn meta(gamma: f64) -> DatasetMeta {
        DatasetMeta {
            gamma,
            n_actions: 2,
            env_digest: String::new(),
            seed: None,
            n: 0,
            dims: 0,
            reward: Some(RewardModel::BusEngine { mileage_coord: 0 }),
        }
    }

    fn t(s: f64, a: usize, n: f64) -> Transition {
        Transition { state: vec![s], action: a, next: vec![n] }
    }

    fn single_cluster(ds: &Dataset) -> Aggregation {
        let space = Arc::new(ds.support());
        let n = space.len();
        Aggregation::new(space, vec![0; n], vec![0]).unwrap()
    }

    #[test]
    fn one_term_average() {
        let ds = Dataset::new(vec![t(2.0, 0, 3.0), t(3.0, 1, 2.0)], meta(0.5)).unwrap();
        let agg = single_cluster(&ds);
        let theta = ThetaVector::new(vec![1.0, 4.0]).unwrap();
        let rewards = dataset_rewards(&ds).unwrap();
        let f = empirical_bellman_apply(&AggregatedQ::zeros(1, 2), &ds, &agg, &rewards, &theta, 0.5).unwrap();
        assert!((f.value(0, 0) - (-2.0 + 0.5 * 2f64.ln())).abs() < 1e-15);
        assert!((f.value(0, 1) - (-4.0 + 0.5 * 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn zero_discount_gives_cell_average_rewards() {
        let ds = Dataset::new(vec![t(2.0, 0, 3.0), t(4.0, 0, 2.0), t(3.0, 1, 2.0)], meta(0.0)).unwrap();
        let agg = single_cluster(&ds);
        let theta = ThetaVector::new(vec![1.0, 4.0]).unwrap();
        let problem = AggregatedProblem::new(&ds, &agg, &dataset_rewards(&ds).unwrap(), 0.0, 1).unwrap();
        let (f, iters) = problem.solve(&theta, None, SolverOptions::default()).unwrap();
        assert_eq!(iters, 1);
        assert_eq!(f.table, vec![-3.0, -4.0]);
    }

    #[test]
    fn missing_cell_is_coverage_error() {
        let ds = Dataset::new(vec![t(2.0, 0, 3.0), t(3.0, 0, 2.0)], meta(0.5)).unwrap();
        let agg = single_cluster(&ds);
        let err = AggregatedProblem::new(&ds, &agg, &dataset_rewards(&ds).unwrap(), 0.5, 1).unwrap_err();
        assert!(matches!(err, Error::Coverage(ref m) if m.contains("action 1")), "{err}");
    }

    #[test]
    fn warm_start_is_immediate() {
        let ds = Dataset::new(vec![t(2.0, 0, 3.0), t(3.0, 1, 2.0), t(3.0, 0, 3.0)], meta(0.9)).unwrap();
        let agg = Aggregation::identity(Arc::new(ds.support()));
        let problem = AggregatedProblem::new(&ds, &agg, &dataset_rewards(&ds).unwrap(), 0.9, 1);
        // State 2.0 never takes action 1 under identity aggregation.
        assert!(problem.is_err());
        let agg = single_cluster(&ds);
        let problem = AggregatedProblem::new(&ds, &agg, &dataset_rewards(&ds).unwrap(), 0.9, 1).unwrap();
        let theta = ThetaVector::new(vec![0.3, 1.0]).unwrap();
        let (cold, _) = problem.solve(&theta, None, SolverOptions::default()).unwrap();
        let (warm, iters) = problem.solve(&theta, Some(&cold), SolverOptions::default()).unwrap();
        assert!(iters <= 2);
        assert!(warm.sup_distance(&cold) <= 1e-10);
    }

    #[test]
    fn uniform_table_likelihood() {
        let ds = Dataset::new(vec![t(2.0, 0, 3.0), t(3.0, 1, 2.0)], meta(0.5)).unwrap();
        let agg = single_cluster(&ds);
        let problem = AggregatedProblem::new(&ds, &agg, &dataset_rewards(&ds).unwrap(), 0.5, 1).unwrap();
        let f = AggregatedQ { n_s: 1, n_actions: 2, table: vec![1.7, 1.7] };
        assert!((problem.log_likelihood(&f).unwrap() + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn likelihood_ascends_from_init() {
        let space = Arc::new(StateSpace::new(vec![vec![0.0], vec![1.0]]).unwrap());
        let ds = Dataset::new(
            vec![t(0.0, 0, 1.0), t(0.0, 1, 0.0), t(1.0, 1, 0.0), t(1.0, 0, 1.0), t(1.0, 1, 1.0), t(0.0, 0, 0.0)],
            meta(0.5),
        )
        .unwrap();
        let agg = Aggregation::identity(space);
        let init = ThetaVector::with_bounds(vec![0.5, 0.5], vec![(-5.0, 5.0), (-5.0, 5.0)]).unwrap();
        let rep =
            nfmle_estimate(&ds, &agg, &dataset_rewards(&ds).unwrap(), &init, &NfmleOptions::default()).unwrap();
        assert!(rep.log_likelihood >= rep.log_likelihood_init);
        for w in rep.outer_trace.windows(2) {
            assert!(w[1].log_likelihood >= w[0].log_likelihood);
        }
    }
}
