//! Numerical evaluation of the aggregation error bounds.
//!
//! Inequality checks on small tabular instances are exact up to fixed-point
//! tolerance: population likelihoods are built from the true kernel, the
//! data law `μ(s)·π*(a|s)` and the μ-weighted aggregated MDP.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{self, Aggregation};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{self, MdpSpec, QFunction, RewardFeatures, RewardModel, SolverOptions, ThetaVector};
use crate::nfmle::{AggregatedProblem, AggregatedQ};
use crate::optim::{self, NelderMeadOptions};

/// Largest state count for which exact partition search is attempted.
pub const EXACT_PARTITION_LIMIT: usize = 10;

/// One checked inequality `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityRecord {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// False when either side is a Monte Carlo or otherwise approximate quantity.
    pub certified: bool,
}

impl InequalityRecord {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, certified: bool) -> Self {
        Self { name: name.into(), lhs, rhs, holds: lhs <= rhs, certified }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Q error `max_(s,a) |Q(s,a) − Q(Π(s),a)|` of the true Q-function.
pub fn q_error(q_true: &QFunction, aggregation: &Aggregation) -> Result<f64> {
    aggregation::aggregation_q_error(q_true, aggregation)
}

/// Smallest eigenvalue of the negated central-difference Hessian of `f` at
/// `theta`, with the Hessian's relative asymmetry.
pub fn concavity_of<F>(f: F, theta: &[f64], h: f64) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let hess = optim::fd_hessian(f, theta, h)?;
    Ok((optim::min_eigenvalue(&(-&hess)), optim::asymmetry(&hess)))
}

/// Curvature constant of the estimated aggregated likelihood at `theta`.
pub fn estimate_concavity(
    dataset: &Dataset,
    aggregation: &Aggregation,
    rewards: &dyn RewardFeatures,
    theta: &ThetaVector,
    h: f64,
) -> Result<f64> {
    let problem = AggregatedProblem::new(dataset, aggregation, rewards, dataset.gamma(), 1)?;
    let opts = SolverOptions::new(1e-13, 100_000)?;
    let mut warm: Option<AggregatedQ> = None;
    let (c_h, _) = concavity_of(
        |x| {
            let (f, _) = problem.solve(&theta.with_values(x), warm.as_ref(), opts)?;
            let ll = problem.log_likelihood(&f)?;
            warm = Some(f);
            Ok(ll)
        },
        theta.as_slice(),
        h,
    )?;
    Ok(c_h)
}

/// Population quantities of a tabular MDP under its own optimal policy.
#[derive(Clone, Debug)]
pub struct PopulationModel<'a> {
    mdp: &'a MdpSpec,
    theta_star: ThetaVector,
    mu: Vec<f64>,
    q_star: QFunction,
    /// `π*(a|s)` row-major.
    pi_star: Vec<f64>,
    opts: SolverOptions,
}

impl<'a> PopulationModel<'a> {
    /// Data law with uniform `μ`.
    pub fn new(mdp: &'a MdpSpec, theta_star: &ThetaVector) -> Result<Self> {
        let n = mdp.n_states();
        Self::with_mu(mdp, theta_star, vec![1.0 / n as f64; n])
    }

    pub fn with_mu(mdp: &'a MdpSpec, theta_star: &ThetaVector, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != mdp.n_states() || mu.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("mu must be a non-negative vector over MDP states"));
        }
        let total: f64 = mu.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("mu must have positive mass"));
        }
        let mu: Vec<f64> = mu.iter().map(|m| m / total).collect();
        let opts = SolverOptions::new(1e-13, 1_000_000)?;
        let q_star = mdp::soft_q_solve_from(mdp, theta_star, None, opts)?.q;
        let n_a = mdp.n_actions();
        let mut pi_star = vec![0.0; mdp.n_states() * n_a];
        for s in 0..mdp.n_states() {
            mdp::softmax_into(q_star.row(s), &mut pi_star[s * n_a..(s + 1) * n_a]);
        }
        Ok(Self { mdp, theta_star: theta_star.clone(), mu, q_star, pi_star, opts })
    }

    pub fn q_star(&self) -> &QFunction {
        &self.q_star
    }

    pub fn theta_star(&self) -> &ThetaVector {
        &self.theta_star
    }

    fn data_weight(&self, s: usize, a: usize) -> f64 {
        self.mu[s] * self.pi_star[s * self.mdp.n_actions() + a]
    }

    /// `E[L(θ)]` on the full MDP.
    pub fn expected_log_likelihood(&self, theta: &ThetaVector) -> Result<f64> {
        let q = mdp::soft_q_solve_from(self.mdp, theta, None, self.opts)?.q;
        Ok(self.expected_log_likelihood_of(&q))
    }

    fn expected_log_likelihood_of(&self, q: &QFunction) -> f64 {
        let n_a = self.mdp.n_actions();
        let mut total = 0.0;
        for s in 0..self.mdp.n_states() {
            let row = q.row(s);
            let z = mdp::lse(row);
            for a in 0..n_a {
                total += self.data_weight(s, a) * (row[a] - z);
            }
        }
        total
    }

    /// Cluster index of every MDP state.
    fn clusters(&self, aggregation: &Aggregation) -> Result<Vec<usize>> {
        (0..self.mdp.n_states())
            .map(|s| {
                aggregation.cluster_of(self.mdp.state(s)).ok_or_else(|| {
                    Error::invalid(format!("MDP state {:?} is not covered by the aggregation", self.mdp.state(s)))
                })
            })
            .collect()
    }

    /// The aggregated MDP with μ-weighted rewards and transitions, and the
    /// data-law likelihood weights per cell.
    pub fn aggregated_problem(&self, aggregation: &Aggregation) -> Result<AggregatedProblem> {
        let cluster = self.clusters(aggregation)?;
        let n_s = aggregation.n_s();
        let n_a = self.mdp.n_actions();
        let k = self.mdp.n_params();
        let mut mass = vec![0.0; n_s];
        for (s, &c) in cluster.iter().enumerate() {
            mass[c] += self.mu[s];
        }
        if let Some(c) = mass.iter().position(|&m| m <= 0.0) {
            return Err(Error::DiagnosticUnavailable(format!("cluster {c} has no probability mass")));
        }
        let mut weights = vec![0.0; n_s * n_a];
        let mut features = vec![0.0; n_s * n_a * k];
        let mut next = vec![vec![0.0; n_s]; n_s * n_a];
        for (s, &c) in cluster.iter().enumerate() {
            let w = self.mu[s] / mass[c];
            for a in 0..n_a {
                let cell = c * n_a + a;
                weights[cell] += self.data_weight(s, a);
                for (f, phi) in features[cell * k..(cell + 1) * k].iter_mut().zip(self.mdp.feature(s, a)) {
                    *f += w * phi;
                }
                for &(sn, p) in self.mdp.transition_row(s, a) {
                    next[cell][cluster[sn]] += w * p;
                }
            }
        }
        let next_weights = next
            .into_iter()
            .map(|row| row.into_iter().enumerate().filter(|&(_, p)| p > 0.0).collect())
            .collect();
        Ok(AggregatedProblem::from_parts(n_s, n_a, self.mdp.gamma(), weights, features, next_weights, k))
    }

    /// `E[L̃(θ)]` for the aggregated MDP.
    pub fn expected_aggregated_log_likelihood(&self, aggregation: &Aggregation, theta: &ThetaVector) -> Result<f64> {
        let problem = self.aggregated_problem(aggregation)?;
        let (f, _) = problem.solve(theta, None, self.opts)?;
        problem.log_likelihood(&f)
    }
}

/// Population-level comparison of an aggregation against the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationCheck {
    pub theta_star: Vec<f64>,
    pub theta_tilde: Vec<f64>,
    /// `‖θ̃ − θ*‖²`.
    pub eps_asy: f64,
    pub eps_q: f64,
    pub c_h: f64,
    /// `E[L(θ*)] − E[L̃(θ*)]`.
    pub likelihood_gap: f64,
    pub gamma: f64,
    pub lemma: InequalityRecord,
    pub gap_bound: InequalityRecord,
    pub theorem1: InequalityRecord,
}

/// Options for [`population_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationOptions {
    /// Relative finite-difference step for curvature estimates.
    pub h: f64,
    /// Points on the segment `[θ*, θ̃]` at which curvature is evaluated.
    pub segment_points: usize,
    /// Overrides the estimated curvature constant.
    pub c_h: Option<f64>,
}

impl Default for PopulationOptions {
    fn default() -> Self {
        Self { h: 1e-3, segment_points: 5, c_h: None }
    }
}

fn is_injective(aggregation: &Aggregation, mdp: &MdpSpec) -> bool {
    let mut seen = vec![false; aggregation.n_s()];
    for s in 0..mdp.n_states() {
        match aggregation.cluster_of(mdp.state(s)) {
            Some(c) if !seen[c] => seen[c] = true,
            _ => return false,
        }
    }
    true
}

/// Maximizer of `E[L̃]`, polished with Newton steps on finite differences.
fn maximize_population(
    pop: &PopulationModel<'_>,
    problem: &AggregatedProblem,
    h: f64,
) -> Result<Vec<f64>> {
    let theta_star = pop.theta_star();
    let eval = |x: &[f64]| -> Result<f64> {
        let (f, _) = problem.solve(&theta_star.with_values(x), None, pop.opts)?;
        problem.log_likelihood(&f)
    };
    let nm = NelderMeadOptions { xtol: 1e-10, ftol: 1e-15, max_iter: 20_000, initial_step: None };
    let unbounded = ThetaVector { values: theta_star.values.clone(), bounds: None };
    let res = optim::nelder_mead_max(
        |x| match eval(x) {
            Err(Error::Convergence { .. }) => Ok(f64::NEG_INFINITY),
            other => other,
        },
        unbounded.as_slice(),
        None,
        &nm,
    )?;
    if !res.fx.is_finite() {
        return Err(Error::DiagnosticUnavailable("aggregated likelihood could not be maximized".into()));
    }
    let mut x = res.x;
    let mut fx = res.fx;
    for _ in 0..5 {
        let g = optim::fd_gradient(eval, &x, h * 0.1)?;
        let hess = optim::fd_hessian(eval, &x, h)?;
        let neg = -hess;
        let Some(chol) = neg.clone().cholesky() else { break };
        let step = chol.solve(&nalgebra::DVector::from_vec(g));
        let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let fc = eval(&cand)?;
        if fc > fx {
            x = cand;
            fx = fc;
        } else {
            break;
        }
    }
    if !res.converged && fx <= res.fx {
        return Err(Error::DiagnosticUnavailable(
            "optimizer did not converge on the population likelihood".into(),
        ));
    }
    Ok(x)
}

/// Computes θ̃, ε_Q, C_H and the likelihood gap, and checks the three
/// population inequalities.
pub fn population_check(
    mdp: &MdpSpec,
    theta_star: &ThetaVector,
    aggregation: &Aggregation,
    opts: &PopulationOptions,
) -> Result<PopulationCheck> {
    if mdp.n_states() > EXACT_PARTITION_LIMIT {
        return Err(Error::DiagnosticUnavailable(format!(
            "population checks need at most {EXACT_PARTITION_LIMIT} states"
        )));
    }
    let pop = PopulationModel::new(mdp, theta_star)?;
    let problem = pop.aggregated_problem(aggregation)?;
    let gamma = mdp.gamma();
    let eps_q = q_error(pop.q_star(), aggregation)?;

    let ll_full = pop.expected_log_likelihood(theta_star)?;
    let (f_star, _) = problem.solve(theta_star, None, pop.opts)?;
    let ll_agg = problem.log_likelihood(&f_star)?;

    // An injective Π reproduces the full model, whose expected likelihood peaks at θ*.
    let (theta_tilde, gap) = if is_injective(aggregation, mdp) {
        (theta_star.values.clone(), 0.0)
    } else {
        (maximize_population(&pop, &problem, opts.h)?, ll_full - ll_agg)
    };
    let eps_asy: f64 = theta_tilde
        .iter()
        .zip(&theta_star.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let c_h = match opts.c_h {
        Some(c) => c,
        None => {
            let m = opts.segment_points.max(1);
            let mut worst = f64::INFINITY;
            for i in 0..m {
                let t = if m == 1 { 0.0 } else { i as f64 / (m - 1) as f64 };
                let point: Vec<f64> = theta_star
                    .values
                    .iter()
                    .zip(&theta_tilde)
                    .map(|(a, b)| a + t * (b - a))
                    .collect();
                let (c, _) = concavity_of(
                    |x| {
                        let (f, _) = problem.solve(&theta_star.with_values(x), None, pop.opts)?;
                        problem.log_likelihood(&f)
                    },
                    &point,
                    opts.h,
                )?;
                worst = worst.min(c);
            }
            worst
        }
    };
    if !(c_h > 0.0) {
        return Err(Error::DiagnosticUnavailable(format!(
            "expected aggregated likelihood is not strongly concave here (C_H = {c_h:e})"
        )));
    }
    Ok(PopulationCheck {
        theta_star: theta_star.values.clone(),
        theta_tilde,
        eps_asy,
        eps_q,
        c_h,
        likelihood_gap: gap,
        gamma,
        lemma: InequalityRecord::new("likelihood_bound", eps_asy, gap / c_h, true),
        gap_bound: InequalityRecord::new("likelihood_gap", gap, 4.0 * eps_q / (1.0 - gamma), true),
        theorem1: InequalityRecord::new("theorem1", eps_asy, 4.0 * eps_q / (c_h * (1.0 - gamma)), true),
    })
}

/// `‖θ̃ − θ*‖² ≤ 4 ε_Q / (C_H (1 − γ))`; `c_h = None` estimates C_H on the segment `[θ*, θ̃]`.
pub fn theorem1_check(
    mdp: &MdpSpec,
    theta_star: &ThetaVector,
    aggregation: &Aggregation,
    c_h: Option<f64>,
) -> Result<InequalityRecord> {
    let opts = PopulationOptions { c_h, ..PopulationOptions::default() };
    Ok(population_check(mdp, theta_star, aggregation, &opts)?.theorem1)
}

/// `‖θ̃ − θ*‖² ≤ E[L(θ*) − L̃(θ*)] / C_H`.
pub fn lemma_likelihood_bound_check(
    mdp: &MdpSpec,
    theta_star: &ThetaVector,
    aggregation: &Aggregation,
    c_h: Option<f64>,
) -> Result<InequalityRecord> {
    let opts = PopulationOptions { c_h, ..PopulationOptions::default() };
    Ok(population_check(mdp, theta_star, aggregation, &opts)?.lemma)
}

/// Inputs of the finite-sample bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Inputs {
    pub n_s: usize,
    pub n_a: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub c_h: f64,
    pub c_uni: f64,
    pub c_q: f64,
    pub c_clustering: f64,
    /// Sample size.
    pub n: f64,
    pub delta: f64,
    /// Cardinality (or covering-number proxy) of the parameter set.
    pub theta_card: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Bound {
    pub bias: f64,
    /// The two sampling terms, in the order they appear in the bound.
    pub variance_terms: [f64; 2],
    pub variance: f64,
    pub total: f64,
}

/// Finite-sample bound on `‖θ̂ − θ*‖` as bias plus variance.
pub fn theorem2_bound(p: &Theorem2Inputs) -> Result<Theorem2Bound> {
    if p.n_s < 2 {
        return Err(Error::invalid("the bound needs n_s ≥ 2"));
    }
    if p.n_a < 1 {
        return Err(Error::invalid("n_a must be positive"));
    }
    if !(0.0..1.0).contains(&p.gamma) {
        return Err(Error::invalid("gamma must lie in [0, 1)"));
    }
    if !(p.c_h > 0.0) || !(p.r_max >= 0.0) || !(p.c_q >= 0.0) || !(p.c_clustering >= 0.0) {
        return Err(Error::invalid("C_H must be positive; R_max, C_Q, C_clustering non-negative"));
    }
    if !(p.c_uni > 0.0 && p.c_uni <= 1.0) {
        return Err(Error::invalid("C_uni must lie in (0, 1]"));
    }
    if !(p.delta > 0.0 && p.delta < 1.0) || !(p.theta_card >= 1.0) || !(p.n >= 1.0) {
        return Err(Error::invalid("need δ in (0, 1), |Θ| ≥ 1 and N ≥ 1"));
    }
    let cells = (p.n_s * p.n_a) as f64;
    let dev = ((4.0 * cells * p.theta_card / p.delta).ln() / (2.0 * p.n)).sqrt();
    let margin = p.c_uni - dev - 1.0 / p.n;
    if margin < 0.0 {
        return Err(Error::BoundUndefined { margin });
    }
    let g = 1.0 - p.gamma;
    let r = p.r_max + 1.0;
    let cover = 4.0 / ((p.n_s as f64).powf(1.0 / p.n_a as f64) - 1.0);
    let bias = 4.0 / (p.c_h * g) * (r / g * cover + 2.0 * p.c_q + p.c_clustering);
    let v1 = 4.0 * r / (g * p.c_h) * ((4.0 * p.theta_card / p.delta).ln() / (2.0 * p.n)).sqrt();
    let v2 = r / (g * g * p.c_h)
        * ((8.0 * cells * p.theta_card / p.delta).ln() / (2.0 * p.n)).sqrt()
        * (4.0 / (p.c_uni - dev));
    Ok(Theorem2Bound { bias, variance_terms: [v1, v2], variance: v1 + v2, total: bias + v1 + v2 })
}

/// Covering-number proxy for a box: volume divided by `resolution^{n_param}`.
pub fn theta_card_proxy(bounds: &[(f64, f64)], resolution: f64) -> f64 {
    bounds
        .iter()
        .map(|&(lo, hi)| ((hi - lo) / resolution).max(1.0))
        .product()
}

/// One point of a bound sweep over `n_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_s: usize,
    pub c_uni: f64,
    pub bound: Option<Theorem2Bound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined_margin: Option<f64>,
}

/// Evaluates the bound across `n_s`, with coverage `C_uni = c_uni_scale / (n_s·n_a)`
/// (the value for perfectly balanced cells scaled by `c_uni_scale`).
pub fn theorem2_sweep(base: &Theorem2Inputs, n_s_values: &[usize], c_uni_scale: f64) -> Result<Vec<SweepPoint>> {
    n_s_values
        .iter()
        .map(|&n_s| {
            let c_uni = (c_uni_scale / (n_s * base.n_a) as f64).min(1.0);
            let inputs = Theorem2Inputs { n_s, c_uni, ..base.clone() };
            match theorem2_bound(&inputs) {
                Ok(b) => Ok(SweepPoint { n_s, c_uni, bound: Some(b), undefined_margin: None }),
                Err(Error::BoundUndefined { margin }) => {
                    Ok(SweepPoint { n_s, c_uni, bound: None, undefined_margin: Some(margin) })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Index of an interior minimum of the defined totals, if any.
pub fn interior_minimum(points: &[SweepPoint]) -> Option<usize> {
    let totals: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.bound.as_ref().map(|b| (i, b.total)))
        .collect();
    let (pos, _) = totals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))?;
    (pos > 0 && pos + 1 < totals.len()).then(|| totals[pos].0)
}

/// Smallest achievable `ε̂_dis` with exactly `n_s` clusters, by exhaustive
/// search over set partitions. Representatives are chosen optimally per block.
pub fn optimal_dis(q: &QFunction, states: &[Vec<f64>], n_s: usize) -> Result<f64> {
    let n = states.len();
    if n > EXACT_PARTITION_LIMIT {
        return Err(Error::DiagnosticUnavailable(format!(
            "exact partition search is limited to {EXACT_PARTITION_LIMIT} states"
        )));
    }
    if n_s == 0 || n_s > n {
        return Err(Error::invalid(format!("n_s = {n_s} must lie in [1, {n}]")));
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = aggregation::q_distance(q, &states[i], &states[j])?;
        }
    }
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    enumerate_partitions(&mut labels, 1, 1, n_s, &mut |labels| {
        let mut worst = 0.0f64;
        for c in 0..n_s {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let radius = members
                .iter()
                .map(|&r| members.iter().map(|&s| d[s * n + r]).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(radius);
            if worst >= best {
                return;
            }
        }
        best = best.min(worst);
    });
    Ok(best)
}

/// Restricted growth strings with exactly `k` blocks.
fn enumerate_partitions(labels: &mut [usize], pos: usize, used: usize, k: usize, visit: &mut dyn FnMut(&[usize])) {
    let n = labels.len();
    if pos == n {
        if used == k {
            visit(labels);
        }
        return;
    }
    // Not enough positions left to open the remaining blocks.
    if k - used.min(k) > n - pos {
        return;
    }
    for c in 0..used.min(k) {
        labels[pos] = c;
        enumerate_partitions(labels, pos + 1, used, k, visit);
    }
    if used < k {
        labels[pos] = used;
        enumerate_partitions(labels, pos + 1, used + 1, k, visit);
    }
}

/// `|ε̂_dis(Π̂) − min_Π ε̂_dis(Π)|` for small state sets.
pub fn c_clustering(q_hat: &QFunction, aggregation: &Aggregation) -> Result<f64> {
    let achieved = aggregation::aggregation_q_error(q_hat, aggregation)?;
    let best = optimal_dis(q_hat, aggregation.states(), aggregation.n_s())?;
    Ok((achieved - best).abs())
}

/// A random tabular instance for inequality checks.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub mdp: MdpSpec,
    pub theta_star: ThetaVector,
}

/// Random MDP with `n_states` states on a line, uniform features in `[-1, 1]`,
/// exponential-weight transition rows and discount in `[0.5, 0.9]`.
pub fn random_instance(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, n_params: usize) -> Result<RandomInstance> {
    let states = (0..n_states).map(|i| vec![i as f64]).collect();
    let actions = (0..n_actions).map(|a| format!("a{a}")).collect();
    let gamma = rng.gen_range(0.5..0.9);
    let mut rows = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states * n_actions {
        let w: Vec<f64> = (0..n_states).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
        let total: f64 = w.iter().sum();
        let mut row: Vec<(usize, f64)> = w.iter().enumerate().map(|(i, x)| (i, x / total)).collect();
        // Push the rounding residue into the last entry so rows sum to one.
        let residue = 1.0 - row.iter().map(|r| r.1).sum::<f64>();
        row.last_mut().expect("non-empty row").1 += residue;
        rows.push(row);
    }
    let features = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| (0..n_params).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let theta_star = ThetaVector::new((0..n_params).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let mdp = MdpSpec::new(states, actions, gamma, rows, RewardModel::LinearTable { features })?;
    Ok(RandomInstance { mdp, theta_star })
}

/// Random aggregation of `states` into exactly `k` non-empty clusters with a
/// random representative in each.
pub fn random_aggregation(rng: &mut ChaCha8Rng, states: Arc<mdp::StateSpace>, k: usize) -> Result<Aggregation> {
    let n = states.len();
    if k == 0 || k > n {
        return Err(Error::invalid("k must lie in [1, |states|]"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut assign = vec![0; n];
    for (pos, &s) in order.iter().enumerate() {
        assign[s] = if pos < k { pos } else { rng.gen_range(0..k) };
    }
    let mut reps = vec![0; k];
    for (c, rep) in reps.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&s| assign[s] == c).collect();
        *rep = members[rng.gen_range(0..members.len())];
    }
    Aggregation::new(states, assign, reps)
}

/// Seeded generator for instance sweeps.
pub fn instance_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Summary of measurable bound ingredients for one estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_dis_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_h: Option<f64>,
    pub c_uni: f64,
    pub r_max: f64,
    pub gamma: f64,
    pub n_s: usize,
    pub n_a: usize,
    pub n_param: usize,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_clustering: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thm1_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thm2_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thm2_variance: Option<f64>,
    pub inequalities: Vec<InequalityRecord>,
    pub notes: Vec<String>,
}

impl BoundReport {
    /// Plain-text table of the inequality records.
    pub fn table(&self) -> String {
        let mut out = format!("{:<20} {:>14} {:>14} {:>14} {:>6} {:>10}\n", "inequality", "lhs", "rhs", "slack", "holds", "certified");
        for r in &self.inequalities {
            out.push_str(&format!(
                "{:<20} {:>14.6e} {:>14.6e} {:>14.6e} {:>6} {:>10}\n",
                r.name,
                r.lhs,
                r.rhs,
                r.slack(),
                r.holds,
                r.certified
            ));
        }
        out
    }
}

/// Inputs for [`bound_report`].
pub struct DiagnoseInputs<'a> {
    pub dataset: &'a Dataset,
    pub aggregation: &'a Aggregation,
    pub rewards: &'a dyn RewardFeatures,
    pub theta_hat: &'a ThetaVector,
    pub q_hat: Option<&'a QFunction>,
    /// Ground truth, available on simulated environments.
    pub truth: Option<(&'a MdpSpec, &'a ThetaVector)>,
    pub delta: f64,
    pub theta_card: f64,
    pub r_max: Option<f64>,
    pub h: f64,
}

/// Gathers every measurable bound ingredient for one estimate.
pub fn bound_report(inp: &DiagnoseInputs<'_>) -> Result<BoundReport> {
    let ds = inp.dataset;
    let agg = inp.aggregation;
    let n_a = ds.n_actions();
    let gamma = ds.gamma();
    let mut notes = Vec::new();
    let mut inequalities = Vec::new();
    let c_uni = crate::data::empirical_coverage(ds, agg)?;

    let problem = AggregatedProblem::new(ds, agg, inp.rewards, gamma, 1)?;
    let r_max = match inp.r_max {
        Some(r) => r,
        None => {
            notes.push("R_max taken as the largest observed |r| at theta_hat".into());
            problem.max_abs_reward(inp.theta_hat)
        }
    };
    let c_h = match estimate_concavity(ds, agg, inp.rewards, inp.theta_hat, inp.h) {
        Ok(c) => {
            if c <= 0.0 {
                notes.push(format!("estimated C_H = {c:e} is not positive; local strong concavity fails"));
            }
            Some(c)
        }
        Err(e) => {
            notes.push(format!("C_H unavailable: {e}"));
            None
        }
    };
    let eps_dis_hat = inp.q_hat.map(|q| aggregation::aggregation_q_error(q, agg)).transpose()?;
    let c_clustering = match inp.q_hat {
        Some(q) if agg.states().len() <= EXACT_PARTITION_LIMIT => Some(c_clustering(q, agg)?),
        Some(_) => {
            notes.push("C_clustering not evaluated (more than 10 states)".into());
            None
        }
        None => None,
    };

    let mut eps_q = None;
    let mut c_q = None;
    let mut theta_gap = None;
    let mut thm1_bound = None;
    if let Some((mdp, theta_star)) = inp.truth {
        let q_star = mdp::soft_q_solve(mdp, theta_star, 1e-12, 1_000_000)?.q;
        match q_error(&q_star, agg) {
            Ok(e) => eps_q = Some(e),
            Err(e) => notes.push(format!("eps_Q unavailable: {e}")),
        }
        if let Some(q) = inp.q_hat {
            // Q-hat is identified up to an additive constant; report the error after the best shift.
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (i, p) in q.states().iter().enumerate() {
                if let Some(s) = mdp.state_index(p) {
                    for a in 0..n_a {
                        let d = q.value(i, a) - q_star.value(s, a);
                        lo = lo.min(d);
                        hi = hi.max(d);
                    }
                }
            }
            if lo <= hi {
                c_q = Some(0.5 * (hi - lo));
                notes.push("C_Q is the realized sup error of Q-hat on one sample, after removing the best constant shift".into());
            }
        }
        theta_gap = Some(inp.theta_hat.squared_distance(theta_star).sqrt());
        if let (Some(e), Some(c)) = (eps_q, c_h) {
            if c > 0.0 {
                thm1_bound = Some(4.0 * e / (c * (1.0 - gamma)));
            }
        }
        if mdp.n_states() <= EXACT_PARTITION_LIMIT {
            match population_check(mdp, theta_star, agg, &PopulationOptions { h: inp.h, ..Default::default() }) {
                Ok(pc) => inequalities.extend([pc.lemma, pc.gap_bound, pc.theorem1]),
                Err(e) => notes.push(format!("population checks unavailable: {e}")),
            }
        } else if let (Some(e), Some(c)) = (eps_q, c_h) {
            if c > 0.0 {
                // θ̂ stands in for θ̃ and C_H comes from the sample likelihood.
                inequalities.push(InequalityRecord::new(
                    "theorem1_sample",
                    inp.theta_hat.squared_distance(theta_star),
                    4.0 * e / (c * (1.0 - gamma)),
                    false,
                ));
            }
        }
    } else {
        notes.push("eps_Q and C_Q need ground truth; not evaluated".into());
    }

    let (mut thm2_bias, mut thm2_variance) = (None, None);
    if let Some(c) = c_h.filter(|c| *c > 0.0) {
        let inputs = Theorem2Inputs {
            n_s: agg.n_s(),
            n_a,
            gamma,
            r_max,
            c_h: c,
            c_uni,
            c_q: c_q.unwrap_or(0.0),
            c_clustering: c_clustering.unwrap_or(0.0),
            n: ds.len() as f64,
            delta: inp.delta,
            theta_card: inp.theta_card,
        };
        if c_q.is_none() || c_clustering.is_none() {
            notes.push("Theorem 2 evaluated with unavailable constants set to 0".into());
        }
        match theorem2_bound(&inputs) {
            Ok(b) => {
                thm2_bias = Some(b.bias);
                thm2_variance = Some(b.variance);
                if let Some((_, theta_star)) = inp.truth {
                    inequalities.push(InequalityRecord::new(
                        "theorem2",
                        inp.theta_hat.squared_distance(theta_star).sqrt(),
                        b.total,
                        false,
                    ));
                }
            }
            Err(e) => notes.push(format!("Theorem 2 bound: {e}")),
        }
    }

    Ok(BoundReport {
        eps_q,
        eps_dis_hat,
        c_h,
        c_uni,
        r_max,
        gamma,
        n_s: agg.n_s(),
        n_a,
        n_param: inp.rewards.n_params(),
        n: ds.len(),
        c_q,
        c_clustering,
        theta_gap,
        thm1_bound,
        thm2_bias,
        thm2_variance,
        inequalities,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the bound, used as a cross-check.
    fn bound_oracle(p: &Theorem2Inputs) -> f64 {
        let (ns, na) = (p.n_s as f64, p.n_a as f64);
        let g = 1.0 - p.gamma;
        let bias = 4.0 / (p.c_h * g) * ((p.r_max + 1.0) / g * 4.0 / (ns.powf(1.0 / na) - 1.0) + 2.0 * p.c_q + p.c_clustering);
        let a = 4.0 * (p.r_max + 1.0) / (g * p.c_h) * ((4.0 * p.theta_card / p.delta).ln() / (2.0 * p.n)).sqrt();
        let b = (p.r_max + 1.0) / (g * g * p.c_h) * ((8.0 * ns * na * p.theta_card / p.delta).ln() / (2.0 * p.n)).sqrt() * 4.0
            / (p.c_uni - ((4.0 * ns * na * p.theta_card / p.delta).ln() / (2.0 * p.n)).sqrt());
        bias + a + b
    }

    fn base() -> Theorem2Inputs {
        Theorem2Inputs {
            n_s: 10,
            n_a: 2,
            gamma: 0.95,
            r_max: 1.0,
            c_h: 1.0,
            c_uni: 0.01,
            c_q: 0.0,
            c_clustering: 0.0,
            n: 1e6,
            delta: 0.05,
            theta_card: 1e6,
        }
    }

    #[test]
    fn bound_matches_transcription() {
        let b = theorem2_bound(&base()).unwrap();
        assert!(b.total.is_finite() && b.total > 0.0);
        assert!((b.total - bound_oracle(&base())).abs() <= 1e-12 * b.total);
    }

    #[test]
    fn precondition_reports_margin() {
        let p = Theorem2Inputs { n: 100.0, ..base() };
        match theorem2_bound(&p) {
            Err(Error::BoundUndefined { margin }) => assert!(margin < 0.0),
            other => panic!("expected undefined bound, got {other:?}"),
        }
        assert!(theorem2_bound(&Theorem2Inputs { n_s: 1, ..base() }).is_err());
    }

    #[test]
    fn partition_counts() {
        let mut count = 0;
        let mut labels = vec![0; 5];
        enumerate_partitions(&mut labels, 1, 1, 2, &mut |_| count += 1);
        // Stirling number S(5, 2).
        assert_eq!(count, 15);
        let mut count = 0;
        let mut labels = vec![0; 6];
        enumerate_partitions(&mut labels, 1, 1, 3, &mut |_| count += 1);
        assert_eq!(count, 90);
    }

    #[test]
    fn optimal_dis_of_worked_example() {
        let q = QFunction::from_rows(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![vec![0.0, 0.0], vec![0.01, 0.0], vec![5.0, 5.0], vec![5.01, 5.0]],
        )
        .unwrap();
        assert!((optimal_dis(&q, q.states(), 2).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(optimal_dis(&q, q.states(), 4).unwrap(), 0.0);
        assert!((optimal_dis(&q, q.states(), 1).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn identity_aggregation_checks_are_tight() {
        let mut rng = instance_rng(7);
        let inst = random_instance(&mut rng, 4, 2, 2).unwrap();
        let agg = Aggregation::identity(Arc::clone(inst.mdp.state_space()));
        let pc = population_check(&inst.mdp, &inst.theta_star, &agg, &PopulationOptions::default()).unwrap();
        assert_eq!(pc.eps_asy, 0.0);
        assert_eq!(pc.eps_q, 0.0);
        assert!(pc.theorem1.holds && pc.theorem1.rhs == 0.0);
        assert!(pc.lemma.holds);
    }

    #[test]
    fn population_model_matches_identity_problem() {
        let mut rng = instance_rng(3);
        let inst = random_instance(&mut rng, 5, 3, 2).unwrap();
        let pop = PopulationModel::new(&inst.mdp, &inst.theta_star).unwrap();
        let agg = Aggregation::identity(Arc::clone(inst.mdp.state_space()));
        let theta = ThetaVector::new(vec![0.2, -0.4]).unwrap();
        let full = pop.expected_log_likelihood(&theta).unwrap();
        let aggregated = pop.expected_aggregated_log_likelihood(&agg, &theta).unwrap();
        assert!((full - aggregated).abs() < 1e-11);
    }
}
