//! Entropy-regularized MDP primitives: the soft Bellman operator, its fixed
//! point, and the Gibbs choice probabilities it induces.
//!
//! All state spaces are finite. A continuous state space is represented by a
//! grid (or sample) of state points, which turns every operator into an exact
//! tabular map.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for transition kernels.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Default stopping tolerance for fixed-point iteration.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap for fixed-point iteration.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Hashable identity of a state point (bitwise, with `-0.0` folded into `0.0`).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateKey(Vec<u64>);

impl StateKey {
    pub fn new(point: &[f64]) -> Self {
        StateKey(
            point
                .iter()
                .map(|&x| if x == 0.0 { 0u64 } else { x.to_bits() })
                .collect(),
        )
    }
}

/// An ordered set of distinct, equal-dimension state points.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    points: Vec<Vec<f64>>,
    index: HashMap<StateKey, usize>,
}

impl StateSpace {
    /// Builds a state space; every point must be finite, distinct and of equal dimension.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("state space must contain at least one state"));
        }
        let dim = points[0].len();
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::invalid(format!(
                    "state {i} has dimension {} but expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("state {i} has a non-finite coordinate")));
            }
            if index.insert(StateKey::new(p), i).is_some() {
                return Err(Error::invalid(format!("state {i} duplicates an earlier state")));
            }
        }
        Ok(Self { points, index })
    }

    /// Deduplicates `points`, keeping first-occurrence order.
    pub fn from_points<'a, I>(points: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut seen = HashMap::new();
        let mut unique = Vec::new();
        for p in points {
            let key = StateKey::new(p);
            if !seen.contains_key(&key) {
                seen.insert(key, unique.len());
                unique.push(p.to_vec());
            }
        }
        Self::new(unique)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        self.index.get(&StateKey::new(point)).copied()
    }
}

/// Structural parameter vector with an optional per-coordinate box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta must be a non-empty vector of finite values"));
        }
        Ok(Self { values, bounds: None })
    }

    pub fn with_bounds(values: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let theta = Self::new(values)?;
        if bounds.len() != theta.values.len() {
            return Err(Error::invalid("bounds length must match theta length"));
        }
        for (i, (&v, &(lo, hi))) in theta.values.iter().zip(&bounds).enumerate() {
            if !(lo <= hi) {
                return Err(Error::invalid(format!("bound {i} is not well ordered")));
            }
            if v < lo || v > hi {
                return Err(Error::invalid(format!("theta[{i}] = {v} lies outside [{lo}, {hi}]")));
            }
        }
        Ok(Self { values: theta.values, bounds: Some(bounds) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Clamps `point` into the box, if any.
    pub fn project(&self, point: &mut [f64]) {
        if let Some(bounds) = &self.bounds {
            for (x, &(lo, hi)) in point.iter_mut().zip(bounds) {
                *x = x.clamp(lo, hi);
            }
        }
    }

    /// Same bounds, new values (projected into the box).
    pub fn with_values(&self, values: &[f64]) -> ThetaVector {
        let mut v = values.to_vec();
        self.project(&mut v);
        ThetaVector { values: v, bounds: self.bounds.clone() }
    }

    pub fn squared_distance(&self, other: &ThetaVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Reward families. Every family is linear in the structural parameters,
/// `r(s, a; θ) = φ(s, a) · θ`, so only the feature map differs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum RewardModel {
    /// Bus engine replacement: `r(s, continue) = -θ₁·m(s)`, `r(s, replace) = -θ₂`.
    BusEngine { mileage_coord: usize },
    /// Normalized variant with zero continuation reward:
    /// `r(s, continue) = 0`, `r(s, replace) = θ₁·m(s) - θ₂`.
    BusEngineAnchored { mileage_coord: usize },
    /// Explicit feature table indexed `[state][action][parameter]`.
    LinearTable { features: Vec<Vec<Vec<f64>>> },
}

impl RewardModel {
    pub fn n_params(&self) -> usize {
        match self {
            RewardModel::BusEngine { .. } | RewardModel::BusEngineAnchored { .. } => 2,
            RewardModel::LinearTable { features } => features
                .first()
                .and_then(|row| row.first())
                .map_or(0, Vec::len),
        }
    }

    /// Features of a state point; `None` for table rewards, which need a state index.
    pub fn point_features(&self, point: &[f64], action: usize) -> Option<Vec<f64>> {
        match *self {
            RewardModel::BusEngine { mileage_coord } => Some(match action {
                0 => vec![-point[mileage_coord], 0.0],
                _ => vec![0.0, -1.0],
            }),
            RewardModel::BusEngineAnchored { mileage_coord } => Some(match action {
                0 => vec![0.0, 0.0],
                _ => vec![point[mileage_coord], -1.0],
            }),
            RewardModel::LinearTable { .. } => None,
        }
    }

    fn validate(&self, states: &StateSpace, n_actions: usize) -> Result<()> {
        match self {
            RewardModel::BusEngine { mileage_coord }
            | RewardModel::BusEngineAnchored { mileage_coord } => {
                if n_actions != 2 {
                    return Err(Error::invalid("bus engine rewards need exactly two actions"));
                }
                if *mileage_coord >= states.dim() {
                    return Err(Error::invalid("mileage coordinate outside state dimension"));
                }
            }
            RewardModel::LinearTable { features } => {
                let k = self.n_params();
                if k == 0 {
                    return Err(Error::invalid("reward feature table has no parameters"));
                }
                if features.len() != states.len()
                    || features.iter().any(|row| {
                        row.len() != n_actions
                            || row.iter().any(|f| f.len() != k || f.iter().any(|x| !x.is_finite()))
                    })
                {
                    return Err(Error::invalid(
                        "reward feature table must be |states| x n_actions x n_params of finite values",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Source of reward features for states appearing in data.
pub trait RewardFeatures: Sync {
    fn n_params(&self) -> usize;
    fn features(&self, state: &[f64], action: usize) -> Result<Vec<f64>>;
}

impl RewardFeatures for RewardModel {
    fn n_params(&self) -> usize {
        RewardModel::n_params(self)
    }

    fn features(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        self.point_features(state, action).ok_or_else(|| {
            Error::invalid("table rewards are indexed by MDP state; evaluate them through the MdpSpec")
        })
    }
}

/// A finite, entropy-regularized MDP `(S, A, r(·;θ), γ, P)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "MdpDocument", try_from = "MdpDocument")]
pub struct MdpSpec {
    states: Arc<StateSpace>,
    actions: Vec<String>,
    gamma: f64,
    /// Sparse rows, indexed by `s * n_actions + a`.
    transitions: Vec<Vec<(usize, f64)>>,
    reward: RewardModel,
    r_max: Option<f64>,
    /// Cached feature tensor `[s][a][k]`, flattened.
    features: Vec<f64>,
}

impl MdpSpec {
    /// `transitions[s * n_actions + a]` lists `(s', P(s' | s, a))` pairs.
    pub fn new(
        states: Vec<Vec<f64>>,
        actions: Vec<String>,
        gamma: f64,
        transitions: Vec<Vec<(usize, f64)>>,
        reward: RewardModel,
    ) -> Result<Self> {
        let states = Arc::new(StateSpace::new(states)?);
        let n_s = states.len();
        let n_a = actions.len();
        if n_a < 2 {
            return Err(Error::invalid("an MDP needs at least two actions"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("discount {gamma} is outside [0, 1)")));
        }
        if transitions.len() != n_s * n_a {
            return Err(Error::invalid(format!(
                "expected {} transition rows, got {}",
                n_s * n_a,
                transitions.len()
            )));
        }
        let mut rows = Vec::with_capacity(transitions.len());
        for (row_idx, row) in transitions.into_iter().enumerate() {
            let (s, a) = (row_idx / n_a, row_idx % n_a);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            let mut sorted = row;
            sorted.sort_by_key(|&(next, _)| next);
            let mut total = 0.0;
            for (next, p) in sorted {
                if next >= n_s {
                    return Err(Error::invalid(format!("transition ({s},{a}) targets unknown state {next}")));
                }
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::invalid(format!("transition ({s},{a}) has invalid probability {p}")));
                }
                total += p;
                if p == 0.0 {
                    continue;
                }
                match merged.last_mut() {
                    Some(last) if last.0 == next => last.1 += p,
                    _ => merged.push((next, p)),
                }
            }
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!(
                    "transition row ({s},{a}) sums to {total}, not 1"
                )));
            }
            rows.push(merged);
        }
        reward.validate(&states, n_a)?;
        let k = reward.n_params();
        let mut features = Vec::with_capacity(n_s * n_a * k);
        for s in 0..n_s {
            for a in 0..n_a {
                match &reward {
                    RewardModel::LinearTable { features: table } => features.extend_from_slice(&table[s][a]),
                    other => features.extend(other.point_features(states.point(s), a).expect("point reward")),
                }
            }
        }
        Ok(Self {
            states,
            actions,
            gamma,
            transitions: rows,
            reward,
            r_max: None,
            features,
        })
    }

    /// Builds an MDP from a dense `P[s][a][s']` tensor.
    pub fn from_dense(
        states: Vec<Vec<f64>>,
        actions: Vec<String>,
        gamma: f64,
        dense: &[Vec<Vec<f64>>],
        reward: RewardModel,
    ) -> Result<Self> {
        let n_a = actions.len();
        let mut rows = Vec::with_capacity(dense.len() * n_a);
        for (s, per_action) in dense.iter().enumerate() {
            if per_action.len() != n_a {
                return Err(Error::invalid(format!("dense transition for state {s} has wrong action count")));
            }
            for row in per_action {
                if row.len() != dense.len() {
                    return Err(Error::invalid("dense transition rows must have |states| entries"));
                }
                rows.push(row.iter().copied().enumerate().filter(|&(_, p)| p != 0.0).collect());
            }
        }
        Self::new(states, actions, gamma, rows, reward)
    }

    /// Declares a reward bound; solvers reject parameters whose rewards exceed it.
    pub fn with_r_max(mut self, r_max: f64) -> Result<Self> {
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::invalid("r_max must be positive and finite"));
        }
        self.r_max = Some(r_max);
        Ok(self)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("discount {gamma} is outside [0, 1)")));
        }
        let mut out = self.clone();
        out.gamma = gamma;
        Ok(out)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_params(&self) -> usize {
        self.reward.n_params()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> Option<f64> {
        self.r_max
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn state_space(&self) -> &Arc<StateSpace> {
        &self.states
    }

    pub fn states(&self) -> &[Vec<f64>] {
        self.states.points()
    }

    pub fn state(&self, s: usize) -> &[f64] {
        self.states.point(s)
    }

    pub fn state_index(&self, point: &[f64]) -> Option<usize> {
        self.states.index_of(point)
    }

    pub fn reward_model(&self) -> &RewardModel {
        &self.reward
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions() + a]
    }

    /// Dense `P(s' | s, a)`.
    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition_row(s, a)
            .iter()
            .find(|&&(n, _)| n == next)
            .map_or(0.0, |&(_, p)| p)
    }

    pub fn feature(&self, s: usize, a: usize) -> &[f64] {
        let k = self.n_params();
        let start = (s * self.n_actions() + a) * k;
        &self.features[start..start + k]
    }

    pub fn reward(&self, s: usize, a: usize, theta: &ThetaVector) -> f64 {
        dot(self.feature(s, a), theta.as_slice())
    }

    /// Reward table `[s * n_a + a]`, checked against `r_max` when declared.
    pub fn reward_table(&self, theta: &ThetaVector) -> Result<Vec<f64>> {
        if theta.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "theta has {} entries, reward needs {}",
                theta.len(),
                self.n_params()
            )));
        }
        let n_a = self.n_actions();
        let mut table = Vec::with_capacity(self.n_states() * n_a);
        for s in 0..self.n_states() {
            for a in 0..n_a {
                let r = self.reward(s, a, theta);
                if let Some(r_max) = self.r_max {
                    if r.abs() > r_max {
                        return Err(Error::RewardBound { state: s, action: a, value: r, r_max });
                    }
                }
                table.push(r);
            }
        }
        Ok(table)
    }

    /// Largest absolute reward over the grid at `theta`.
    pub fn max_abs_reward(&self, theta: &ThetaVector) -> f64 {
        let n_a = self.n_actions();
        (0..self.n_states())
            .flat_map(|s| (0..n_a).map(move |a| (s, a)))
            .map(|(s, a)| self.reward(s, a, theta).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl RewardFeatures for MdpSpec {
    fn n_params(&self) -> usize {
        MdpSpec::n_params(self)
    }

    fn features(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        let s = self
            .state_index(state)
            .ok_or_else(|| Error::invalid(format!("state {state:?} is not in the MDP")))?;
        if action >= self.n_actions() {
            return Err(Error::invalid(format!("action {action} out of range")));
        }
        Ok(self.feature(s, action).to_vec())
    }
}

/// JSON layout of an [`MdpSpec`], with a dense transition tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<String>,
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: RewardModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

impl From<MdpSpec> for MdpDocument {
    fn from(mdp: MdpSpec) -> Self {
        let n = mdp.n_states();
        let transition = (0..n)
            .map(|s| {
                (0..mdp.n_actions())
                    .map(|a| {
                        let mut row = vec![0.0; n];
                        for &(next, p) in mdp.transition_row(s, a) {
                            row[next] = p;
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        MdpDocument {
            states: mdp.states().to_vec(),
            actions: mdp.actions.clone(),
            gamma: mdp.gamma,
            transition,
            reward: mdp.reward.clone(),
            r_max: mdp.r_max,
        }
    }
}

impl TryFrom<MdpDocument> for MdpSpec {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let mdp = MdpSpec::from_dense(doc.states, doc.actions, doc.gamma, &doc.transition, doc.reward)?;
        match doc.r_max {
            Some(r) => mdp.with_r_max(r),
            None => Ok(mdp),
        }
    }
}

/// Tabular Q-function over a [`StateSpace`], stored row-major `[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    states: Arc<StateSpace>,
    n_actions: usize,
    table: Vec<f64>,
}

impl QFunction {
    pub fn new(states: Arc<StateSpace>, n_actions: usize, table: Vec<f64>) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::invalid("a Q-function needs at least one action"));
        }
        if table.len() != states.len() * n_actions {
            return Err(Error::invalid(format!(
                "Q table has {} entries, expected {}",
                table.len(),
                states.len() * n_actions
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Q table entries must be finite"));
        }
        Ok(Self { states, n_actions, table })
    }

    pub fn zeros(states: Arc<StateSpace>, n_actions: usize) -> Self {
        let table = vec![0.0; states.len() * n_actions];
        Self { states, n_actions, table }
    }

    /// Builds a Q-function from explicit rows.
    pub fn from_rows(points: Vec<Vec<f64>>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_a = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_a) {
            return Err(Error::invalid("Q rows must share one action count"));
        }
        let states = Arc::new(StateSpace::new(points)?);
        if rows.len() != states.len() {
            return Err(Error::invalid("Q rows must match the number of states"));
        }
        Self::new(states, n_a, rows.concat())
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn state_space(&self) -> &Arc<StateSpace> {
        &self.states
    }

    pub fn states(&self) -> &[Vec<f64>] {
        self.states.points()
    }

    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        self.states.index_of(point)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.table[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row_at(&self, point: &[f64]) -> Option<&[f64]> {
        self.index_of(point).map(|s| self.row(s))
    }

    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.table[s * self.n_actions + a]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Sup-norm distance; both functions must share shape.
    pub fn sup_distance(&self, other: &QFunction) -> f64 {
        sup_diff(&self.table, &other.table)
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> QFunction {
        QFunction {
            states: Arc::clone(&self.states),
            n_actions: self.n_actions,
            table: self.table.iter().map(|v| v + c).collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max-shifted `log Σ exp(v)` without input validation.
#[inline]
pub(crate) fn lse(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.len() == 1 {
        return values[0];
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Stabilized `log Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty vector"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("log_sum_exp needs finite entries"));
    }
    Ok(lse(values))
}

/// Softmax of one row, written into `out`.
#[inline]
pub(crate) fn softmax_into(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Gibbs choice probabilities `exp Q(s,a) / Σ exp Q(s,a')`.
pub fn choice_prob(q: &QFunction, s: usize) -> Result<Vec<f64>> {
    if s >= q.n_states() {
        return Err(Error::invalid(format!("state index {s} out of range")));
    }
    let mut out = vec![0.0; q.n_actions()];
    softmax_into(q.row(s), &mut out);
    Ok(out)
}

/// Soft state value `log Σ_a exp Q(s,a)`.
pub fn soft_value(q: &QFunction, s: usize) -> Result<f64> {
    if s >= q.n_states() {
        return Err(Error::invalid(format!("state index {s} out of range")));
    }
    Ok(lse(q.row(s)))
}

fn check_shape(q: &QFunction, mdp: &MdpSpec) -> Result<()> {
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
        return Err(Error::invalid(format!(
            "Q shape {}x{} does not match MDP {}x{}",
            q.n_states(),
            q.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// One sweep `out = r + γ P · V` with `V(s') = lse Q(s', ·)`.
fn bellman_sweep(mdp: &MdpSpec, rewards: &[f64], q: &[f64], values: &mut [f64], out: &mut [f64]) {
    let n_a = mdp.n_actions();
    for (s, v) in values.iter_mut().enumerate() {
        *v = lse(&q[s * n_a..(s + 1) * n_a]);
    }
    let gamma = mdp.gamma();
    for (row_idx, o) in out.iter_mut().enumerate() {
        let cont: f64 = mdp.transitions[row_idx]
            .iter()
            .map(|&(next, p)| p * values[next])
            .sum();
        *o = rewards[row_idx] + gamma * cont;
    }
}

/// Applies the soft Bellman operator once.
pub fn soft_bellman_apply(q: &QFunction, mdp: &MdpSpec, theta: &ThetaVector) -> Result<QFunction> {
    check_shape(q, mdp)?;
    let rewards = mdp.reward_table(theta)?;
    let mut values = vec![0.0; mdp.n_states()];
    let mut out = vec![0.0; q.table.len()];
    bellman_sweep(mdp, &rewards, &q.table, &mut values, &mut out);
    QFunction::new(Arc::clone(mdp.state_space()), mdp.n_actions(), out)
}

/// Options for fixed-point iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

impl SolverOptions {
    pub fn new(tol: f64, max_iter: usize) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(Self { tol, max_iter })
    }
}

/// Fixed point of the soft Bellman operator together with solver statistics.
#[derive(Clone, Debug)]
pub struct SoftQSolution {
    pub q: QFunction,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `Q = T Q` by successive approximation from `Q ≡ 0`.
pub fn soft_q_solve(mdp: &MdpSpec, theta: &ThetaVector, tol: f64, max_iter: usize) -> Result<SoftQSolution> {
    soft_q_solve_from(mdp, theta, None, SolverOptions::new(tol, max_iter)?)
}

/// Solves `Q = T Q`, optionally warm-started from `init`.
pub fn soft_q_solve_from(
    mdp: &MdpSpec,
    theta: &ThetaVector,
    init: Option<&QFunction>,
    opts: SolverOptions,
) -> Result<SoftQSolution> {
    let opts = SolverOptions::new(opts.tol, opts.max_iter)?;
    let rewards = mdp.reward_table(theta)?;
    let mut current = match init {
        Some(q) => {
            check_shape(q, mdp)?;
            q.table.clone()
        }
        None => vec![0.0; mdp.n_states() * mdp.n_actions()],
    };
    let mut next = vec![0.0; current.len()];
    let mut values = vec![0.0; mdp.n_states()];
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        bellman_sweep(mdp, &rewards, &current, &mut values, &mut next);
        residual = sup_diff(&next, &current);
        std::mem::swap(&mut current, &mut next);
        // With γ = 0 a single application is already the fixed point.
        if residual <= opts.tol || mdp.gamma() == 0.0 {
            let q = QFunction::new(Arc::clone(mdp.state_space()), mdp.n_actions(), current)?;
            return Ok(SoftQSolution { q, iterations: iter, residual });
        }
    }
    Err(Error::Convergence { iterations: opts.max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state(gamma: f64) -> MdpSpec {
        MdpSpec::new(
            vec![vec![0.0]],
            vec!["a".into(), "b".into()],
            gamma,
            vec![vec![(0, 1.0)], vec![(0, 1.0)]],
            RewardModel::LinearTable { features: vec![vec![vec![0.0], vec![0.0]]] },
        )
        .unwrap()
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[3.25]).unwrap(), 3.25);
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((log_sum_exp(&[1.0, 2.0, 3.0]).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 3.40760596).abs() < 1e-8);
        assert!(matches!(log_sum_exp(&[]), Err(Error::InvalidArgument(_))));
        assert!(log_sum_exp(&[1e300, 1e300]).unwrap().is_finite());
    }

    #[test]
    fn one_state_hand_evaluation() {
        let mdp = one_state(0.5);
        let theta = ThetaVector::new(vec![1.0]).unwrap();
        let q0 = QFunction::zeros(Arc::clone(mdp.state_space()), 2);
        let q1 = soft_bellman_apply(&q0, &mdp, &theta).unwrap();
        for &v in q1.table() {
            assert!((v - 0.5 * 2f64.ln()).abs() < 1e-12);
        }
        let sol = soft_q_solve(&mdp, &theta, 1e-12, 1000).unwrap();
        for &v in sol.q.table() {
            assert!((v - 2f64.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_discount_is_reward() {
        let mdp = MdpSpec::new(
            vec![vec![0.0], vec![1.0]],
            vec!["a".into(), "b".into()],
            0.0,
            vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]],
            RewardModel::LinearTable {
                features: vec![vec![vec![1.0], vec![2.0]], vec![vec![-3.0], vec![0.5]]],
            },
        )
        .unwrap();
        let theta = ThetaVector::new(vec![2.0]).unwrap();
        let sol = soft_q_solve(&mdp, &theta, 1e-10, 10).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.q.table(), &[2.0, 4.0, -6.0, 1.0]);
    }

    #[test]
    fn rejects_bad_kernels() {
        let reward = RewardModel::LinearTable { features: vec![vec![vec![0.0], vec![0.0]]] };
        let actions = vec!["a".to_string(), "b".to_string()];
        let bad_sum = MdpSpec::new(vec![vec![0.0]], actions.clone(), 0.9, vec![vec![(0, 0.9)], vec![(0, 1.0)]], reward.clone());
        assert!(matches!(bad_sum, Err(Error::InvalidArgument(_))));
        let bad_gamma = MdpSpec::new(vec![vec![0.0]], actions.clone(), 1.0, vec![vec![(0, 1.0)], vec![(0, 1.0)]], reward.clone());
        assert!(bad_gamma.is_err());
        let one_action = MdpSpec::new(
            vec![vec![0.0]],
            vec!["a".into()],
            0.5,
            vec![vec![(0, 1.0)]],
            RewardModel::LinearTable { features: vec![vec![vec![0.0]]] },
        );
        assert!(one_action.is_err());
    }

    #[test]
    fn reward_bound_is_an_error() {
        let mdp = one_state(0.5).with_r_max(1.0).unwrap();
        let reward = RewardModel::LinearTable { features: vec![vec![vec![2.0], vec![0.0]]] };
        let mdp = MdpSpec::new(
            mdp.states().to_vec(),
            mdp.actions().to_vec(),
            0.5,
            vec![vec![(0, 1.0)], vec![(0, 1.0)]],
            reward,
        )
        .unwrap()
        .with_r_max(1.0)
        .unwrap();
        let theta = ThetaVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            soft_q_solve(&mdp, &theta, 1e-10, 100),
            Err(Error::RewardBound { .. })
        ));
    }

    #[test]
    fn choice_prob_examples() {
        let q = QFunction::from_rows(vec![vec![0.0], vec![1.0]], vec![vec![2.0, 2.0], vec![0.0, 3f64.ln()]]).unwrap();
        assert_eq!(choice_prob(&q, 0).unwrap(), vec![0.5, 0.5]);
        let p = choice_prob(&q, 1).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert!(choice_prob(&q, 2).is_err());
        assert!((soft_value(&q, 0).unwrap() - (2.0 + 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mdp = one_state(0.99);
        let theta = ThetaVector::new(vec![0.0]).unwrap();
        match soft_q_solve(&mdp, &theta, 1e-12, 3) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let mdp = one_state(0.7).with_r_max(3.0).unwrap();
        let back = MdpSpec::from_json(&mdp.to_json().unwrap()).unwrap();
        assert_eq!(back.gamma(), 0.7);
        assert_eq!(back.r_max(), Some(3.0));
        assert_eq!(back.reward_model(), mdp.reward_model());
        assert_eq!(back.transition_prob(0, 1, 0), 1.0);
    }
}
