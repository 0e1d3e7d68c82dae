//! Q-function estimation from behavior data: fit choice probabilities, then
//! recover the soft value by fitted iteration on an anchor action whose
//! reward is constant.
//!
//! With `π̂` the fitted policy and `a₀` the anchor,
//! `v(s) = γ·Ê[v(s') | s, a₀] − log π̂(s, a₀)` and `Q̂(s, a) = v(s) + log π̂(s, a)`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{self, QFunction, StateSpace};

/// How states are grouped into estimation bins.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinSpec {
    /// Every distinct observed state is its own bin; unseen states use the nearest observed one.
    #[default]
    Exact,
    /// Uniform product grid with `per_dim` cells over the observed range of each coordinate.
    Uniform { per_dim: usize },
}

/// Maps state points to bin indices.
#[derive(Clone, Debug)]
pub struct Binner {
    kind: BinnerKind,
}

#[derive(Clone, Debug)]
enum BinnerKind {
    Exact(Arc<StateSpace>),
    Uniform { lows: Vec<f64>, highs: Vec<f64>, per_dim: usize },
}

impl Binner {
    /// Builds bins from the dataset: exact bins over source states, uniform bins over all states.
    pub fn fit(spec: &BinSpec, dataset: &Dataset) -> Result<Self> {
        match *spec {
            BinSpec::Exact => {
                let space = StateSpace::from_points(dataset.transitions().iter().map(|t| t.state.as_slice()))?;
                Ok(Self { kind: BinnerKind::Exact(Arc::new(space)) })
            }
            BinSpec::Uniform { per_dim } => {
                if per_dim == 0 {
                    return Err(Error::invalid("bins must be at least 1 per dimension"));
                }
                let d = dataset.dims();
                let mut lows = vec![f64::INFINITY; d];
                let mut highs = vec![f64::NEG_INFINITY; d];
                for t in dataset.transitions() {
                    for p in [&t.state, &t.next] {
                        for j in 0..d {
                            lows[j] = lows[j].min(p[j]);
                            highs[j] = highs[j].max(p[j]);
                        }
                    }
                }
                Ok(Self { kind: BinnerKind::Uniform { lows, highs, per_dim } })
            }
        }
    }

    pub fn n_bins(&self) -> usize {
        match &self.kind {
            BinnerKind::Exact(space) => space.len(),
            BinnerKind::Uniform { lows, per_dim, .. } => per_dim.pow(lows.len() as u32),
        }
    }

    pub fn bin_of(&self, point: &[f64]) -> usize {
        match &self.kind {
            BinnerKind::Exact(space) => space.index_of(point).unwrap_or_else(|| {
                let mut best = (f64::INFINITY, 0);
                for (i, p) in space.points().iter().enumerate() {
                    let d: f64 = p.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                best.1
            }),
            BinnerKind::Uniform { lows, highs, per_dim } => {
                let mut idx = 0;
                for j in 0..lows.len() {
                    let width = highs[j] - lows[j];
                    let cell = if width > 0.0 {
                        (((point[j] - lows[j]) / width) * *per_dim as f64).floor().clamp(0.0, (*per_dim - 1) as f64)
                            as usize
                    } else {
                        0
                    };
                    idx = idx * per_dim + cell;
                }
                idx
            }
        }
    }
}

/// Anything that yields choice probabilities at a state point.
pub trait ChoiceModel: Sync {
    fn n_actions(&self) -> usize;
    fn probs(&self, point: &[f64]) -> Vec<f64>;
}

/// Per-bin Laplace-smoothed action frequencies.
#[derive(Clone, Debug)]
pub struct PolicyEstimate {
    pub binner: Binner,
    /// Row-major `[bin][action]`.
    pub probs: Vec<f64>,
    pub n_actions: usize,
    pub smoothing: f64,
}

impl PolicyEstimate {
    pub fn row(&self, bin: usize) -> &[f64] {
        &self.probs[bin * self.n_actions..(bin + 1) * self.n_actions]
    }
}

impl ChoiceModel for PolicyEstimate {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn probs(&self, point: &[f64]) -> Vec<f64> {
        self.row(self.binner.bin_of(point)).to_vec()
    }
}

/// `(count(a in bin) + smoothing) / (count(bin) + smoothing·n_a)`; a bin with
/// no observations and zero smoothing gets the uniform row.
pub fn estimate_policy(dataset: &Dataset, bins: &BinSpec, smoothing: f64) -> Result<PolicyEstimate> {
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return Err(Error::invalid("smoothing must be a finite non-negative number"));
    }
    let binner = Binner::fit(bins, dataset)?;
    let n_a = dataset.n_actions();
    let n_bins = binner.n_bins();
    let mut counts = vec![0.0; n_bins * n_a];
    for t in dataset.transitions() {
        counts[binner.bin_of(&t.state) * n_a + t.action] += 1.0;
    }
    let mut probs = vec![0.0; n_bins * n_a];
    for b in 0..n_bins {
        let row = &counts[b * n_a..(b + 1) * n_a];
        let total: f64 = row.iter().sum::<f64>() + smoothing * n_a as f64;
        for a in 0..n_a {
            probs[b * n_a + a] = if total > 0.0 { (row[a] + smoothing) / total } else { 1.0 / n_a as f64 };
        }
    }
    Ok(PolicyEstimate { binner, probs, n_actions: n_a, smoothing })
}

/// Multinomial logit policy on additive per-coordinate polynomial features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitPolicy {
    pub degree: usize,
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
    pub n_actions: usize,
    /// Coefficients `[(a − 1) * p + k]` for actions `1..n_a`; action 0 has zero logits.
    pub coef: Vec<f64>,
    pub log_likelihood: f64,
}

impl LogitPolicy {
    fn n_features(&self) -> usize {
        1 + self.degree * self.lows.len()
    }

    fn features(&self, point: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_features());
        out.push(1.0);
        for j in 0..self.lows.len() {
            let width = self.highs[j] - self.lows[j];
            let z = if width > 0.0 { 2.0 * (point[j] - self.lows[j]) / width - 1.0 } else { 0.0 };
            let mut zk = 1.0;
            for _ in 0..self.degree {
                zk *= z;
                out.push(zk);
            }
        }
        out
    }

    fn logits(&self, phi: &[f64]) -> Vec<f64> {
        logits_with(&self.coef, self.n_actions, phi)
    }
}

impl ChoiceModel for LogitPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn probs(&self, point: &[f64]) -> Vec<f64> {
        let logits = self.logits(&self.features(point));
        let mut out = vec![0.0; self.n_actions];
        mdp::softmax_into(&logits, &mut out);
        out
    }
}

fn logits_with(coef: &[f64], n_actions: usize, phi: &[f64]) -> Vec<f64> {
    let p = phi.len();
    let mut out = vec![0.0; n_actions];
    for a in 1..n_actions {
        out[a] = mdp::dot(&coef[(a - 1) * p..a * p], phi);
    }
    out
}

/// Fits a [`LogitPolicy`] by damped Newton ascent on the penalized log-likelihood.
pub fn fit_logit_policy(dataset: &Dataset, degree: usize, ridge: f64) -> Result<LogitPolicy> {
    if degree == 0 {
        return Err(Error::invalid("logit degree must be at least 1"));
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    let n_a = dataset.n_actions();
    let d = dataset.dims();
    let mut lows = vec![f64::INFINITY; d];
    let mut highs = vec![f64::NEG_INFINITY; d];
    for t in dataset.transitions() {
        for p in [&t.state, &t.next] {
            for j in 0..d {
                lows[j] = lows[j].min(p[j]);
                highs[j] = highs[j].max(p[j]);
            }
        }
    }
    let mut model = LogitPolicy { degree, lows, highs, n_actions: n_a, coef: Vec::new(), log_likelihood: 0.0 };
    let p = model.n_features();
    let dim = (n_a - 1) * p;
    model.coef = vec![0.0; dim];

    // Sufficient statistics: per distinct state, features and action counts.
    let space = StateSpace::from_points(dataset.transitions().iter().map(|t| t.state.as_slice()))?;
    let mut counts = vec![0.0; space.len() * n_a];
    for t in dataset.transitions() {
        counts[space.index_of(&t.state).expect("state in support") * n_a + t.action] += 1.0;
    }
    let feats: Vec<Vec<f64>> = space.points().iter().map(|x| model.features(x)).collect();

    let objective = |coef: &[f64]| -> f64 {
        let mut ll = 0.0;
        for (x, phi) in feats.iter().enumerate() {
            let logits = logits_with(coef, n_a, phi);
            let z = mdp::lse(&logits);
            for a in 0..n_a {
                let c = counts[x * n_a + a];
                if c > 0.0 {
                    ll += c * (logits[a] - z);
                }
            }
        }
        ll - 0.5 * ridge * coef.iter().map(|v| v * v).sum::<f64>()
    };

    let mut current = objective(&model.coef);
    for _ in 0..200 {
        let mut grad = DVector::<f64>::zeros(dim);
        let mut neg_hess = DMatrix::<f64>::zeros(dim, dim);
        let mut pi = vec![0.0; n_a];
        for (x, phi) in feats.iter().enumerate() {
            let n_x: f64 = counts[x * n_a..(x + 1) * n_a].iter().sum();
            mdp::softmax_into(&model.logits(phi), &mut pi);
            for a in 1..n_a {
                let resid = counts[x * n_a + a] - n_x * pi[a];
                for k in 0..p {
                    grad[(a - 1) * p + k] += resid * phi[k];
                }
                for b in 1..n_a {
                    let w = n_x * pi[a] * (if a == b { 1.0 } else { 0.0 } - pi[b]);
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..p {
                        for l in 0..p {
                            neg_hess[((a - 1) * p + k, (b - 1) * p + l)] += w * phi[k] * phi[l];
                        }
                    }
                }
            }
        }
        for i in 0..dim {
            grad[i] -= ridge * model.coef[i];
            neg_hess[(i, i)] += ridge;
        }
        let mut jitter = 0.0;
        let step = loop {
            let mut m = neg_hess.clone();
            for i in 0..dim {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&grad);
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > 1e6 {
                return Err(Error::invalid("logit Hessian is not positive definite"));
            }
        };
        let mut t = 1.0;
        let mut improved = false;
        let mut candidate = model.coef.clone();
        for _ in 0..40 {
            for i in 0..dim {
                candidate[i] = model.coef[i] + t * step[i];
            }
            let value = objective(&candidate);
            if value >= current {
                improved = value > current;
                model.coef.copy_from_slice(&candidate);
                let gain = value - current;
                current = value;
                if gain <= 1e-12 * current.abs().max(1.0) {
                    improved = false;
                }
                break;
            }
            t *= 0.5;
        }
        let step_norm = step.amax() * t;
        if !improved || step_norm < 1e-10 {
            break;
        }
    }
    model.log_likelihood = current;
    Ok(model)
}

/// Policy model used for the first stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyModel {
    Tabular { bins: BinSpec, smoothing: f64 },
    Logit { degree: usize, ridge: f64 },
}

impl Default for PolicyModel {
    fn default() -> Self {
        PolicyModel::Logit { degree: 4, ridge: 1e-8 }
    }
}

/// Options for [`estimate_q`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlOptions {
    pub policy: PolicyModel,
    /// Bins for the value iteration.
    pub value_bins: BinSpec,
    /// Action with state-independent reward. For the bus environment that is replacement.
    pub anchor: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlOptions {
    fn default() -> Self {
        Self {
            policy: PolicyModel::default(),
            value_bins: BinSpec::Exact,
            anchor: crate::env::REPLACE,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Soft value per bin from anchor-action fitted iteration.
#[derive(Clone, Debug)]
pub struct ValueTable {
    pub binner: Binner,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm successive differences, one per iteration.
    pub residuals: Vec<f64>,
}

impl ValueTable {
    pub fn value_at(&self, point: &[f64]) -> f64 {
        self.values[self.binner.bin_of(point)]
    }
}

/// Fixed point of `v(b) = γ·mean v(bin(s')) − mean log π̂(s, anchor)` over
/// anchor transitions starting in bin `b`.
pub fn estimate_value_anchor(
    dataset: &Dataset,
    policy: &dyn ChoiceModel,
    gamma: f64,
    anchor: usize,
    tol: f64,
    bins: &BinSpec,
    max_iter: usize,
) -> Result<ValueTable> {
    if anchor >= dataset.n_actions() {
        return Err(Error::invalid(format!("anchor {anchor} is not an action")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid("gamma must lie in [0, 1)"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let binner = Binner::fit(bins, dataset)?;
    let n_bins = binner.n_bins();
    let mut count = vec![0usize; n_bins];
    let mut log_pi = vec![0.0; n_bins];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for t in dataset.transitions().iter().filter(|t| t.action == anchor) {
        let b = binner.bin_of(&t.state);
        let p = policy.probs(&t.state)[anchor];
        if !(p > 0.0) {
            return Err(Error::invalid(format!(
                "estimated anchor probability is zero at {:?}; use positive smoothing",
                t.state
            )));
        }
        count[b] += 1;
        log_pi[b] += p.ln();
        edges.push((b, binner.bin_of(&t.next)));
    }
    let mut needed = vec![false; n_bins];
    for t in dataset.transitions() {
        needed[binner.bin_of(&t.state)] = true;
        needed[binner.bin_of(&t.next)] = true;
    }
    if let Some(b) = (0..n_bins).find(|&b| needed[b] && count[b] == 0) {
        return Err(Error::Coverage(format!(
            "bin {b} has no transitions with anchor action {anchor}"
        )));
    }
    for b in 0..n_bins {
        if count[b] > 0 {
            log_pi[b] /= count[b] as f64;
        }
    }
    let mut v = vec![0.0; n_bins];
    let mut next = vec![0.0; n_bins];
    let mut acc = vec![0.0; n_bins];
    let mut residuals = Vec::new();
    for iter in 1..=max_iter {
        acc.iter_mut().for_each(|x| *x = 0.0);
        for &(b, nb) in &edges {
            acc[b] += v[nb];
        }
        for b in 0..n_bins {
            next[b] = if count[b] > 0 { gamma * acc[b] / count[b] as f64 - log_pi[b] } else { 0.0 };
        }
        let r = mdp::sup_diff(&next, &v);
        residuals.push(r);
        std::mem::swap(&mut v, &mut next);
        if r <= tol || gamma == 0.0 {
            return Ok(ValueTable { binner, values: v, iterations: iter, residuals });
        }
    }
    Err(Error::Convergence { iterations: max_iter, residual: *residuals.last().unwrap_or(&f64::INFINITY) })
}

/// Estimated Q-function on the dataset's state support.
#[derive(Clone, Debug)]
pub struct QEstimate {
    pub q: QFunction,
    pub anchor: usize,
    /// Final residual of the value iteration.
    pub fit_residual: f64,
}

/// Fits the policy model and returns `Q̂ = v̂ + log π̂` on every observed state.
pub fn estimate_q(dataset: &Dataset, gamma: f64, opts: &IrlOptions) -> Result<QEstimate> {
    if (gamma - dataset.gamma()).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "gamma {gamma} disagrees with the dataset's recorded discount {}",
            dataset.gamma()
        )));
    }
    let model: Box<dyn ChoiceModel> = match &opts.policy {
        PolicyModel::Tabular { bins, smoothing } => Box::new(estimate_policy(dataset, bins, *smoothing)?),
        PolicyModel::Logit { degree, ridge } => Box::new(fit_logit_policy(dataset, *degree, *ridge)?),
    };
    let values = estimate_value_anchor(
        dataset,
        model.as_ref(),
        gamma,
        opts.anchor,
        opts.tol,
        &opts.value_bins,
        opts.max_iter,
    )?;
    let support = Arc::new(dataset.support());
    let n_a = dataset.n_actions();
    let mut table = Vec::with_capacity(support.len() * n_a);
    for p in support.points() {
        let v = values.value_at(p);
        for pa in model.probs(p) {
            if !(pa > 0.0) {
                return Err(Error::invalid(format!(
                    "estimated choice probability is zero at {p:?}; use positive smoothing"
                )));
            }
            table.push(v + pa.ln());
        }
    }
    Ok(QEstimate {
        q: QFunction::new(support, n_a, table)?,
        anchor: opts.anchor,
        fit_residual: *values.residuals.last().unwrap_or(&0.0),
    })
}

/// Writes a Q-function as CSV with columns `s_0.., q_0..`.
pub fn write_q_csv(q: &QFunction, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = q.state_space().dim();
    let header: Vec<String> = (0..d)
        .map(|i| format!("s_{i}"))
        .chain((0..q.n_actions()).map(|a| format!("q_{a}")))
        .collect();
    w.write_record(&header)?;
    for (s, p) in q.states().iter().enumerate() {
        let rec: Vec<String> = p.iter().chain(q.row(s)).map(|v| v.to_string()).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_q_csv`].
pub fn read_q_csv(path: &Path) -> Result<QFunction> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let d = header.iter().filter(|h| h.starts_with("s_")).count();
    let n_a = header.iter().filter(|h| h.starts_with("q_")).count();
    if d == 0 || n_a == 0 || d + n_a != header.len() {
        return Err(Error::invalid(format!("unexpected Q CSV header {header:?}")));
    }
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::invalid(format!("Q CSV: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != d + n_a {
            return Err(Error::invalid("Q CSV row has the wrong number of fields"));
        }
        points.push(vals[..d].to_vec());
        rows.push(vals[d..].to_vec());
    }
    QFunction::from_rows(points, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Transition};

    fn meta(gamma: f64) -> DatasetMeta {
        DatasetMeta { gamma, n_actions: 2, env_digest: String::new(), seed: None, n: 0, dims: 0, reward: None }
    }

    fn t(s: f64, a: usize, n: f64) -> Transition {
        Transition { state: vec![s], action: a, next: vec![n] }
    }

    #[test]
    fn counting_without_smoothing() {
        let ds = Dataset::new(vec![t(0.0, 0, 0.0), t(0.0, 0, 1.0), t(1.0, 0, 0.0)], meta(0.5)).unwrap();
        let pol = estimate_policy(&ds, &BinSpec::Exact, 0.0).unwrap();
        assert_eq!(pol.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn empty_bin_is_uniform() {
        let ds = Dataset::new(vec![t(0.0, 0, 0.0), t(10.0, 1, 10.0)], meta(0.5)).unwrap();
        let pol = estimate_policy(&ds, &BinSpec::Uniform { per_dim: 3 }, 1.0).unwrap();
        assert_eq!(pol.row(1), &[0.5, 0.5]);
        assert_eq!(pol.row(0), &[2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn zero_discount_value_is_negative_log_anchor_prob() {
        let ds = Dataset::new(
            vec![t(0.0, 0, 1.0), t(0.0, 1, 1.0), t(1.0, 0, 0.0), t(1.0, 1, 0.0)],
            meta(0.0),
        )
        .unwrap();
        let pol = estimate_policy(&ds, &BinSpec::Exact, 0.5).unwrap();
        let v = estimate_value_anchor(&ds, &pol, 0.0, 0, 1e-12, &BinSpec::Exact, 100).unwrap();
        assert_eq!(v.iterations, 1);
        for &x in &v.values {
            assert!((x - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_anchor_is_coverage_error() {
        let ds = Dataset::new(vec![t(0.0, 0, 1.0), t(1.0, 1, 0.0)], meta(0.5)).unwrap();
        let pol = estimate_policy(&ds, &BinSpec::Exact, 0.5).unwrap();
        let err = estimate_value_anchor(&ds, &pol, 0.5, 0, 1e-10, &BinSpec::Exact, 100).unwrap_err();
        assert!(matches!(err, Error::Coverage(ref m) if m.contains("bin 1")), "{err}");
    }

    #[test]
    fn softmax_of_estimate_reproduces_policy() {
        let ds = Dataset::new(
            vec![t(0.0, 0, 1.0), t(0.0, 1, 0.0), t(0.0, 1, 1.0), t(1.0, 0, 0.0), t(1.0, 1, 1.0), t(1.0, 0, 1.0)],
            meta(0.9),
        )
        .unwrap();
        let opts = IrlOptions {
            policy: PolicyModel::Tabular { bins: BinSpec::Exact, smoothing: 0.5 },
            anchor: 0,
            ..IrlOptions::default()
        };
        let est = estimate_q(&ds, 0.9, &opts).unwrap();
        let pol = estimate_policy(&ds, &BinSpec::Exact, 0.5).unwrap();
        for (s, p) in est.q.states().iter().enumerate() {
            let cp = mdp::choice_prob(&est.q, s).unwrap();
            let target = pol.probs(p);
            for a in 0..2 {
                assert!((cp[a] - target[a]).abs() < 1e-14);
            }
            let diff = est.q.value(s, 1) - est.q.value(s, 0);
            assert!((diff - (target[1].ln() - target[0].ln())).abs() < 1e-12);
        }
        assert!(estimate_q(&ds, 0.8, &opts).is_err());
    }

    #[test]
    fn q_csv_round_trip() {
        let q = QFunction::from_rows(vec![vec![0.5, 1.0], vec![2.0, -1.0]], vec![vec![0.1, 0.2], vec![-3.0, 4.5]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        write_q_csv(&q, &path).unwrap();
        assert_eq!(read_q_csv(&path).unwrap(), q);
    }
}
