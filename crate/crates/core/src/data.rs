//! Observed transitions, their CSV persistence, and simulation from a known
//! parameter vector.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::Aggregation;
use crate::error::{Error, Result};
use crate::mdp::{self, MdpSpec, RewardModel, SolverOptions, StateSpace, ThetaVector};

/// One observed `(s, a, s')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub next: Vec<f64>,
}

/// Generation metadata stored next to the transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub gamma: f64,
    pub n_actions: usize,
    #[serde(default)]
    pub env_digest: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub n: usize,
    pub dims: usize,
    /// Reward family, when it can be evaluated directly at state points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardModel>,
}

/// A validated set of transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    transitions: Vec<Transition>,
    meta: DatasetMeta,
}

/// Dataset rows expressed as indices into the dataset's state support.
#[derive(Clone, Debug)]
pub struct IndexedData {
    pub support: Arc<StateSpace>,
    /// `(state, action, next)` index triples.
    pub rows: Vec<(usize, usize, usize)>,
}

impl Dataset {
    /// Validates and wraps transitions; `meta.n` and `meta.dims` are overwritten from the data.
    pub fn new(transitions: Vec<Transition>, mut meta: DatasetMeta) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::invalid("a dataset needs at least one transition"));
        }
        if meta.n_actions < 2 {
            return Err(Error::invalid("datasets need at least two actions"));
        }
        if !(0.0..1.0).contains(&meta.gamma) {
            return Err(Error::invalid(format!("discount {} is outside [0, 1)", meta.gamma)));
        }
        let dims = transitions[0].state.len();
        if dims == 0 {
            return Err(Error::invalid("states must have at least one coordinate"));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != dims || t.next.len() != dims {
                return Err(Error::invalid(format!("transition {i} has inconsistent state dimension")));
            }
            if t.action >= meta.n_actions {
                return Err(Error::invalid(format!(
                    "transition {i} has action {} but only {} actions exist",
                    t.action, meta.n_actions
                )));
            }
            if t.state.iter().chain(&t.next).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("transition {i} has a non-finite coordinate")));
            }
        }
        meta.n = transitions.len();
        meta.dims = dims;
        Ok(Self { transitions, meta })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_actions(&self) -> usize {
        self.meta.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.meta.gamma
    }

    pub fn dims(&self) -> usize {
        self.meta.dims
    }

    /// Distinct states among `s` and `s'`, in first-appearance order.
    pub fn support(&self) -> StateSpace {
        StateSpace::from_points(
            self.transitions
                .iter()
                .flat_map(|t| [t.state.as_slice(), t.next.as_slice()]),
        )
        .expect("validated dataset has a non-empty support")
    }

    pub fn indexed(&self) -> IndexedData {
        let support = Arc::new(self.support());
        let rows = self
            .transitions
            .iter()
            .map(|t| {
                (
                    support.index_of(&t.state).expect("state in support"),
                    t.action,
                    support.index_of(&t.next).expect("state in support"),
                )
            })
            .collect();
        IndexedData { support, rows }
    }

    /// Copy with every state (current and next) replaced by `f(state)`.
    pub fn map_states<F>(&self, mut f: F) -> Result<Dataset>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let transitions = self
            .transitions
            .iter()
            .map(|t| {
                Ok(Transition { state: f(&t.state)?, action: t.action, next: f(&t.next)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(transitions, self.meta.clone())
    }

    /// Copy with rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Dataset> {
        if perm.len() != self.len() {
            return Err(Error::invalid("permutation length must equal dataset size"));
        }
        let transitions = perm.iter().map(|&i| self.transitions[i].clone()).collect();
        Dataset::new(transitions, self.meta.clone())
    }

    /// Writes `path` as CSV and `<stem>.meta.json` next to it.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.dims();
        let mut header: Vec<String> = (0..d).map(|i| format!("s_{i}")).collect();
        header.push("a".into());
        header.extend((0..d).map(|i| format!("snext_{i}")));
        w.write_record(&header)?;
        for t in &self.transitions {
            let mut rec: Vec<String> = t.state.iter().map(|v| v.to_string()).collect();
            rec.push(t.action.to_string());
            rec.extend(t.next.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        fs::write(meta_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)?;
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let d = header.iter().filter(|h| h.starts_with("s_")).count();
        let expected: Vec<String> = (0..d)
            .map(|i| format!("s_{i}"))
            .chain(std::iter::once("a".to_string()))
            .chain((0..d).map(|i| format!("snext_{i}")))
            .collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::invalid(format!("unexpected CSV header {header:?}")));
        }
        let mut transitions = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 * d + 1 {
                return Err(Error::invalid(format!("row {line} has {} fields, expected {}", rec.len(), 2 * d + 1)));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("row {line}, column {i}: {e}")))
            };
            let state = (0..d).map(num).collect::<Result<Vec<_>>>()?;
            let action = rec[d]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("row {line}, action: {e}")))?;
            let next = (d + 1..2 * d + 1).map(num).collect::<Result<Vec<_>>>()?;
            transitions.push(Transition { state, action, next });
        }
        let ds = Dataset::new(transitions, meta.clone())?;
        if meta.dims != 0 && meta.dims != ds.dims() {
            return Err(Error::invalid(format!(
                "meta declares {} dimensions but the CSV has {}",
                meta.dims,
                ds.dims()
            )));
        }
        Ok(ds)
    }
}

/// Sidecar metadata path: `data.csv` → `data.meta.json`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Hex SHA-256 of a byte string.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Initial-state law for simulation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitDistribution {
    #[default]
    Uniform,
    Weights(Vec<f64>),
}

/// How successive transitions relate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Every transition starts from a fresh draw of the initial law.
    #[default]
    Iid,
    /// One trajectory: each transition starts where the previous one ended.
    Chained,
}

fn draw(rng: &mut ChaCha8Rng, weights: &[f64], total: f64) -> usize {
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave u at the very top; return the last positive entry.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Simulates `n` transitions from the optimal soft policy at `theta_true`.
pub fn simulate(
    mdp: &MdpSpec,
    theta_true: &ThetaVector,
    n: usize,
    seed: u64,
    init: &InitDistribution,
    mode: SamplingMode,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let n_s = mdp.n_states();
    let init_w = match init {
        InitDistribution::Uniform => vec![1.0; n_s],
        InitDistribution::Weights(w) => {
            if w.len() != n_s || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid("initial weights must be non-negative, finite, and not all zero"));
            }
            w.clone()
        }
    };
    let init_total: f64 = init_w.iter().sum();
    let sol = mdp::soft_q_solve_from(mdp, theta_true, None, SolverOptions::default())?;
    let n_a = mdp.n_actions();
    let mut policy = vec![0.0; n_s * n_a];
    for s in 0..n_s {
        mdp::softmax_into(sol.q.row(s), &mut policy[s * n_a..(s + 1) * n_a]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n);
    let mut s = draw(&mut rng, &init_w, init_total);
    let mut row_w = Vec::new();
    for _ in 0..n {
        if mode == SamplingMode::Iid {
            s = draw(&mut rng, &init_w, init_total);
        }
        let a = draw(&mut rng, &policy[s * n_a..(s + 1) * n_a], 1.0);
        let row = mdp.transition_row(s, a);
        row_w.clear();
        row_w.extend(row.iter().map(|&(_, p)| p));
        let next = row[draw(&mut rng, &row_w, row_w.iter().sum())].0;
        transitions.push(Transition {
            state: mdp.state(s).to_vec(),
            action: a,
            next: mdp.state(next).to_vec(),
        });
        s = next;
    }

    let reward = match mdp.reward_model() {
        RewardModel::LinearTable { .. } => None,
        other => Some(other.clone()),
    };
    let meta = DatasetMeta {
        gamma: mdp.gamma(),
        n_actions: n_a,
        env_digest: digest(mdp.to_json()?.as_bytes()),
        seed: Some(seed),
        n,
        dims: mdp.state_space().dim(),
        reward,
    };
    Dataset::new(transitions, meta)
}

/// Smallest empirical frequency of an aggregated `(s̃, a)` cell; zero means a cell is unobserved.
pub fn empirical_coverage(dataset: &Dataset, aggregation: &Aggregation) -> Result<f64> {
    let n_a = dataset.n_actions();
    let mut counts = vec![0usize; aggregation.n_s() * n_a];
    for t in dataset.transitions() {
        let c = aggregation.cluster_of(&t.state).ok_or_else(|| {
            Error::invalid(format!("dataset state {:?} is not covered by the aggregation", t.state))
        })?;
        counts[c * n_a + t.action] += 1;
    }
    let min = counts.iter().copied().min().unwrap_or(0);
    Ok(min as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> MdpSpec {
        MdpSpec::new(
            vec![vec![0.0], vec![1.0]],
            vec!["stay".into(), "move".into()],
            0.9,
            vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(1, 1.0)], vec![(0, 1.0)]],
            RewardModel::LinearTable {
                features: vec![vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![vec![0.0, 1.0], vec![0.0, 0.0]]],
            },
        )
        .unwrap()
    }

    #[test]
    fn single_draw() {
        let theta = ThetaVector::new(vec![0.5, -0.5]).unwrap();
        let ds = simulate(&two_state(), &theta, 1, 3, &InitDistribution::Uniform, SamplingMode::Iid).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.meta().n, 1);
        assert_eq!(ds.meta().seed, Some(3));
    }

    #[test]
    fn seeded_reproducibility() {
        let theta = ThetaVector::new(vec![0.5, -0.5]).unwrap();
        let a = simulate(&two_state(), &theta, 500, 11, &InitDistribution::Uniform, SamplingMode::Chained).unwrap();
        let b = simulate(&two_state(), &theta, 500, 11, &InitDistribution::Uniform, SamplingMode::Chained).unwrap();
        let c = simulate(&two_state(), &theta, 500, 12, &InitDistribution::Uniform, SamplingMode::Chained).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for w in a.transitions().windows(2) {
            assert_eq!(w[0].next, w[1].state);
        }
    }

    #[test]
    fn csv_round_trip() {
        let theta = ThetaVector::new(vec![0.5, -0.5]).unwrap();
        let ds = simulate(&two_state(), &theta, 50, 1, &InitDistribution::Uniform, SamplingMode::Iid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        assert!(dir.path().join("d.meta.json").exists());
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(back, ds);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("s_0,a,snext_0\n"));
    }

    #[test]
    fn rejects_bad_rows() {
        let meta = DatasetMeta { gamma: 0.5, n_actions: 2, env_digest: String::new(), seed: None, n: 0, dims: 0, reward: None };
        assert!(Dataset::new(vec![], meta.clone()).is_err());
        let bad_action = Transition { state: vec![0.0], action: 2, next: vec![0.0] };
        assert!(Dataset::new(vec![bad_action], meta.clone()).is_err());
        let ragged = vec![
            Transition { state: vec![0.0], action: 0, next: vec![0.0] },
            Transition { state: vec![0.0, 1.0], action: 0, next: vec![0.0, 1.0] },
        ];
        assert!(Dataset::new(ragged, meta).is_err());
    }
}
