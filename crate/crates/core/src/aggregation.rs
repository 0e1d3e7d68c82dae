//! State aggregation: K-means on estimated Q-vectors with Chebyshev-medoid
//! representatives, and the quantile-grid baseline.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{QFunction, StateSpace};

/// Default number of K-means restarts.
pub const DEFAULT_RESTARTS: usize = 10;

/// A projection `Π` from a finite state set onto representative states.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregation {
    states: Arc<StateSpace>,
    /// Cluster index per state.
    assign: Vec<usize>,
    /// State index of each cluster's representative.
    representatives: Vec<usize>,
}

/// JSON layout of an [`Aggregation`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregationDocument {
    pub n_s: usize,
    pub representatives: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub assign: Vec<usize>,
}

impl Aggregation {
    /// Validates an explicit assignment. Representative `c` must itself be assigned to `c`.
    pub fn new(states: Arc<StateSpace>, assign: Vec<usize>, representatives: Vec<usize>) -> Result<Self> {
        let n = states.len();
        let k = representatives.len();
        if k == 0 {
            return Err(Error::invalid("an aggregation needs at least one representative"));
        }
        if assign.len() != n {
            return Err(Error::invalid("assign must have one entry per state"));
        }
        if let Some(bad) = assign.iter().find(|&&c| c >= k) {
            return Err(Error::invalid(format!("assignment to unknown cluster {bad}")));
        }
        for (c, &r) in representatives.iter().enumerate() {
            if r >= n {
                return Err(Error::invalid(format!("representative {c} is not a state")));
            }
            if assign[r] != c {
                return Err(Error::invalid(format!("representative {c} is not a member of its own cluster")));
            }
        }
        Ok(Self { states, assign, representatives })
    }

    /// Every state is its own representative.
    pub fn identity(states: Arc<StateSpace>) -> Self {
        let n = states.len();
        Self { states, assign: (0..n).collect(), representatives: (0..n).collect() }
    }

    pub fn n_s(&self) -> usize {
        self.representatives.len()
    }

    pub fn state_space(&self) -> &Arc<StateSpace> {
        &self.states
    }

    pub fn states(&self) -> &[Vec<f64>] {
        self.states.points()
    }

    /// Cluster index per state, aligned with [`Aggregation::states`].
    pub fn assign(&self) -> &[usize] {
        &self.assign
    }

    /// State indices of the representatives.
    pub fn representative_indices(&self) -> &[usize] {
        &self.representatives
    }

    pub fn representative(&self, cluster: usize) -> &[f64] {
        self.states.point(self.representatives[cluster])
    }

    pub fn representatives(&self) -> Vec<Vec<f64>> {
        (0..self.n_s()).map(|c| self.representative(c).to_vec()).collect()
    }

    pub fn cluster_of(&self, point: &[f64]) -> Option<usize> {
        self.states.index_of(point).map(|i| self.assign[i])
    }

    /// Members of each cluster, as state indices in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_s()];
        for (i, &c) in self.assign.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// `Π(s)`. Unassigned states fall back to the representative whose row in
    /// `fallback` is nearest in sup norm (ties to the lowest cluster index).
    pub fn project(&self, point: &[f64], fallback: Option<&QFunction>) -> Result<Vec<f64>> {
        if let Some(c) = self.cluster_of(point) {
            return Ok(self.representative(c).to_vec());
        }
        let q = fallback.ok_or_else(|| {
            Error::invalid(format!("state {point:?} is not assigned and no fallback is enabled"))
        })?;
        let row = q
            .row_at(point)
            .ok_or_else(|| Error::invalid(format!("fallback Q-function does not cover {point:?}")))?;
        let mut best = (f64::INFINITY, 0usize);
        for c in 0..self.n_s() {
            let rep_row = q.row_at(self.representative(c)).ok_or_else(|| {
                Error::invalid(format!("fallback Q-function does not cover representative {c}"))
            })?;
            let d = row_distance(row, rep_row);
            if d < best.0 {
                best = (d, c);
            }
        }
        Ok(self.representative(best.1).to_vec())
    }

    pub fn to_document(&self) -> AggregationDocument {
        AggregationDocument {
            n_s: self.n_s(),
            representatives: self.representatives(),
            states: self.states().to_vec(),
            assign: self.assign.clone(),
        }
    }

    pub fn from_document(doc: AggregationDocument) -> Result<Self> {
        let states = Arc::new(StateSpace::new(doc.states)?);
        if doc.representatives.len() != doc.n_s {
            return Err(Error::invalid("n_s does not match the representative count"));
        }
        let reps = doc
            .representatives
            .iter()
            .map(|r| {
                states
                    .index_of(r)
                    .ok_or_else(|| Error::invalid(format!("representative {r:?} is not among the states")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(states, doc.assign, reps)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

pub(crate) fn row_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Q-distance `max_a |Q(s,a) − Q(s',a)|`.
pub fn q_distance(q: &QFunction, s: &[f64], s_prime: &[f64]) -> Result<f64> {
    let a = q
        .row_at(s)
        .ok_or_else(|| Error::invalid(format!("state {s:?} is not in the Q-function support")))?;
    let b = q
        .row_at(s_prime)
        .ok_or_else(|| Error::invalid(format!("state {s_prime:?} is not in the Q-function support")))?;
    Ok(row_distance(a, b))
}

/// `max_(s,a) |Q(s,a) − Q(Π(s),a)|` over the aggregation's states.
pub fn aggregation_q_error(q: &QFunction, aggregation: &Aggregation) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, p) in aggregation.states().iter().enumerate() {
        let rep = aggregation.representative(aggregation.assign[i]);
        worst = worst.max(q_distance(q, p, rep)?);
    }
    Ok(worst)
}

/// Result of one K-means run.
#[derive(Clone, Debug)]
pub struct KMeansRun {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after seeding and after every pass.
    pub objective_trace: Vec<f64>,
}

impl KMeansRun {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("non-empty trace")
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Within-cluster sum of squares for `labels` with centroid centers.
pub fn wcss(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let centers = centroids(points, labels, k);
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| centers[l].as_ref().map_or(0.0, |c| sq_dist(p, c)))
        .sum()
}

fn centroids(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

fn kmeans_pp_seed(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if u < acc && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// One K-means run: k-means++ seeding, Lloyd iterations, then single-point
/// (Hartigan) moves until no move lowers the objective.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<KMeansRun> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} points")));
    }
    let mut centers = kmeans_pp_seed(points, k, rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    let mut trace = vec![wcss(points, &labels, k)];
    let mut reseeds = 0;

    for _ in 0..300 {
        // Refill empty clusters with the point farthest from its own center.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        let mut cur = centroids(points, &labels, k);
        let mut refilled = false;
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            reseeds += 1;
            if reseeds > 10 * k {
                return Err(Error::invalid("K-means kept producing empty clusters"));
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(&points[a], cur[labels[a]].as_ref().unwrap());
                    let db = sq_dist(&points[b], cur[labels[b]].as_ref().unwrap());
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .ok_or_else(|| Error::invalid("no point available to refill an empty cluster"))?;
            counts[labels[far]] -= 1;
            labels[far] = j;
            counts[j] = 1;
            cur = centroids(points, &labels, k);
            refilled = true;
        }
        centers = cur.into_iter().map(|c| c.expect("all clusters non-empty")).collect();
        let new_labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        let changed = new_labels != labels;
        // A new assignment only replaces the old one if it keeps every cluster populated.
        let mut new_counts = vec![0usize; k];
        for &l in &new_labels {
            new_counts[l] += 1;
        }
        if new_counts.iter().all(|&c| c > 0) {
            labels = new_labels;
            trace.push(wcss(points, &labels, k));
            if !changed && !refilled {
                break;
            }
        } else {
            // Keep the non-empty labelling; the refill step handles the next pass.
            labels = new_labels;
        }
    }
    hartigan_refine(points, &mut labels, k, &mut trace);
    let centers = centroids(points, &labels, k)
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::invalid("K-means ended with an empty cluster"))?;
    Ok(KMeansRun { labels, centers, objective_trace: trace })
}

/// Moves single points between clusters while doing so strictly lowers WCSS.
fn hartigan_refine(points: &[Vec<f64>], labels: &mut [usize], k: usize, trace: &mut Vec<f64>) {
    let dim = points[0].len();
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; dim]; k];
    for (p, &l) in points.iter().zip(labels.iter()) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    if counts.iter().any(|&c| c == 0) {
        return;
    }
    let center = |sums: &[Vec<f64>], counts: &[usize], j: usize| -> Vec<f64> {
        sums[j].iter().map(|v| v / counts[j] as f64).collect()
    };
    let scale = trace.last().copied().unwrap_or(0.0).max(1e-300);
    let mut moved_any = false;
    for _ in 0..100 {
        let mut moved = false;
        for i in 0..points.len() {
            let from = labels[i];
            if counts[from] < 2 {
                continue;
            }
            let p = &points[i];
            let nf = counts[from] as f64;
            let removal = nf / (nf - 1.0) * sq_dist(p, &center(&sums, &counts, from));
            let mut best = (0.0f64, from);
            for to in 0..k {
                if to == from {
                    continue;
                }
                let nt = counts[to] as f64;
                let delta = nt / (nt + 1.0) * sq_dist(p, &center(&sums, &counts, to)) - removal;
                if delta < best.0 - 1e-12 * scale {
                    best = (delta, to);
                }
            }
            if best.1 != from {
                let to = best.1;
                counts[from] -= 1;
                counts[to] += 1;
                for d in 0..dim {
                    sums[from][d] -= p[d];
                    sums[to][d] += p[d];
                }
                labels[i] = to;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    if moved_any {
        trace.push(wcss(points, labels, k));
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Clusters `states` by K-means on their Q-vectors and picks a Chebyshev
/// medoid per cluster. Clusters are numbered by their lowest member index.
pub fn cluster_states(
    q: &QFunction,
    states: &[Vec<f64>],
    n_s: usize,
    seed: u64,
    restarts: usize,
) -> Result<Aggregation> {
    let space = Arc::new(StateSpace::new(states.to_vec())?);
    let n = space.len();
    if n_s == 0 || n_s > n {
        return Err(Error::invalid(format!("n_s = {n_s} must lie in [1, {n}]")));
    }
    let rows: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            q.row_at(s)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::invalid(format!("state {s:?} is not in the Q-function support")))
        })
        .collect::<Result<_>>()?;
    if n_s == n {
        return Ok(Aggregation::identity(space));
    }
    let restarts = restarts.max(1);
    let runs: Vec<Result<KMeansRun>> = (0..restarts)
        .into_par_iter()
        .map(|r| kmeans(&rows, n_s, &mut restart_rng(seed, r)))
        .collect();
    let mut best: Option<KMeansRun> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(run) => {
                if best.as_ref().map_or(true, |b| run.objective() < b.objective()) {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(last_err.expect("at least one restart ran")),
    };
    let labels = relabel_by_first_member(&best.labels, n_s);
    let reps = chebyshev_medoids(&rows, &labels, n_s);
    Aggregation::new(space, labels, reps)
}

fn relabel_by_first_member(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    labels.iter().map(|&l| map[l]).collect()
}

/// For each cluster, the member minimizing the maximum sup-norm distance to the other members.
fn chebyshev_medoids(rows: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<usize> {
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
        .iter()
        .map(|m| {
            let mut best = (f64::INFINITY, m[0]);
            for &i in m {
                let radius = m.iter().map(|&j| row_distance(&rows[i], &rows[j])).fold(0.0, f64::max);
                if radius < best.0 {
                    best = (radius, i);
                }
            }
            best.1
        })
        .collect()
}

/// Number of cuts per dimension: start from `⌊n_s^{1/d}⌋` and grow
/// coordinates in order while the product stays within `n_s`.
fn grid_shape(n_s: usize, distinct: &[usize]) -> Vec<usize> {
    let d = distinct.len();
    let mut base = (n_s as f64).powf(1.0 / d as f64).floor() as usize;
    while (base + 1).checked_pow(d as u32).is_some_and(|p| p <= n_s) {
        base += 1;
    }
    while base > 1 && base.pow(d as u32) > n_s {
        base -= 1;
    }
    let mut k: Vec<usize> = distinct.iter().map(|&u| base.max(1).min(u)).collect();
    loop {
        let mut grew = false;
        for j in 0..d {
            let product: usize = k.iter().product();
            if k[j] < distinct[j] && product / k[j] * (k[j] + 1) <= n_s {
                k[j] += 1;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    k
}

/// Quantile-grid aggregation on raw state coordinates. Each dimension's
/// distinct values are split into rank-quantile groups; empty product cells
/// are dropped, so at most `n_s` clusters result.
pub fn ad_hoc_aggregation(states: &[Vec<f64>], n_s: usize) -> Result<Aggregation> {
    let space = Arc::new(StateSpace::new(states.to_vec())?);
    let n = space.len();
    if n_s == 0 || n_s > n {
        return Err(Error::invalid(format!("n_s = {n_s} must lie in [1, {n}]")));
    }
    if n_s == n {
        return Ok(Aggregation::identity(space));
    }
    let d = space.dim();
    let mut sorted_distinct = Vec::with_capacity(d);
    for j in 0..d {
        let mut v: Vec<f64> = states.iter().map(|s| s[j]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        sorted_distinct.push(v);
    }
    let shape = grid_shape(n_s, &sorted_distinct.iter().map(Vec::len).collect::<Vec<_>>());
    let cell_of = |s: &[f64]| -> usize {
        let mut cell = 0;
        for j in 0..d {
            let vals = &sorted_distinct[j];
            let rank = vals.partition_point(|&v| v < s[j]);
            let group = rank * shape[j] / vals.len();
            cell = cell * shape[j] + group;
        }
        cell
    };
    let raw: Vec<usize> = states.iter().map(|s| cell_of(s)).collect();
    let total_cells: usize = shape.iter().product();
    let labels = relabel_by_first_member(&raw, total_cells);
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let reps = members
        .iter()
        .map(|m| {
            let median: Vec<f64> = (0..d)
                .map(|j| {
                    let mut v: Vec<f64> = m.iter().map(|&i| states[i][j]).collect();
                    v.sort_by(f64::total_cmp);
                    let h = v.len() / 2;
                    if v.len() % 2 == 1 {
                        v[h]
                    } else {
                        0.5 * (v[h - 1] + v[h])
                    }
                })
                .collect();
            let mut best = (f64::INFINITY, m[0]);
            for &i in m {
                let dist = sq_dist(&states[i], &median);
                if dist < best.0 {
                    best = (dist, i);
                }
            }
            best.1
        })
        .collect();
    Aggregation::new(space, labels, reps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_state_q() -> QFunction {
        QFunction::from_rows(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![vec![0.0, 0.0], vec![0.01, 0.0], vec![5.0, 5.0], vec![5.01, 5.0]],
        )
        .unwrap()
    }

    #[test]
    fn q_distance_formula() {
        let q = QFunction::from_rows(vec![vec![0.0], vec![1.0]], vec![vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(q_distance(&q, &[0.0], &[1.0]).unwrap(), 2.0);
        assert_eq!(q_distance(&q, &[1.0], &[0.0]).unwrap(), 2.0);
        assert_eq!(q_distance(&q, &[0.0], &[0.0]).unwrap(), 0.0);
        assert!(q_distance(&q, &[0.0], &[7.0]).is_err());
    }

    #[test]
    fn separated_pairs_cluster_together() {
        let q = four_state_q();
        let agg = cluster_states(&q, q.states(), 2, 0, 10).unwrap();
        assert_eq!(agg.assign(), &[0, 0, 1, 1]);
        assert!((aggregation_q_error(&q, &agg).unwrap() - 0.01).abs() < 1e-12);
        for s in agg.states() {
            let p = agg.project(s, None).unwrap();
            assert_eq!(agg.project(&p, None).unwrap(), p);
        }
    }

    #[test]
    fn identity_when_n_s_is_full() {
        let q = four_state_q();
        let agg = cluster_states(&q, q.states(), 4, 0, 10).unwrap();
        assert_eq!(aggregation_q_error(&q, &agg).unwrap(), 0.0);
        assert_eq!(agg.project(&[2.0], None).unwrap(), vec![2.0]);
        assert!(cluster_states(&q, q.states(), 5, 0, 10).is_err());
    }

    #[test]
    fn single_cluster_error_is_max_distance_to_medoid() {
        let q = four_state_q();
        let agg = cluster_states(&q, q.states(), 1, 0, 3).unwrap();
        let rep = agg.representative(0).to_vec();
        let scan = q.states().iter().map(|s| q_distance(&q, s, &rep).unwrap()).fold(0.0, f64::max);
        assert_eq!(aggregation_q_error(&q, &agg).unwrap(), scan);
    }

    #[test]
    fn fallback_projects_to_nearest_representative() {
        let q = four_state_q();
        let agg = cluster_states(&q, &q.states()[..3], 2, 0, 5).unwrap();
        assert!(agg.project(&[3.0], None).is_err());
        assert_eq!(agg.project(&[3.0], Some(&q)).unwrap(), vec![2.0]);
    }

    #[test]
    fn ad_hoc_median_split() {
        let states: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let agg = ad_hoc_aggregation(&states, 2).unwrap();
        assert_eq!(agg.n_s(), 2);
        assert_eq!(agg.cluster_of(&[49.0]), Some(0));
        assert_eq!(agg.cluster_of(&[50.0]), Some(1));
        let reps = agg.representatives();
        assert!((reps[0][0] - 25.0).abs() <= 1.0 && (reps[1][0] - 75.0).abs() <= 1.0, "{reps:?}");
        assert_eq!(ad_hoc_aggregation(&states, 100).unwrap().n_s(), 100);
    }

    #[test]
    fn ad_hoc_splits_every_dimension() {
        let mut states = Vec::new();
        for m in 0..15 {
            for d in 0..5 {
                states.push(vec![m as f64, d as f64]);
            }
        }
        let agg = ad_hoc_aggregation(&states, 10).unwrap();
        assert_eq!(agg.n_s(), 9);
        assert_ne!(agg.cluster_of(&[0.0, 0.0]), agg.cluster_of(&[0.0, 4.0]));
        assert_eq!(grid_shape(10, &[15, 5]), vec![3, 3]);
        assert_eq!(grid_shape(12, &[15, 5]), vec![4, 3]);
        assert_eq!(grid_shape(7, &[100]), vec![7]);
    }

    #[test]
    fn json_round_trip() {
        let q = four_state_q();
        let agg = cluster_states(&q, q.states(), 2, 3, 4).unwrap();
        let back = Aggregation::from_json(&agg.to_json().unwrap()).unwrap();
        assert_eq!(back, agg);
    }

    #[test]
    fn kmeans_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let run = kmeans(&pts, 4, &mut rng).unwrap();
        for w in run.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let base = wcss(&pts, &run.labels, 4);
        for i in 0..pts.len() {
            for to in 0..4 {
                let mut moved = run.labels.clone();
                if moved[i] == to || moved.iter().filter(|&&l| l == moved[i]).count() < 2 {
                    continue;
                }
                moved[i] = to;
                assert!(wcss(&pts, &moved, 4) >= base - 1e-12);
            }
        }
    }
}
