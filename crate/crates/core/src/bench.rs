//! Experiment harness: replicated simulate → estimate → aggregate → NF-MLE
//! sweeps on the bus environment, plus the dummy-coordinate demo.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{self, Aggregation, DEFAULT_RESTARTS};
use crate::data::{self, Dataset, InitDistribution, SamplingMode};
use crate::diagnostics;
use crate::env::{self, BusEnvConfig};
use crate::error::{Error, Result};
use crate::irl::{self, IrlOptions, PolicyModel};
use crate::mdp::{MdpSpec, RewardModel, ThetaVector};
use crate::nfmle::{self, EstimationReport, NfmleOptions};

/// Environment variable holding the worker count for experiment pools.
pub const WORKERS_ENV: &str = "SAMQ_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Learned Q-function, K-means aggregation, aggregated NF-MLE.
    #[serde(rename = "SAmQ")]
    Samq,
    /// Quantile-grid aggregation, aggregated NF-MLE.
    #[serde(rename = "NF-MLE-SA")]
    NfmleSa,
    /// Full-state NF-MLE on the true kernel.
    #[serde(rename = "NF-MLE")]
    Nfmle,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Samq, Method::NfmleSa, Method::Nfmle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Samq => "SAmQ",
            Method::NfmleSa => "NF-MLE-SA",
            Method::Nfmle => "NF-MLE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: BusEnvConfig,
    /// Transitions per replication.
    pub n: usize,
    pub n_s_list: Vec<usize>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    /// Overrides `env.gamma` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub sampling: SamplingMode,
    pub irl: IrlOptions,
    pub nfmle: NfmleOptions,
    /// Starting points; the best final likelihood wins.
    pub theta_init: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_bounds: Option<Vec<(f64, f64)>>,
    pub kmeans_restarts: usize,
    /// Estimate C_H at every aggregated estimate.
    pub concavity: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: BusEnvConfig::default(),
            n: 10_000,
            n_s_list: vec![5, 10, 50, 100, 200],
            methods: Method::ALL.to_vec(),
            replications: 10,
            seed: 0,
            gamma: None,
            sampling: SamplingMode::Iid,
            irl: IrlOptions::default(),
            nfmle: NfmleOptions::default(),
            theta_init: vec![vec![0.1, 1.0]],
            theta_bounds: None,
            kmeans_restarts: DEFAULT_RESTARTS,
            concavity: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn env_config(&self) -> BusEnvConfig {
        let mut env = self.env.clone();
        if let Some(g) = self.gamma {
            env.gamma = g;
        }
        env
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods must not be empty"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        let grid = self.env.n_states();
        if self.methods.iter().any(|m| *m != Method::Nfmle) {
            if self.n_s_list.is_empty() {
                return Err(Error::invalid("n_s_list must not be empty"));
            }
            if let Some(bad) = self.n_s_list.iter().find(|&&k| k == 0 || k > grid) {
                return Err(Error::invalid(format!("n_s = {bad} must lie in [1, {grid}]")));
            }
        }
        if self.theta_init.is_empty() || self.theta_init.iter().any(|t| t.len() != 2) {
            return Err(Error::invalid("theta_init must list at least one 2-vector"));
        }
        Ok(())
    }

    fn starts(&self) -> Result<Vec<ThetaVector>> {
        self.theta_init
            .iter()
            .map(|t| match &self.theta_bounds {
                Some(b) => ThetaVector::with_bounds(t.clone(), b.clone()),
                None => ThetaVector::new(t.clone()),
            })
            .collect()
    }
}

/// One (replication, method, n_s) outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    pub n_s: usize,
    pub theta_hat: Option<Vec<f64>>,
    pub squared_error: Option<f64>,
    pub runtime_s: f64,
    /// Largest distance from the chosen estimate among the other starts.
    pub init_spread: Option<f64>,
    pub c_h: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub n_s: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub runtime_s: f64,
    pub n: usize,
    /// Successful replications.
    pub replications: usize,
    #[serde(default)]
    pub mse_median: Option<f64>,
    #[serde(default)]
    pub c_h_min: Option<f64>,
    #[serde(default)]
    pub annotations: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    #[serde(default)]
    pub runs: Vec<RunRecord>,
}

impl BenchmarkTable {
    pub fn row(&self, method: Method, n_s: usize) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method && r.n_s == n_s)
    }
}

/// Worker count from [`WORKERS_ENV`], else rayon's default.
pub fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Maximizes from every start and keeps the highest likelihood.
fn multi_start<F>(starts: &[ThetaVector], mut run: F) -> Result<(EstimationReport, f64)>
where
    F: FnMut(&ThetaVector) -> Result<EstimationReport>,
{
    let mut reports = Vec::with_capacity(starts.len());
    let mut last_err = None;
    for s in starts {
        match run(s) {
            Ok(r) => reports.push(r),
            Err(e) => last_err = Some(e),
        }
    }
    let best = reports
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.log_likelihood.total_cmp(&b.1.log_likelihood).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);
    let Some(best) = best else {
        return Err(last_err.unwrap_or_else(|| Error::invalid("no starting point")));
    };
    let spread = reports
        .iter()
        .map(|r| r.theta_hat.squared_distance(&reports[best].theta_hat).sqrt())
        .fold(0.0, f64::max);
    Ok((reports.swap_remove(best), spread))
}

struct Replication<'a> {
    config: &'a ExperimentConfig,
    mdp: &'a MdpSpec,
    theta_star: &'a ThetaVector,
    starts: &'a [ThetaVector],
    index: usize,
    seed: u64,
}

impl Replication<'_> {
    fn record(&self, method: Method, n_s: usize, outcome: Result<(EstimationReport, f64, Option<f64>)>, runtime_s: f64) -> RunRecord {
        let mut rec = RunRecord {
            replication: self.index,
            seed: self.seed,
            method,
            n_s,
            theta_hat: None,
            squared_error: None,
            runtime_s,
            init_spread: None,
            c_h: None,
            error: None,
        };
        match outcome {
            Ok((report, spread, c_h)) => {
                rec.squared_error = Some(report.squared_error(self.theta_star));
                rec.theta_hat = Some(report.theta_hat.values);
                rec.init_spread = Some(spread);
                rec.c_h = c_h;
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    }

    fn aggregated(&self, dataset: &Dataset, rewards: &RewardModel, agg: Result<Aggregation>) -> (Result<(EstimationReport, f64, Option<f64>)>, f64) {
        let agg = match agg {
            Ok(a) => a,
            Err(e) => return (Err(e), 0.0),
        };
        let t0 = Instant::now();
        let est = multi_start(self.starts, |s| nfmle::nfmle_estimate(dataset, &agg, rewards, s, &self.config.nfmle));
        let runtime = t0.elapsed().as_secs_f64();
        let out = est.map(|(report, spread)| {
            let c_h = self
                .config
                .concavity
                .then(|| diagnostics::estimate_concavity(dataset, &agg, rewards, &report.theta_hat, 1e-3).ok())
                .flatten();
            (report, spread, c_h)
        });
        (out, runtime)
    }

    fn run(&self) -> Vec<RunRecord> {
        let cfg = self.config;
        let dataset = match data::simulate(self.mdp, self.theta_star, cfg.n, self.seed, &InitDistribution::Uniform, cfg.sampling) {
            Ok(d) => d,
            Err(e) => {
                return self.all_failed(&format!("simulation: {e}"));
            }
        };
        let rewards = match nfmle::dataset_rewards(&dataset) {
            Ok(r) => r,
            Err(e) => return self.all_failed(&e.to_string()),
        };
        let support: Vec<Vec<f64>> = dataset.support().points().to_vec();
        let q_hat = if cfg.methods.contains(&Method::Samq) {
            Some(irl::estimate_q(&dataset, dataset.gamma(), &cfg.irl).map(|e| e.q))
        } else {
            None
        };

        let mut tasks: Vec<(Method, usize)> = Vec::new();
        for &m in &cfg.methods {
            match m {
                Method::Nfmle => tasks.push((m, 0)),
                _ => tasks.extend(cfg.n_s_list.iter().map(|&k| (m, k))),
            }
        }
        let records: Vec<RunRecord> = tasks
            .par_iter()
            .map(|&(method, n_s)| match method {
                Method::Nfmle => {
                    let t0 = Instant::now();
                    let est = multi_start(self.starts, |s| nfmle::exact_nfmle(&dataset, self.mdp, s, &cfg.nfmle));
                    let runtime = t0.elapsed().as_secs_f64();
                    self.record(method, 0, est.map(|(r, spread)| (r, spread, None)), runtime)
                }
                Method::Samq => {
                    let agg = match q_hat.as_ref().expect("Q estimated for SAmQ") {
                        Ok(q) => aggregation::cluster_states(q, &support, n_s, self.seed, cfg.kmeans_restarts),
                        Err(e) => Err(Error::invalid(format!("Q estimation: {e}"))),
                    };
                    let (out, runtime) = self.aggregated(&dataset, &rewards, agg);
                    self.record(method, n_s, out, runtime)
                }
                Method::NfmleSa => {
                    let agg = aggregation::ad_hoc_aggregation(&support, n_s);
                    let (out, runtime) = self.aggregated(&dataset, &rewards, agg);
                    self.record(method, n_s, out, runtime)
                }
            })
            .collect();
        records
    }

    fn all_failed(&self, msg: &str) -> Vec<RunRecord> {
        let mut out = Vec::new();
        for &m in &self.config.methods {
            let sizes: Vec<usize> = if m == Method::Nfmle { vec![0] } else { self.config.n_s_list.clone() };
            for k in sizes {
                out.push(self.record(m, k, Err(Error::invalid(msg.to_string())), 0.0));
            }
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Replication `r` uses seed `config.seed + r`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<BenchmarkTable> {
    config.validate()?;
    let env_cfg = config.env_config();
    let mdp = env::make_bus_env(&env_cfg)?;
    let theta_star = env_cfg.theta_true.clone();
    let starts = config.starts()?;

    let runs: Vec<RunRecord> = with_pool(|| {
        (0..config.replications)
            .into_par_iter()
            .flat_map_iter(|index| {
                Replication {
                    config,
                    mdp: &mdp,
                    theta_star: &theta_star,
                    starts: &starts,
                    index,
                    seed: config.seed.wrapping_add(index as u64),
                }
                .run()
            })
            .collect()
    })?;

    let mut rows = Vec::new();
    let n_s_cols: Vec<usize> = if config.methods.iter().all(|m| *m == Method::Nfmle) {
        vec![env_cfg.n_states()]
    } else {
        config.n_s_list.clone()
    };
    for &method in &config.methods {
        // The full-state method does not depend on n_s; its row repeats in every column.
        let cells: Vec<(usize, usize)> = match method {
            Method::Nfmle => n_s_cols.iter().map(|&k| (k, 0)).collect(),
            _ => config.n_s_list.iter().map(|&k| (k, k)).collect(),
        };
        for (col, key) in cells {
            let cell: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method && r.n_s == key).collect();
            let errors: Vec<f64> = cell.iter().filter_map(|r| r.squared_error).collect();
            let annotations: Vec<String> = cell
                .iter()
                .filter_map(|r| r.error.as_ref().map(|e| format!("replication {}: {e}", r.replication)))
                .collect();
            if errors.is_empty() {
                return Err(Error::invalid(format!(
                    "every replication failed for {method} at n_s = {col}: {}",
                    annotations.join("; ")
                )));
            }
            let (mse_mean, mse_std) = mean_std(&errors);
            let runtimes: Vec<f64> = cell.iter().filter(|r| r.error.is_none()).map(|r| r.runtime_s).collect();
            let c_h_min = cell.iter().filter_map(|r| r.c_h).reduce(f64::min);
            rows.push(BenchmarkRow {
                method,
                n_s: col,
                mse_mean,
                mse_std,
                runtime_s: runtimes.iter().sum::<f64>() / runtimes.len() as f64,
                n: config.n,
                replications: errors.len(),
                mse_median: Some(median(&errors)),
                c_h_min,
                annotations,
            });
        }
    }
    let table = BenchmarkTable { rows, runs };
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        export_table(&table, TableFormat::Csv, &dir.join("table.csv"))?;
        export_table(&table, TableFormat::Markdown, &dir.join("table.md"))?;
        fs::write(dir.join("rows.json"), serde_json::to_string_pretty(&table.rows)?)?;
        fs::write(dir.join("runs.json"), serde_json::to_string_pretty(&table.runs)?)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            _ => Err(Error::invalid(format!("unknown table format {s:?}"))),
        }
    }
}

const CSV_HEADER: [&str; 7] = ["method", "n_s", "mse_mean", "mse_std", "runtime_s", "n", "replications"];

fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = 5 - x.abs().log10().floor() as i32;
    if (-4..=5).contains(&(5 - digits)) {
        format!("{:.*}", digits.max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

/// Renders the table. CSV keeps full precision; markdown shows 6 significant digits.
pub fn render_table(table: &BenchmarkTable, format: TableFormat) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::invalid("table has no rows"));
    }
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in &table.rows {
                w.write_record([
                    r.method.name().to_string(),
                    r.n_s.to_string(),
                    r.mse_mean.to_string(),
                    r.mse_std.to_string(),
                    r.runtime_s.to_string(),
                    r.n.to_string(),
                    r.replications.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n|{}\n", CSV_HEADER.join(" | "), "---|".repeat(CSV_HEADER.len()));
            for r in &table.rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} |\n",
                    r.method,
                    r.n_s,
                    sig6(r.mse_mean),
                    sig6(r.mse_std),
                    sig6(r.runtime_s),
                    r.n,
                    r.replications
                ));
            }
            Ok(out)
        }
    }
}

pub fn export_table(table: &BenchmarkTable, format: TableFormat, path: &Path) -> Result<()> {
    let text = render_table(table, format)?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Parses rows written by [`render_table`] in CSV form.
pub fn read_table_csv(text: &str) -> Result<BenchmarkTable> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::invalid(format!("unexpected table header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::invalid(format!("bad number {:?}", &rec[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|_| Error::invalid(format!("bad integer {:?}", &rec[i])))
        };
        rows.push(BenchmarkRow {
            method: rec[0].parse()?,
            n_s: int(1)?,
            mse_mean: num(2)?,
            mse_std: num(3)?,
            runtime_s: num(4)?,
            n: int(5)?,
            replications: int(6)?,
            mse_median: None,
            c_h_min: None,
            annotations: Vec::new(),
        });
    }
    Ok(BenchmarkTable { rows, runs: Vec::new() })
}

/// Dummy-coordinate aggregation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DummyDemoConfig {
    pub env: BusEnvConfig,
    pub n: usize,
    pub n_s: usize,
    pub seed: u64,
    pub irl: IrlOptions,
    pub kmeans_restarts: usize,
}

impl Default for DummyDemoConfig {
    fn default() -> Self {
        Self {
            env: BusEnvConfig { mileage_grid_size: 15, dummy_dims: 1, dummy_levels: 5, ..BusEnvConfig::default() },
            n: 50_000,
            n_s: 10,
            seed: 0,
            irl: IrlOptions { policy: PolicyModel::Logit { degree: 3, ridge: 1e-8 }, ..IrlOptions::default() },
            kmeans_restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRow {
    pub true_coord: f64,
    pub dummy: Vec<f64>,
    pub samq_cluster: usize,
    pub adhoc_cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DummyDemoResult {
    pub rows: Vec<DemoRow>,
    pub samq_purity: f64,
    pub adhoc_purity: f64,
}

/// Fraction of same-true-coordinate pairs that share a cluster; 1 if there are no such pairs.
pub fn column_purity(true_coords: &[f64], labels: &[usize]) -> f64 {
    assert_eq!(true_coords.len(), labels.len(), "one label per state");
    let (mut pairs, mut shared) = (0usize, 0usize);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if true_coords[i] == true_coords[j] {
                pairs += 1;
                shared += usize::from(labels[i] == labels[j]);
            }
        }
    }
    if pairs == 0 {
        1.0
    } else {
        shared as f64 / pairs as f64
    }
}

pub fn run_dummy_state_demo(config: &DummyDemoConfig) -> Result<DummyDemoResult> {
    if config.env.dummy_dims == 0 {
        return Err(Error::invalid("the demo needs at least one dummy coordinate"));
    }
    let mdp = env::make_bus_env(&config.env)?;
    let dataset = data::simulate(
        &mdp,
        &config.env.theta_true,
        config.n,
        config.seed,
        &InitDistribution::Uniform,
        SamplingMode::Iid,
    )?;
    let q = irl::estimate_q(&dataset, dataset.gamma(), &config.irl)?.q;
    let support = dataset.support().points().to_vec();
    let samq = aggregation::cluster_states(&q, &support, config.n_s, config.seed, config.kmeans_restarts)?;
    let adhoc = aggregation::ad_hoc_aggregation(&support, config.n_s)?;
    let rows: Vec<DemoRow> = support
        .iter()
        .enumerate()
        .map(|(i, p)| DemoRow {
            true_coord: p[0],
            dummy: p[1..].to_vec(),
            samq_cluster: samq.assign()[i],
            adhoc_cluster: adhoc.assign()[i],
        })
        .collect();
    let coords: Vec<f64> = support.iter().map(|p| p[0]).collect();
    Ok(DummyDemoResult {
        samq_purity: column_purity(&coords, samq.assign()),
        adhoc_purity: column_purity(&coords, adhoc.assign()),
        rows,
    })
}

/// Writes `true_coord, dummy_0.., samq_cluster, adhoc_cluster`.
pub fn write_demo_csv(result: &DummyDemoResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dims = result.rows.first().map_or(0, |r| r.dummy.len());
    let mut header = vec!["true_coord".to_string()];
    header.extend((0..dims).map(|i| format!("dummy_{i}")));
    header.extend(["samq_cluster".to_string(), "adhoc_cluster".to_string()]);
    w.write_record(&header)?;
    for r in &result.rows {
        let mut rec = vec![r.true_coord.to_string()];
        rec.extend(r.dummy.iter().map(f64::to_string));
        rec.extend([r.samq_cluster.to_string(), r.adhoc_cluster.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
