//! Command-line front end for simulation, estimation and diagnostics.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use samq::aggregation::{self, Aggregation};
use samq::bench::{self, DummyDemoConfig, ExperimentConfig, TableFormat};
use samq::data::{self, Dataset, InitDistribution, SamplingMode};
use samq::diagnostics::{self, DiagnoseInputs};
use samq::env::{self, BusEnvConfig, BusReward};
use samq::irl::{self, BinSpec, IrlOptions, PolicyModel};
use samq::mdp::{MdpSpec, RewardFeatures, ThetaVector};
use samq::nfmle::{self, EstimationReport, NfmleOptions, Optimizer};
use samq::optim::{GradientOptions, NelderMeadOptions};

#[derive(Parser)]
#[command(name = "samq", version, about = "Dynamic discrete choice estimation with Q-based state aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate transitions from the bus environment.
    Simulate(SimulateArgs),
    /// Estimate the agent Q-function from data.
    EstimateQ(EstimateQArgs),
    /// Build an aggregation from an estimated Q-function.
    Aggregate(AggregateArgs),
    /// Aggregated nested fixed-point maximum likelihood.
    Estimate(EstimateArgs),
    /// Evaluate bound ingredients and inequality checks.
    Diagnose(DiagnoseArgs),
    /// Replicated method comparison across n_s. Worker count comes from SAMQ_WORKERS.
    Benchmark(BenchmarkArgs),
    /// Compare aggregations on an environment with an irrelevant coordinate.
    DummyDemo(DummyDemoArgs),
}

#[derive(Args)]
struct EnvArgs {
    /// JSON environment config; flags below override it.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    mileage_max: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    dummy_dims: Option<usize>,
    #[arg(long)]
    zero_continue: bool,
}

impl EnvArgs {
    fn config(&self) -> Result<BusEnvConfig> {
        let mut cfg: BusEnvConfig = match &self.env {
            Some(p) => read_json(p)?,
            None => BusEnvConfig::default(),
        };
        if let Some(g) = self.grid {
            cfg.mileage_grid_size = g;
        }
        if let Some(m) = self.mileage_max {
            cfg.mileage_max = m;
        }
        if let Some(t) = &self.theta {
            cfg.theta_true = ThetaVector::new(t.clone())?;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(d) = self.dummy_dims {
            cfg.dummy_dims = d;
        }
        if self.zero_continue {
            cfg.reward = BusReward::ZeroContinue;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Sampling::Iid)]
    sampling: Sampling,
    /// Output CSV; metadata goes to the matching `.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the environment MDP as JSON.
    #[arg(long)]
    mdp_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampling {
    Iid,
    Chained,
}

#[derive(Args)]
struct EstimateQArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gamma: f64,
    /// Polynomial degree of the logit policy.
    #[arg(long, default_value_t = 4)]
    degree: usize,
    /// Use frequency counts per exact state instead of the logit policy.
    #[arg(long)]
    tabular: bool,
    /// Laplace smoothing for the tabular policy.
    #[arg(long, default_value_t = 0.5)]
    smoothing: f64,
    /// Action whose reward does not depend on the state.
    #[arg(long, default_value_t = env::REPLACE)]
    anchor: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationMethod {
    Samq,
    Adhoc,
}

#[derive(Args)]
struct AggregateArgs {
    /// Q-function CSV from `estimate-q`.
    #[arg(long)]
    q: PathBuf,
    #[arg(long)]
    n_s: usize,
    #[arg(long, value_enum, default_value_t = AggregationMethod::Samq)]
    method: AggregationMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = aggregation::DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerKind {
    NelderMead,
    Gradient,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Aggregation JSON; without it the full MDP from `--mdp` is used.
    #[arg(long)]
    aggregation: Option<PathBuf>,
    /// MDP JSON for full-state estimation.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    gamma: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    theta_init: Vec<f64>,
    /// Per-coordinate bounds as `lo:hi`, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_bound)]
    bounds: Option<Vec<(f64, f64)>>,
    #[arg(long, default_value_t = 1)]
    min_cell_count: usize,
    #[arg(long, value_enum, default_value_t = OptimizerKind::NelderMead)]
    optimizer: OptimizerKind,
    #[arg(long)]
    r_max: Option<f64>,
    /// Attach the curvature estimate at the optimum.
    #[arg(long)]
    concavity: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    aggregation: PathBuf,
    /// Estimation report JSON from `estimate`.
    #[arg(long)]
    report: PathBuf,
    /// Estimated Q-function CSV.
    #[arg(long)]
    q: Option<PathBuf>,
    /// True MDP JSON; enables the ground-truth quantities.
    #[arg(long, requires = "theta_star")]
    mdp: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta_star: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Parameter-set size; defaults to box volume / 0.01^k from `--bounds`.
    #[arg(long)]
    theta_card: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_bound)]
    bounds: Option<Vec<(f64, f64)>>,
    #[arg(long)]
    r_max: Option<f64>,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DummyDemoArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_s: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-state cluster CSV.
    #[arg(long)]
    out: PathBuf,
}

fn parse_bound(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    Ok((lo, hi))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: &Path, gamma: Option<f64>) -> Result<Dataset> {
    let ds = Dataset::read_csv(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(g) = gamma {
        if (g - ds.gamma()).abs() > 1e-12 {
            bail!("--gamma {g} disagrees with the dataset's recorded discount {}", ds.gamma());
        }
    }
    Ok(ds)
}

fn load_mdp(path: &Path) -> Result<MdpSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(MdpSpec::from_json(&text)?)
}

fn load_aggregation(path: &Path) -> Result<Aggregation> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Aggregation::from_json(&text)?)
}

/// Reward features from the dataset metadata, falling back to the MDP.
fn reward_source<'a>(ds: &Dataset, mdp: Option<&'a MdpSpec>) -> Result<Box<dyn RewardFeatures + 'a>> {
    match (nfmle::dataset_rewards(ds), mdp) {
        (Ok(r), _) => Ok(Box::new(r)),
        (Err(_), Some(m)) => Ok(Box::new(m.clone())),
        (Err(e), None) => Err(e).context("the dataset carries no reward model; pass --mdp"),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.env.config()?;
    let mdp = env::make_bus_env(&cfg)?;
    let mode = match args.sampling {
        Sampling::Iid => SamplingMode::Iid,
        Sampling::Chained => SamplingMode::Chained,
    };
    let ds = data::simulate(&mdp, &cfg.theta_true, args.n, args.seed, &InitDistribution::Uniform, mode)?;
    ds.write_csv(&args.out)?;
    if let Some(p) = &args.mdp_out {
        fs::write(p, mdp.to_json()?)?;
    }
    println!("wrote {} transitions to {}", ds.len(), args.out.display());
    Ok(())
}

fn estimate_q(args: EstimateQArgs) -> Result<()> {
    let ds = load_dataset(&args.data, Some(args.gamma))?;
    let policy = if args.tabular {
        PolicyModel::Tabular { bins: BinSpec::Exact, smoothing: args.smoothing }
    } else {
        PolicyModel::Logit { degree: args.degree, ridge: 1e-8 }
    };
    let opts = IrlOptions { policy, anchor: args.anchor, ..IrlOptions::default() };
    let est = irl::estimate_q(&ds, args.gamma, &opts)?;
    irl::write_q_csv(&est.q, &args.out)?;
    println!(
        "Q estimated on {} states (value residual {:.2e}); wrote {}",
        est.q.n_states(),
        est.fit_residual,
        args.out.display()
    );
    Ok(())
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    let q = irl::read_q_csv(&args.q)?;
    let states = q.states().to_vec();
    let agg = match args.method {
        AggregationMethod::Samq => aggregation::cluster_states(&q, &states, args.n_s, args.seed, args.restarts)?,
        AggregationMethod::Adhoc => aggregation::ad_hoc_aggregation(&states, args.n_s)?,
    };
    fs::write(&args.out, agg.to_json()?)?;
    println!(
        "{} clusters, estimated Q error {:.6}; wrote {}",
        agg.n_s(),
        aggregation::aggregation_q_error(&q, &agg)?,
        args.out.display()
    );
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let ds = load_dataset(&args.data, Some(args.gamma))?;
    let theta_init = match args.bounds {
        Some(b) => ThetaVector::with_bounds(args.theta_init, b)?,
        None => ThetaVector::new(args.theta_init)?,
    };
    let optimizer = match args.optimizer {
        OptimizerKind::NelderMead => Optimizer::NelderMead(NelderMeadOptions::default()),
        OptimizerKind::Gradient => Optimizer::GradientAscent(GradientOptions::default()),
    };
    let opts = NfmleOptions { optimizer, min_cell_count: args.min_cell_count, r_max: args.r_max, ..NfmleOptions::default() };
    let mdp = args.mdp.as_deref().map(load_mdp).transpose()?;
    let mut report: EstimationReport = match (&args.aggregation, &mdp) {
        (Some(a), _) => {
            let agg = load_aggregation(a)?;
            let rewards = reward_source(&ds, mdp.as_ref())?;
            let mut report = nfmle::nfmle_estimate(&ds, &agg, rewards.as_ref(), &theta_init, &opts)?;
            if args.concavity {
                let c_h = diagnostics::estimate_concavity(&ds, &agg, rewards.as_ref(), &report.theta_hat, 1e-3)?;
                report.diagnostics = Some(serde_json::json!({ "c_h": c_h }));
            }
            report
        }
        (None, Some(m)) => nfmle::exact_nfmle(&ds, m, &theta_init, &opts)?,
        (None, None) => bail!("pass --aggregation, or --mdp for full-state estimation"),
    };
    if report.diagnostics.is_none() {
        report.diagnostics = Some(serde_json::json!({ "data_digest": data::digest(fs::read(&args.data)?.as_slice()) }));
    }
    fs::write(&args.out, report.to_json()?)?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    println!(
        "theta_hat = {:?}, log-likelihood {:.6}; wrote {}",
        report.theta_hat.values,
        report.log_likelihood,
        args.out.display()
    );
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let ds = load_dataset(&args.data, None)?;
    let agg = load_aggregation(&args.aggregation)?;
    let report: EstimationReport = read_json(&args.report)?;
    let q_hat = args.q.as_deref().map(irl::read_q_csv).transpose()?;
    let mdp = args.mdp.as_deref().map(load_mdp).transpose()?;
    let theta_star = args.theta_star.map(ThetaVector::new).transpose()?;
    let rewards = reward_source(&ds, mdp.as_ref())?;
    let theta_card = match (args.theta_card, &args.bounds, &report.theta_hat.bounds) {
        (Some(c), _, _) => c,
        (None, Some(b), _) | (None, None, Some(b)) => diagnostics::theta_card_proxy(b, 0.01),
        (None, None, None) => bail!("pass --theta-card or --bounds to size the parameter set"),
    };
    let truth = match (&mdp, &theta_star) {
        (Some(m), Some(t)) => Some((m, t)),
        _ => None,
    };
    let out = diagnostics::bound_report(&DiagnoseInputs {
        dataset: &ds,
        aggregation: &agg,
        rewards: rewards.as_ref(),
        theta_hat: &report.theta_hat,
        q_hat: q_hat.as_ref(),
        truth,
        delta: args.delta,
        theta_card,
        r_max: args.r_max,
        h: args.h,
    })?;
    print!("{}", out.table());
    for note in &out.notes {
        println!("note: {note}");
    }
    match &args.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.output_dir = Some(args.out.clone());
    let table = bench::run_experiment(&cfg)?;
    print!("{}", bench::render_table(&table, TableFormat::Markdown)?);
    for row in table.rows.iter().filter(|r| !r.annotations.is_empty()) {
        eprintln!("{} n_s={}: {} failed replications", row.method, row.n_s, row.annotations.len());
    }
    println!("results in {}", args.out.display());
    Ok(())
}

fn dummy_demo(args: DummyDemoArgs) -> Result<()> {
    let mut cfg: DummyDemoConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => DummyDemoConfig::default(),
    };
    if let Some(k) = args.n_s {
        cfg.n_s = k;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let result = bench::run_dummy_state_demo(&cfg)?;
    bench::write_demo_csv(&result, &args.out)?;
    println!(
        "column purity: SAmQ {:.4}, ad-hoc {:.4}; wrote {}",
        result.samq_purity,
        result.adhoc_purity,
        args.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::EstimateQ(a) => estimate_q(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Estimate(a) => estimate(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Benchmark(a) => benchmark(a),
        Command::DummyDemo(a) => dummy_demo(a),
    }
}
