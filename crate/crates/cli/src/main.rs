use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ritini::baselines::{run_baseline, scores_to_csv, BaselineConfig, BaselineMethod};
use ritini::bench::{build_prior, evaluate, infer_with_prior, run_benchmark, BenchmarkConfig, Metric, RitiniMethodConfig};
use ritini::data::{load_dataset, save_dataset, PerturbationRecord};
use ritini::graph::{PriorGraph, WeightedDigraph};
use ritini::sim::{SimulatorConfig, SystemKind};

#[derive(Parser)]
#[command(name = "ritini", version, about = "Interaction graph inference from multivariate time series")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a built-in system into a dataset directory.
    Simulate(SimulateArgs),
    /// Train the attention graph ODE and extract graphs.
    Infer(InferArgs),
    /// Run one classical baseline.
    Baseline(BaselineArgs),
    /// Score a predicted graph against a reference graph.
    Evaluate(EvaluateArgs),
    /// Run a benchmark configuration.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML simulator config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// five-node, wilson-cowan, iaf or dmf.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    edge_probability: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON array of `{vertex, time, epsilon[, parameter]}` records.
    #[arg(long)]
    perturb: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    data: PathBuf,
    /// Prior graph JSON, or `auto-gc` for the dataset prior / Granger graph.
    #[arg(long, default_value = "auto-gc")]
    prior: String,
    /// TOML file with a RiTINI method table; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    solver_steps: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Share of interior samples held out; 0 trains on everything.
    #[arg(long)]
    holdout: Option<f64>,
    /// Let every vertex attend to every other.
    #[arg(long)]
    dense: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    /// gc, oce, pc, mte or mmi.
    #[arg(long)]
    method: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Lags for every method (defaults: 5 for gc, 1 for the others).
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long, default_value_t = 3)]
    dmax: usize,
    #[arg(long, default_value_t = 100)]
    n_perm: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Graph JSON; the score table goes next to it as `<stem>_scores.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// ged, precision or recall.
    #[arg(long, default_value = "ged")]
    metric: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also train without perturbed replicates.
    #[arg(long)]
    ablation: bool,
    /// Lift the desk-scale size caps.
    #[arg(long)]
    large: bool,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.system) {
        (Some(p), _) => SimulatorConfig::load(p)?,
        (None, Some(s)) => SimulatorConfig::new(s.parse::<SystemKind>()?),
        (None, None) => bail!("give --system or --config"),
    };
    if let (Some(_), Some(s)) = (&a.config, &a.system) {
        cfg.system = s.parse()?;
    }
    if let Some(n) = a.nodes {
        cfg.nodes = n;
    }
    cfg.steps = a.steps.or(cfg.steps);
    cfg.dt = a.dt.or(cfg.dt);
    cfg.noise = a.noise.or(cfg.noise);
    if let Some(p) = a.edge_probability {
        cfg.edge_probability = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = &a.perturb {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.perturbations = serde_json::from_str::<Vec<PerturbationRecord>>(&text)?;
    }
    let data = cfg.simulate()?;
    save_dataset(&data, &a.out)?;
    println!(
        "wrote {} series of {} samples x {} vertices to {}",
        data.series.len(),
        data.series[0].len(),
        data.n_vertices(),
        a.out.display()
    );
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let mut rc = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<RitiniMethodConfig>(&text)?
        }
        None => RitiniMethodConfig::default(),
    };
    let t = &mut rc.train;
    if let Some(v) = a.lags {
        t.model.lags = v;
    }
    if let Some(v) = a.hidden {
        t.model.hidden = v;
        t.model.attention_hidden = v;
        t.model.dynamics_hidden = v;
    }
    if let Some(v) = a.lambda1 {
        t.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        t.lambda2 = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        t.optimizer.learning_rate = v;
    }
    if let Some(v) = a.solver_steps {
        t.solver_steps = v;
    }
    t.dense_support |= a.dense;
    if let Some(v) = a.threshold {
        rc.threshold = v;
    }
    if let Some(v) = a.holdout {
        rc.holdout_fraction = v;
    }
    let graph = if a.prior == "auto-gc" {
        build_prior(&data, rc.prior, rc.train.model.lags)?.digraph().clone()
    } else {
        WeightedDigraph::load(&a.prior)?
    };
    let prior = if rc.train.dense_support {
        PriorGraph::dense(graph)
    } else {
        PriorGraph::new(graph)
    };
    let inf = infer_with_prior(&data, prior, &rc, a.seed)?;
    inf.write(&data, &a.out)?;
    println!(
        "final loss {:.6}, {} static edges, hysteresis index {:.4}",
        inf.model.loss_history.last().copied().unwrap_or(f64::NAN),
        inf.graphs.static_graph.num_edges(),
        inf.model.hysteresis_index()
    );
    if let Some(s) = inf.scores {
        println!(
            "held-out mse {:.6} (linear interpolation {:.6}, relative {:.4})",
            s.mse, s.interpolation_mse, s.relative_mse
        );
    }
    if let Some(t) = &data.ground_truth {
        println!("ged to ground truth {}", ritini::graph::graph_edit_distance(&inf.graphs.static_graph, t)?);
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let method: BaselineMethod = a.method.parse()?;
    let mut cfg = BaselineConfig::default();
    cfg.granger.alpha = a.alpha;
    cfg.pc.alpha = a.alpha;
    cfg.pc.d_max = a.dmax;
    cfg.info.significance.alpha = a.alpha;
    cfg.info.significance.n_perm = a.n_perm;
    cfg.info.significance.seed = a.seed;
    if let Some(l) = a.lags {
        cfg.granger.lags = l;
        cfg.info.lags = l;
    }
    let (graph, scores) = run_baseline(method, &data, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    graph.save(&a.out)?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
    fs::write(a.out.with_file_name(format!("{stem}_scores.csv")), scores_to_csv(&scores))?;
    println!("{}: {} edges", method.name(), graph.num_edges());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = BenchmarkConfig::load(&a.config)?;
    cfg.report.ablation |= a.ablation;
    cfg.report.large |= a.large;
    let report = run_benchmark(&cfg, Some(&a.out))?;
    print!("{}", report.to_csv());
    let failed = report.cells.iter().filter(|c| c.failed()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see report.json");
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Baseline(a) => baseline(a),
        Command::Evaluate(a) => {
            let v = evaluate(&a.pred, &a.truth, a.metric.parse::<Metric>()?)?;
            println!("{v}");
            Ok(())
        }
        Command::Bench(a) => bench(a),
    }
}
