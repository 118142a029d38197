mod config;
mod error;
mod run;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmf_core::baselines::CentralParams;
use dmf_core::checkpoint::{Checkpoint, ModelKind};
use dmf_core::dataio::{filter_interactions, normalize, parse_checkins, split, Dataset, NormalizeMode, ParseOptions};
use dmf_core::dmf::HyperParams;
use dmf_core::eval::{evaluate, EvalOptions, EvalReport};
use dmf_core::geograph::{derive_locations, AdjacencyGraph, DistanceMapping, WalkMode, WalkPolicy, WalkScale};
use dmf_core::synth::{generate, write_checkins, SynthConfig};

use crate::config::{pick, require_path, switch, FileConfig, MappingKind};
use crate::error::{CliError, Result};
use crate::run::{checkpoint_labels, run, stats_csv, RunSpec};

#[derive(Parser)]
#[command(name = "dmf", version, about = "Decentralized matrix factorization simulator for POI recommendation")]
struct Cli {
    /// JSON config file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter, normalize and split a check-in CSV into a dataset file.
    Prepare(PrepareArgs),
    /// Build the user adjacency graph.
    Graph(GraphArgs),
    /// Train one model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint with P@k and R@k.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a hyper-parameter grid.
    Sweep(SweepArgs),
    /// Generate a synthetic check-in corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Fraction of ratings kept for training.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    min_interactions: Option<usize>,
    #[arg(long)]
    max_interactions: Option<usize>,
    #[arg(long)]
    skip_malformed: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Binary,
    Minmax,
}

impl From<ModeArg> for NormalizeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Binary => NormalizeMode::Binary,
            ModeArg::Minmax => NormalizeMode::Minmax,
        }
    }
}

#[derive(Args)]
struct GraphArgs {
    /// Check-in CSV the dataset was prepared from.
    #[arg(long)]
    checkins: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Degree cap.
    #[arg(long)]
    n: Option<usize>,
    /// Distance-to-weight mapping.
    #[arg(long, value_enum)]
    f: Option<MappingKind>,
    /// Gaussian bandwidth in km.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Regularizer of the centralized baselines.
    #[arg(long)]
    lambda: Option<f64>,
    /// Maximum walk distance.
    #[arg(long)]
    d: Option<usize>,
    /// Negatives per observed rating.
    #[arg(long)]
    m: Option<usize>,
    /// Epochs.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    freeze_q: bool,
    #[arg(long, value_enum)]
    walk_mode: Option<WalkModeArg>,
    #[arg(long, value_enum)]
    walk_scale: Option<WalkScaleArg>,
    #[arg(long)]
    neg_same_city: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum WalkModeArg {
    Layers,
    Sampled,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum WalkScaleArg {
    Layered,
    Normalized,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint written at the end (and every `--checkpoint-every` epochs).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Per-epoch statistics CSV.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Training summary JSON, including communication cost.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long = "k-values", value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    /// Report JSON.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Single-row report CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Rank only items of the user's own city.
    #[arg(long)]
    city_candidates: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    beta_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    d_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long = "k-values", value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    #[arg(long)]
    city_candidates: bool,
    /// Aggregated CSV; rows are appended.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Completed-cell manifest; defaults to `<output>.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Stop after this many newly run cells.
    #[arg(long)]
    max_cells: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    cities: Option<usize>,
    /// Users per city.
    #[arg(long)]
    users: Option<usize>,
    /// Items per city.
    #[arg(long)]
    items: Option<usize>,
    /// Preference groups per city.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Prepare(a) => cmd_prepare(a, &cfg),
        Command::Graph(a) => cmd_graph(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Sweep(a) => cmd_sweep(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_json(&read(path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_records(path: &Path, skip_malformed: bool) -> Result<dmf_core::dataio::Parsed> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_checkins(std::io::BufReader::new(file), ParseOptions { skip_malformed })
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn cmd_prepare(a: PrepareArgs, cfg: &FileConfig) -> Result<()> {
    let input = require_path(a.input, &cfg.input, "input")?;
    let output = require_path(a.output, &cfg.output, "output")?;
    let fraction = pick(a.split, cfg.split, 0.9);
    let seed = cfg.seed(a.seed)?;
    let mode = a.mode.map(NormalizeMode::from).or(cfg.mode).unwrap_or_default();

    let parsed = load_records(&input, switch(a.skip_malformed, cfg.skip_malformed))?;
    for row in &parsed.skipped {
        eprintln!("skipped line {}: {}", row.line, row.reason);
    }
    let records = filter_interactions(
        &parsed.records,
        a.min_interactions.or(cfg.min_interactions),
        a.max_interactions.or(cfg.max_interactions),
    );
    let dataset = split(&normalize(&records, mode)?, fraction, seed)?;
    write(&output, &dataset.to_json()?)?;
    println!(
        "users={} items={} cities={} train={} test={} skipped={}",
        dataset.n_users(),
        dataset.n_items(),
        dataset.cities.len(),
        dataset.train.len(),
        dataset.test.len(),
        parsed.skipped.len()
    );
    Ok(())
}

fn cmd_graph(a: GraphArgs, cfg: &FileConfig) -> Result<()> {
    let checkins = require_path(a.checkins, &cfg.checkins, "checkins")?;
    let dataset = load_dataset(&require_path(a.dataset, &cfg.dataset, "dataset")?)?;
    let output = require_path(a.output, &cfg.output, "output")?;
    let n = pick(a.n, cfg.n, 2);
    let mapping = match pick(a.f, cfg.f, MappingKind::Constant) {
        MappingKind::Constant => DistanceMapping::Constant,
        MappingKind::Gaussian => {
            let sigma_km = a.sigma.or(cfg.sigma).ok_or_else(|| CliError::usage("--f gaussian needs --sigma"))?;
            DistanceMapping::Gaussian { sigma_km }
        }
    };
    let records = load_records(&checkins, true)?.records;
    let locations = derive_locations(&records, &dataset.users)?;
    let graph = AdjacencyGraph::<f64>::build(&locations, n, mapping)?;
    write(&output, &graph.to_json()?)?;
    println!("users={} edges={}", graph.n_users(), graph.n_edges());
    Ok(())
}

fn run_spec(m: &ModelArgs, cfg: &FileConfig) -> Result<RunSpec> {
    let kind = pick(m.model, cfg.model, ModelKind::Dmf);
    let seed = cfg.seed(m.seed)?;
    let d_hp = HyperParams::<f64>::default();
    let c_hp = CentralParams::<f64>::default();
    let walk_mode = match m.walk_mode {
        Some(WalkModeArg::Layers) => Some(WalkMode::DeterministicLayers),
        Some(WalkModeArg::Sampled) => Some(WalkMode::Sampled),
        None => None,
    };
    let walk_scale = match m.walk_scale {
        Some(WalkScaleArg::Layered) => Some(WalkScale::Layered),
        Some(WalkScaleArg::Normalized) => Some(WalkScale::Normalized),
        None => None,
    };
    let neg_same_city = switch(m.neg_same_city, cfg.neg_same_city);
    let dmf = HyperParams {
        k: pick(m.k, cfg.k, d_hp.k),
        theta: pick(m.theta, cfg.theta, d_hp.theta),
        alpha: pick(m.alpha, cfg.alpha, d_hp.alpha),
        beta: pick(m.beta, cfg.beta, d_hp.beta),
        gamma: pick(m.gamma, cfg.gamma, d_hp.gamma),
        walk: WalkPolicy {
            max_distance: pick(m.d, cfg.d, d_hp.walk.max_distance),
            mode: pick(walk_mode, cfg.walk_mode, d_hp.walk.mode),
            scale: pick(walk_scale, cfg.walk_scale, d_hp.walk.scale),
        },
        negatives: pick(m.m, cfg.m, d_hp.negatives),
        epochs: pick(m.t, cfg.t, d_hp.epochs),
        seed,
        freeze_q: switch(m.freeze_q, cfg.freeze_q),
        neg_same_city,
    };
    let central = CentralParams {
        k: dmf.k,
        theta: dmf.theta,
        lambda: pick(m.lambda, cfg.lambda, c_hp.lambda),
        epochs: dmf.epochs,
        negatives: dmf.negatives,
        seed,
        neg_same_city,
    };
    Ok(RunSpec { kind, dmf: kind.configure(dmf), central })
}

fn load_graph(path: Option<PathBuf>, cfg: &FileConfig, spec: &RunSpec) -> Result<Option<AdjacencyGraph<f64>>> {
    let needed = spec.kind.is_decentralized() && spec.dmf.walk.max_distance > 0;
    match path.or_else(|| cfg.graph.clone()) {
        Some(p) if needed => {
            let graph = AdjacencyGraph::from_json(&read(&p)?).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            Ok(Some(graph))
        }
        None if needed => Err(CliError::usage(format!("--graph is required for {} with D > 0", spec.kind))),
        _ => Ok(None),
    }
}

fn cmd_train(a: TrainArgs, cfg: &FileConfig) -> Result<()> {
    let dataset = load_dataset(&require_path(a.dataset, &cfg.dataset, "dataset")?)?;
    let spec = run_spec(&a.model, cfg)?;
    let graph = load_graph(a.graph, cfg, &spec)?;
    let ckpt_path = require_path(a.checkpoint, &cfg.checkpoint, "checkpoint")?;
    let every = a.checkpoint_every.or(cfg.checkpoint_every).unwrap_or(0);
    let total = spec.epochs();

    let out = run(
        &dataset,
        graph.as_ref(),
        &spec,
        |epoch| every > 0 && epoch % every == 0 && epoch < total,
        |ckpt| write(&ckpt_path, &ckpt.to_json()?),
    )?;
    write(&ckpt_path, &out.checkpoint.to_json()?)?;
    if let Some(path) = &a.stats {
        write(path, &stats_csv(&out.stats))?;
    }
    if let Some(path) = &a.report {
        write(path, &serde_json::to_string_pretty(&out.report)?)?;
    }
    println!(
        "model={} epochs={} train_loss={} test_loss={} bytes={}",
        spec.kind,
        out.report.epochs,
        out.report.final_train_loss,
        out.report.final_test_loss,
        out.report.communication.bytes_total
    );
    Ok(())
}

fn k_values(flag: Option<Vec<usize>>, cfg: &FileConfig) -> Result<Vec<usize>> {
    let ks = flag.or_else(|| cfg.k_values.clone()).unwrap_or_else(|| vec![5, 10]);
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::usage("--k-values must be a nonempty list of positive integers"));
    }
    Ok(ks)
}

fn cmd_eval(a: EvalArgs, cfg: &FileConfig) -> Result<()> {
    let dataset = load_dataset(&require_path(a.dataset, &cfg.dataset, "dataset")?)?;
    let ckpt_path = require_path(a.checkpoint, &cfg.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::<f64>::from_json(&read(&ckpt_path)?)?;
    let output = require_path(a.output, &cfg.output, "output")?;
    let ks = k_values(a.k_values, cfg)?;
    let options = EvalOptions { city_candidates: switch(a.city_candidates, cfg.city_candidates) };

    let report = evaluate(ckpt.scorer().as_ref(), &dataset, &ks, ckpt.model_kind.as_str(), options)?;
    write(&output, &serde_json::to_string_pretty(&report)?)?;
    if let Some(path) = &a.csv {
        write(path, &format!("{}\n{}\n", report.csv_header(), report.csv_row(&checkpoint_labels(&ckpt))))?;
    }
    for (k, cell) in &report.per_k {
        println!("P@{k}={} R@{k}={}", cell.precision, cell.recall);
    }
    Ok(())
}

const SWEEP_EXTRA_COLUMNS: &str = "epochs,messages,bytes_total,bytes_positive_only";

fn cell_key(spec: &RunSpec) -> String {
    let l = spec.labels();
    format!("model={} K={} D={} beta={} gamma={}", l.model, l.k, l.d, l.beta, l.gamma)
}

fn cmd_sweep(a: SweepArgs, cfg: &FileConfig) -> Result<()> {
    let dataset = load_dataset(&require_path(a.dataset, &cfg.dataset, "dataset")?)?;
    let output = require_path(a.output, &cfg.output, "output")?;
    let manifest = a.manifest.unwrap_or_else(|| {
        let mut name = output.clone().into_os_string();
        name.push(".manifest");
        PathBuf::from(name)
    });
    let base = run_spec(&a.model, cfg)?;
    let ks = k_values(a.k_values, cfg)?;
    let options = EvalOptions { city_candidates: switch(a.city_candidates, cfg.city_candidates) };
    let base_hp = &base.dmf;
    let k_grid = a.k_grid.or_else(|| cfg.k_grid.clone()).unwrap_or_else(|| vec![base_hp.k]);
    let d_grid = a.d_grid.or_else(|| cfg.d_grid.clone()).unwrap_or_else(|| vec![base_hp.walk.max_distance]);
    let beta_grid = a.beta_grid.or_else(|| cfg.beta_grid.clone()).unwrap_or_else(|| vec![base_hp.beta]);
    let gamma_grid = a.gamma_grid.or_else(|| cfg.gamma_grid.clone()).unwrap_or_else(|| vec![base_hp.gamma]);
    if k_grid.is_empty() || d_grid.is_empty() || beta_grid.is_empty() || gamma_grid.is_empty() {
        return Err(CliError::usage("sweep grids must be nonempty"));
    }

    let graph_path = a.graph.or_else(|| cfg.graph.clone());
    let graph = match &graph_path {
        Some(p) if base.kind.is_decentralized() => Some(
            AdjacencyGraph::<f64>::from_json(&read(p)?).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
        ),
        _ => None,
    };

    let mut done: BTreeSet<String> = match fs::read_to_string(&manifest) {
        Ok(text) => text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeSet::new(),
        Err(e) => return Err(CliError::io(&manifest, e)),
    };
    let (mut ran, mut skipped) = (0usize, 0usize);
    for &k in &k_grid {
        for &d in &d_grid {
            for &beta in &beta_grid {
                for &gamma in &gamma_grid {
                    let mut spec = base.clone();
                    spec.dmf.k = k;
                    spec.central.k = k;
                    spec.dmf.walk.max_distance = d;
                    spec.dmf.beta = beta;
                    spec.dmf.gamma = gamma;
                    spec.dmf = spec.kind.configure(spec.dmf);
                    let key = cell_key(&spec);
                    if done.contains(&key) {
                        skipped += 1;
                        continue;
                    }
                    if a.max_cells.is_some_and(|max| ran >= max) {
                        println!("stopped after {ran} cells; rerun to resume");
                        println!("ran={ran} skipped={skipped}");
                        return Ok(());
                    }
                    if spec.kind.is_decentralized() && spec.dmf.walk.max_distance > 0 && graph.is_none() {
                        return Err(CliError::usage(format!("--graph is required for {} with D > 0", spec.kind)));
                    }
                    let out = run(&dataset, graph.as_ref(), &spec, |_| false, |_| Ok(()))?;
                    let report = evaluate(out.checkpoint.scorer().as_ref(), &dataset, &ks, spec.kind.as_str(), options)?;
                    append_row(&output, &report, &spec, &out.report)?;
                    append_line(&manifest, &key)?;
                    done.insert(key);
                    ran += 1;
                }
            }
        }
    }
    println!("ran={ran} skipped={skipped}");
    Ok(())
}

fn append_row(path: &Path, report: &EvalReport, spec: &RunSpec, train: &run::TrainReport) -> Result<()> {
    let empty = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| CliError::io(path, e))?;
    let mut text = String::new();
    if empty {
        text.push_str(&format!("{},{SWEEP_EXTRA_COLUMNS}\n", report.csv_header()));
    }
    let c = &train.communication;
    text.push_str(&format!(
        "{},{},{},{},{}\n",
        report.csv_row(&spec.labels()),
        train.epochs,
        c.messages,
        c.bytes_total,
        c.bytes_positive_only
    ));
    file.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| CliError::io(path, e))?;
    writeln!(file, "{line}").map_err(|e| CliError::io(path, e))
}

fn cmd_synth(a: SynthArgs, cfg: &FileConfig) -> Result<()> {
    let output = require_path(a.output, &cfg.output, "output")?;
    let defaults = SynthConfig::default();
    let synth = SynthConfig {
        cities: pick(a.cities, cfg.cities, defaults.cities),
        users_per_city: pick(a.users, cfg.users, defaults.users_per_city),
        items_per_city: pick(a.items, cfg.items, defaults.items_per_city),
        groups: pick(a.groups, cfg.groups, defaults.groups),
        p_in: pick(a.p_in, cfg.p_in, defaults.p_in),
        p_out: pick(a.p_out, cfg.p_out, defaults.p_out),
        seed: cfg.seed(a.seed)?,
        ..defaults
    };
    let corpus = generate(&synth)?;
    let mut buf = Vec::new();
    write_checkins(&corpus.records, &mut buf).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(&output, buf).map_err(|e| CliError::io(&output, e))?;
    println!("records={}", corpus.records.len());
    Ok(())
}
