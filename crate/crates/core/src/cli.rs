//! Command-line entry point: dataset generation, prior estimation, training,
//! sampling, guided fine-tuning, evaluation, and a built-in oracle check.
//!
//! Every run resolves its configuration as defaults < config file < command
//! line, then writes a manifest (resolved config, seed, checkpoint hash)
//! next to its outputs so any artifact can be reproduced exactly. The
//! `FLOWGRAPH_SEED` environment variable overrides the seed everywhere,
//! which CI uses to pin runs. Worker parallelism is set by `--threads`;
//! results are independent of it.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

use crate::coupling::CouplingMode;
use crate::error::{Error, Result};
use crate::flow::{kolmogorov_residual, Coupling, QMode};
use crate::graph::{
    gen_community_small, gen_community_small_p, gen_grid, read_dataset, write_dataset, Graph,
    GraphSpace, Permutation,
};
use crate::guide::{finetune, reward_builtin, GuideOutputs, RLConfig};
use crate::metrics::evaluate_sets;
use crate::model::{ForwardInput, HyperParams, ModelParams};
use crate::prior::{empirical_prior_with, Prior};
use crate::rng::Rng;
use crate::sampler::{sample, SampleConfig};
use crate::train::{grad_check, train_loop, TrainConfig, TrainOutputs};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "flowgraph",
    about = "Discrete flow matching engine for categorical graph generation",
    version
)]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on
    /// this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic datasets or estimate a prior from one.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model on a JSON Lines dataset.
    Train(TrainArgs),
    /// Sample graphs from a trained checkpoint.
    Sample(SampleArgs),
    /// Reward-guided fine-tuning of a trained checkpoint.
    Guide(GuideArgs),
    /// Compare a sample file against a reference file.
    Eval(EvalArgs),
    /// Run the built-in oracle suite (gradients, equivariance, Kolmogorov).
    Check(CheckArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Write a synthetic dataset as JSON Lines.
    Gen(DatasetGenArgs),
    /// Estimate the product prior of a dataset and write it as JSON.
    Prior(DatasetPriorArgs),
}

#[derive(Args, Debug)]
struct DatasetGenArgs {
    /// community-small | grid
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Within-community edge probability (community-small only).
    #[arg(long)]
    p_within: Option<f64>,
    #[arg(long, default_value_t = 10)]
    min_side: usize,
    #[arg(long, default_value_t = 20)]
    max_side: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DatasetPriorArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Node/edge category counts; inferred from the data when omitted.
    #[arg(long)]
    node_cats: Option<usize>,
    #[arg(long)]
    edge_cats: Option<usize>,
}

/// File-configurable training options; every field may also be set on the
/// command line, which wins. Unknown keys in the file are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainFileConfig {
    batch_size: Option<usize>,
    steps: Option<usize>,
    learning_rate: Option<f64>,
    edge_loss_weight: Option<f64>,
    coupling_mode: Option<CouplingMode>,
    lambda: Option<f64>,
    seed: Option<u64>,
    checkpoint_interval: Option<usize>,
    grad_clip_norm: Option<f64>,
    q_mode: Option<QMode>,
    layers: Option<usize>,
    heads: Option<usize>,
    dx: Option<usize>,
    de: Option<usize>,
    dy: Option<usize>,
    dropout: Option<f64>,
    n_max: Option<usize>,
    node_cats: Option<usize>,
    edge_cats: Option<usize>,
    cond_on_g0: Option<bool>,
    literal_attention: Option<bool>,
    valence: Option<crate::model::features::ValenceTable>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    edge_loss_weight: Option<f64>,
    #[arg(long)]
    coupling_mode: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dx: Option<usize>,
    #[arg(long)]
    de: Option<usize>,
    #[arg(long)]
    dy: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prior file; alternatively derive one from --data.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "point_mass")]
    q_mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GuideArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Built-in reward name: edge_count_target | triangle_density |
    /// valence_validity.
    #[arg(long)]
    reward: String,
    /// JSON object with the reward's parameters.
    #[arg(long, default_value = "{}")]
    reward_params: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    traj_per_iter: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Optional training set for novelty.
    #[arg(long)]
    training: Option<PathBuf>,
    /// Manifest of the sampling run, hashed into the report.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Stable 64-bit FNV-1a hash, used to fingerprint files in manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    seed: u64,
    config: C,
    checkpoint_hash: Option<String>,
    threads_note: &'a str,
}

fn write_manifest<C: Serialize>(path: &Path, manifest: &Manifest<'_, C>) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

fn env_seed_override(seed: u64) -> u64 {
    match std::env::var("FLOWGRAPH_SEED") {
        Ok(v) => v.parse().unwrap_or(seed),
        Err(_) => seed,
    }
}

fn parse_coupling_mode(s: &str) -> Result<CouplingMode> {
    match s {
        "ot" => Ok(CouplingMode::Ot),
        "independent" => Ok(CouplingMode::Independent),
        other => Err(Error::precondition(format!(
            "unknown coupling mode `{other}` (expected ot | independent)"
        ))),
    }
}

fn parse_q_mode(s: &str) -> Result<QMode> {
    match s {
        "point_mass" => Ok(QMode::PointMass),
        "prior" => Ok(QMode::Prior),
        other => Err(Error::precondition(format!(
            "unknown q mode `{other}` (expected point_mass | prior)"
        ))),
    }
}

fn infer_cats(dataset: &[Graph]) -> (usize, usize) {
    let node_cats = dataset
        .iter()
        .flat_map(|g| g.node_types().iter())
        .map(|&v| v as usize + 1)
        .max()
        .unwrap_or(1);
    let edge_cats = dataset
        .iter()
        .flat_map(|g| g.edges())
        .map(|(_, _, t)| t as usize + 1)
        .max()
        .unwrap_or(2)
        .max(2);
    (node_cats, edge_cats)
}

fn load_prior(prior: &Option<PathBuf>, data: &Option<PathBuf>, model: &ModelParams) -> Result<Prior> {
    match (prior, data) {
        (Some(p), _) => Prior::load(p),
        (None, Some(d)) => {
            let dataset = read_dataset(d)?;
            empirical_prior_with(&dataset, model.hp.node_cats, model.hp.edge_cats)
        }
        (None, None) => Err(Error::precondition(
            "need --prior or --data to define the reference distribution",
        )),
    }
}

fn run_dataset(cmd: DatasetCommand) -> Result<()> {
    match cmd {
        DatasetCommand::Gen(args) => {
            let seed = env_seed_override(args.seed);
            let graphs = match args.kind.as_str() {
                "community-small" => match args.p_within {
                    Some(p) => gen_community_small_p(args.count, seed, p)?,
                    None => gen_community_small(args.count, seed)?,
                },
                "grid" => gen_grid(args.count, args.min_side, args.max_side, seed)?,
                other => {
                    return Err(Error::precondition(format!(
                        "unknown dataset kind `{other}` (expected community-small | grid)"
                    )))
                }
            };
            write_dataset(&args.out, &graphs)?;
            let manifest_path = args.out.with_extension("manifest.json");
            write_manifest(
                &manifest_path,
                &Manifest {
                    command: "dataset gen",
                    seed,
                    config: serde_json::json!({
                        "kind": args.kind,
                        "count": args.count,
                        "p_within": args.p_within,
                        "min_side": args.min_side,
                        "max_side": args.max_side,
                        "out": args.out,
                    }),
                    checkpoint_hash: None,
                    threads_note: "outputs are independent of --threads",
                },
            )?;
            println!("wrote {} graphs to {}", graphs.len(), args.out.display());
            Ok(())
        }
        DatasetCommand::Prior(args) => {
            let dataset = read_dataset(&args.data)?;
            let (node_cats, edge_cats) = infer_cats(&dataset);
            let prior = empirical_prior_with(
                &dataset,
                args.node_cats.unwrap_or(node_cats),
                args.edge_cats.unwrap_or(edge_cats),
            )?;
            prior.save(&args.out)?;
            println!("wrote prior to {}", args.out.display());
            Ok(())
        }
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let file: TrainFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                field: format!("config {}", path.display()),
                reason: e.to_string(),
            })?
        }
        None => TrainFileConfig::default(),
    };
    let dataset = read_dataset(&args.data)?;
    let (inferred_nodes, inferred_edges) = infer_cats(&dataset);

    let defaults = TrainConfig::default();
    let mut cfg = TrainConfig {
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        steps: args.steps.or(file.steps).unwrap_or(defaults.steps),
        learning_rate: args
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        edge_loss_weight: args
            .edge_loss_weight
            .or(file.edge_loss_weight)
            .unwrap_or(defaults.edge_loss_weight),
        coupling_mode: match &args.coupling_mode {
            Some(s) => parse_coupling_mode(s)?,
            None => file.coupling_mode.unwrap_or(defaults.coupling_mode),
        },
        lambda: args.lambda.or(file.lambda).unwrap_or(defaults.lambda),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        checkpoint_interval: args
            .checkpoint_interval
            .or(file.checkpoint_interval)
            .unwrap_or(defaults.checkpoint_interval),
        grad_clip_norm: file.grad_clip_norm.unwrap_or(defaults.grad_clip_norm),
        q_mode: file.q_mode.unwrap_or(defaults.q_mode),
    };
    cfg.seed = env_seed_override(cfg.seed);

    let desk = HyperParams::desk(
        file.node_cats.unwrap_or(inferred_nodes),
        file.edge_cats.unwrap_or(inferred_edges),
    );
    let hp = HyperParams {
        layers: args.layers.or(file.layers).unwrap_or(desk.layers),
        heads: args.heads.or(file.heads).unwrap_or(desk.heads),
        dx: args.dx.or(file.dx).unwrap_or(desk.dx),
        de: args.de.or(file.de).unwrap_or(desk.de),
        dy: args.dy.or(file.dy).unwrap_or(desk.dy),
        dropout: args.dropout.or(file.dropout).unwrap_or(desk.dropout),
        n_max: args.n_max.or(file.n_max).unwrap_or(desk.n_max),
        cond_on_g0: file.cond_on_g0.unwrap_or(desk.cond_on_g0),
        literal_attention: file.literal_attention.unwrap_or(desk.literal_attention),
        valence: file.valence.clone().or(desk.valence.clone()),
        ..desk
    };
    hp.validate()?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    let outputs = TrainOutputs {
        checkpoint_dir: Some(args.out_dir.clone()),
        log_path: Some(args.out_dir.join("train_log.jsonl")),
    };
    let mut model = ModelParams::init(hp.clone(), cfg.seed)?;
    let reports = train_loop(&dataset, &mut model, &cfg, &outputs)?;
    let final_path = args.out_dir.join("model.json");
    model.save(&final_path)?;
    write_manifest(
        &args.out_dir.join("manifest.json"),
        &Manifest {
            command: "train",
            seed: cfg.seed,
            config: serde_json::json!({ "train": cfg, "hyperparams": hp, "data": args.data }),
            checkpoint_hash: Some(hash_file(&final_path)?),
            threads_note: "outputs are independent of --threads",
        },
    )?;
    if let Some(last) = reports.last() {
        println!(
            "trained {} steps; final loss {:.4} (node {:.4}, edge {:.4})",
            reports.len(),
            last.total,
            last.node_term,
            last.edge_term
        );
    }
    println!("checkpoint: {}", final_path.display());
    Ok(())
}

fn run_sample(args: SampleArgs) -> Result<()> {
    let model = ModelParams::load(&args.checkpoint)?;
    let prior = load_prior(&args.prior, &args.data, &model)?;
    let cfg = SampleConfig {
        n_steps: args.steps,
        n_samples: args.count,
        seed: env_seed_override(args.seed.unwrap_or(0)),
        q_mode: parse_q_mode(&args.q_mode)?,
        record_trajectory: false,
    };
    let (graphs, _) = sample(&model, &prior, &cfg)?;
    write_dataset(&args.out, &graphs)?;
    write_manifest(
        &args.out.with_extension("manifest.json"),
        &Manifest {
            command: "sample",
            seed: cfg.seed,
            config: serde_json::json!({ "sample": cfg, "checkpoint": args.checkpoint }),
            checkpoint_hash: Some(hash_file(&args.checkpoint)?),
            threads_note: "outputs are independent of --threads",
        },
    )?;
    println!("wrote {} samples to {}", graphs.len(), args.out.display());
    Ok(())
}

fn run_guide(args: GuideArgs) -> Result<()> {
    let model = ModelParams::load(&args.checkpoint)?;
    let prior = load_prior(&args.prior, &args.data, &model)?;
    let params: serde_json::Value =
        serde_json::from_str(&args.reward_params).map_err(|e| Error::Parse {
            field: "reward-params".into(),
            reason: e.to_string(),
        })?;
    let reward = reward_builtin(&args.reward, &params)?;
    let defaults = RLConfig::default();
    let mut cfg = RLConfig {
        alpha: args.alpha.unwrap_or(defaults.alpha),
        beta: args.beta.unwrap_or(defaults.beta),
        temperature: args.temperature.unwrap_or(defaults.temperature),
        n_train: args.iterations.unwrap_or(defaults.n_train),
        traj_per_iter: args.traj_per_iter.unwrap_or(defaults.traj_per_iter),
        n_steps: args.steps.unwrap_or(defaults.n_steps),
        seed: args.seed.unwrap_or(defaults.seed),
        learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
        ..defaults
    };
    cfg.seed = env_seed_override(cfg.seed);
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    let outputs = GuideOutputs {
        log_path: Some(args.out_dir.join("guide_log.jsonl")),
    };
    let (tuned, reports) = finetune(&model, &prior, &reward, &cfg, &outputs)?;
    let out_path = args.out_dir.join("model.json");
    tuned.save(&out_path)?;
    write_manifest(
        &args.out_dir.join("manifest.json"),
        &Manifest {
            command: "guide",
            seed: cfg.seed,
            config: serde_json::json!({
                "guide": cfg,
                "reward": reward,
                "checkpoint": args.checkpoint,
            }),
            checkpoint_hash: Some(hash_file(&args.checkpoint)?),
            threads_note: "outputs are independent of --threads",
        },
    )?;
    if let (Some(first), Some(last)) = (reports.first(), reports.last()) {
        println!(
            "fine-tuned {} iterations; mean reward {:.4} -> {:.4}",
            reports.len(),
            first.mean_reward,
            last.mean_reward
        );
    }
    println!("checkpoint: {}", out_path.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let samples = read_dataset(&args.samples)?;
    let reference = read_dataset(&args.reference)?;
    let training = match &args.training {
        Some(p) => Some(read_dataset(p)?),
        None => None,
    };
    let report = evaluate_sets(&samples, &reference, training.as_deref())?;
    let manifest_hash = match &args.manifest {
        Some(p) => Some(hash_file(p)?),
        None => None,
    };
    let full = serde_json::json!({
        "metrics": report,
        "samples_file": args.samples,
        "reference_file": args.reference,
        "samples_manifest_hash": manifest_hash,
    });
    let text = serde_json::to_string_pretty(&full)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| Error::io(path.display().to_string(), e))?
        }
        None => println!("{text}"),
    }
    println!(
        "Deg. {:.4}  Clus. {:.4}  Orbit {:.4}  Avg. {:.4}",
        report.degree_mmd, report.clustering_mmd, report.orbit_mmd, report.average_mmd
    );
    Ok(())
}

/// Built-in oracle suite: prints one line per check, errors if any fails.
fn run_check(args: CheckArgs) -> Result<()> {
    let seed = env_seed_override(args.seed);
    let mut failures = 0;
    let mut report = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failures += 1;
        }
    };

    // Gradient check on a small model.
    let model = ModelParams::init(HyperParams::tiny(2, 2), seed.wrapping_add(1))?;
    let mut rng = Rng::derive(seed, &[0xc0]);
    let g = {
        let nodes: Vec<u8> = (0..4).map(|_| rng.below(2) as u8).collect();
        let mut edges = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                if rng.bernoulli(0.5) {
                    edges.push((i, j, 1u8));
                }
            }
        }
        Graph::from_edges(nodes, &edges)?
    };
    let err = grad_check(&model, &g, 0.4, 1e-5, 200, seed)?;
    report("gradient-check", err < 1e-4, format!("max relative error {err:.3e}"));

    // Permutation equivariance of the network.
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let model = ModelParams::init(HyperParams::tiny(2, 2), seed.wrapping_add(trial))?;
        let n = 3 + rng.below(4);
        let nodes: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.bernoulli(0.5) {
                    edges.push((i, j, 1u8));
                }
            }
        }
        let g = Graph::from_edges(nodes, &edges)?;
        let p = Permutation::random(n, &mut rng);
        let gp = g.permute(&p)?;
        let out = model.forward(&ForwardInput::plain(&g, 0.5))?;
        let outp = model.forward(&ForwardInput::plain(&gp, 0.5))?;
        for i in 0..n {
            for (a, b) in out
                .node_logit_row(i)
                .iter()
                .zip(outp.node_logit_row(p.map(i)))
            {
                worst = worst.max((a - b).abs());
            }
            for j in 0..n {
                for (a, b) in out
                    .edge_logit_row(i, j)
                    .iter()
                    .zip(outp.edge_logit_row(p.map(i), p.map(j)))
                {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    report("equivariance", worst < 1e-6, format!("max deviation {worst:.3e}"));

    // Kolmogorov consistency of the velocity construction.
    let space = GraphSpace::new(2, 2, 2)?;
    let coupling: Coupling = vec![
        (space.graph_at(0), space.graph_at(7), 0.25),
        (space.graph_at(3), space.graph_at(5), 0.25),
        (space.graph_at(1), space.graph_at(6), 0.25),
        (space.graph_at(4), space.graph_at(2), 0.25),
    ];
    let mut worst_res: f64 = 0.0;
    for i in 1..=11 {
        let t = i as f64 / 12.0;
        worst_res = worst_res.max(kolmogorov_residual(
            &space,
            &coupling,
            t,
            QMode::PointMass,
            None,
        )?);
    }
    report(
        "kolmogorov-consistency",
        worst_res < 1e-6,
        format!("max residual {worst_res:.3e}"),
    );

    if failures > 0 {
        Err(Error::Numerical(format!("{failures} oracle check(s) failed")))
    } else {
        Ok(())
    }
}

/// Parse and execute a command line; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        // Ignore failure if a pool already exists (tests call run() twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Dataset(cmd) => run_dataset(cmd),
        Command::Train(args) => run_train(args),
        Command::Sample(args) => run_sample(args),
        Command::Guide(args) => run_guide(args),
        Command::Eval(args) => run_eval(args),
        Command::Check(args) => run_check(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Precondition(_) | Error::Parse { .. } | Error::Shape(_) => 1,
                _ => 2,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("flowgraph-cli-{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn dataset_gen_and_prior() {
        let dir = tmp_dir("dataset");
        let out = dir.join("community.jsonl");
        let code = run([
            "flowgraph",
            "dataset",
            "gen",
            "--kind",
            "community-small",
            "--count",
            "20",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let graphs = read_dataset(&out).unwrap();
        assert_eq!(graphs.len(), 20);
        for g in &graphs {
            assert!(g.n_nodes() >= 12 && g.n_nodes() <= 20);
        }
        assert!(out.with_extension("manifest.json").exists());

        let prior_out = dir.join("prior.json");
        let code = run([
            "flowgraph",
            "dataset",
            "prior",
            "--data",
            out.to_str().unwrap(),
            "--out",
            prior_out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let prior = Prior::load(&prior_out).unwrap();
        assert_eq!(prior.edge_cats(), 2);
    }

    #[test]
    fn unknown_kind_is_validation_error() {
        let dir = tmp_dir("badkind");
        let code = run([
            "flowgraph",
            "dataset",
            "gen",
            "--kind",
            "nope",
            "--out",
            dir.join("x.jsonl").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tmp_dir("badcfg");
        let data = dir.join("data.jsonl");
        run([
            "flowgraph",
            "dataset",
            "gen",
            "--kind",
            "community-small",
            "--count",
            "4",
            "--out",
            data.to_str().unwrap(),
        ]);
        let cfg = dir.join("cfg.json");
        std::fs::write(&cfg, r#"{"steps": 1, "no_such_key": 3}"#).unwrap();
        let code = run([
            "flowgraph",
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out-dir",
            dir.join("run").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn eval_identical_files_reports_zero() {
        let dir = tmp_dir("eval");
        let data = dir.join("data.jsonl");
        run([
            "flowgraph",
            "dataset",
            "gen",
            "--kind",
            "community-small",
            "--count",
            "8",
            "--seed",
            "9",
            "--out",
            data.to_str().unwrap(),
        ]);
        let report_path = dir.join("report.json");
        let code = run([
            "flowgraph",
            "eval",
            "--samples",
            data.to_str().unwrap(),
            "--reference",
            data.to_str().unwrap(),
            "--out",
            report_path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let text = std::fs::read_to_string(&report_path).unwrap();
        let report: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(report["metrics"]["average_mmd"], 0.0);
    }

    #[test]
    fn end_to_end_tiny_pipeline() {
        let dir = tmp_dir("pipeline");
        let data = dir.join("data.jsonl");
        assert_eq!(
            run([
                "flowgraph",
                "dataset",
                "gen",
                "--kind",
                "community-small",
                "--count",
                "6",
                "--seed",
                "3",
                "--out",
                data.to_str().unwrap(),
            ]),
            0
        );
        let run_dir = dir.join("run");
        assert_eq!(
            run([
                "flowgraph",
                "train",
                "--data",
                data.to_str().unwrap(),
                "--out-dir",
                run_dir.to_str().unwrap(),
                "--steps",
                "3",
                "--batch-size",
                "2",
                "--layers",
                "1",
                "--heads",
                "2",
                "--dx",
                "8",
                "--de",
                "4",
                "--dy",
                "6",
                "--n-max",
                "24",
            ]),
            0
        );
        let ckpt = run_dir.join("model.json");
        assert!(ckpt.exists());
        assert!(run_dir.join("train_log.jsonl").exists());
        assert!(run_dir.join("manifest.json").exists());

        let samples = dir.join("samples.jsonl");
        assert_eq!(
            run([
                "flowgraph",
                "sample",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--count",
                "4",
                "--steps",
                "5",
                "--out",
                samples.to_str().unwrap(),
            ]),
            0
        );
        assert_eq!(read_dataset(&samples).unwrap().len(), 4);

        let guided = dir.join("guided");
        assert_eq!(
            run([
                "flowgraph",
                "guide",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--out-dir",
                guided.to_str().unwrap(),
                "--reward",
                "edge_count_target",
                "--reward-params",
                r#"{"target": 20.0, "sigma": 6.0}"#,
                "--iterations",
                "2",
                "--traj-per-iter",
                "2",
                "--steps",
                "4",
            ]),
            0
        );
        assert!(guided.join("model.json").exists());
        assert!(guided.join("guide_log.jsonl").exists());
    }
}
