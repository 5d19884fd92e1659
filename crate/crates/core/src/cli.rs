//! Command-line front end. `main.rs` only forwards to [`run`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::actdata::{
    load_calibration_pair, read_actb, read_json, write_calibration_pair, write_json, Dtype,
    DumpMetadata, DumpSource,
};
use crate::analysis::{boundary_report, calibration_sweep, evaluate_method, Split, SweepConfig};
use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::pipeline::{model_id, prepare_workdir, run_pipeline, MethodEval};
use crate::pruning::{
    block_influence_scores, select_by_removal_loss_with, select_contiguous_block_with, CosineMode,
    Criterion, RemovalMetric,
};
use crate::recovery::{
    decompose_symmetry, fit_ghost, fit_method, load_operator, save_operator, Method, OperatorInfo,
    Solver,
};
use crate::simulator::{BoundarySpec, ModelConfig, ToyModel};

#[derive(Debug, Parser)]
#[command(
    name = "ghostalign",
    version,
    about = "Closed-form recovery operators for pruned residual networks"
)]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "GHOSTALIGN_WORKDIR")]
    pub workdir: Option<PathBuf>,
    /// Worker threads; 1 gives a strictly sequential run.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the toy model and dump boundary activations for one block.
    Simulate(SimulateArgs),
    /// Score layers with a pruning criterion.
    Select(SelectArgs),
    /// Fit a boundary operator from a dump directory.
    Fit(FitArgs),
    /// Evaluate an operator on held-out data.
    Eval(EvalArgs),
    /// Calibration-size sweep of the ghost operator.
    Sweep(SweepArgs),
    /// Symmetric / anti-symmetric split of a fitted operator.
    Decompose(DecomposeArgs),
    /// Full pipeline into the work directory.
    Run,
    /// Collect eval_*.json files into plotting CSVs.
    Report,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// First pruned layer.
    #[arg(long)]
    pub start: usize,
    /// Number of pruned layers (defaults to pruning.n).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value = "f64")]
    pub dtype: DtypeArg,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long, value_parser = parse_from_str::<Criterion>)]
    pub criterion: Criterion,
    #[arg(long)]
    pub n: usize,
    /// Model description (model.json); defaults to the config's model.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Calibration inputs as an ACTB matrix; sampled from the config if absent.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Flatten states before the cosine instead of averaging per token.
    #[arg(long)]
    pub flattened: bool,
    /// Use toy-vocabulary KL instead of hidden-state MSE for removal_loss.
    #[arg(long)]
    pub logit_kl: bool,
    /// Write the JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory with pre.actb, post.actb and meta.json.
    pub dump: PathBuf,
    #[arg(long, value_parser = parse_from_str::<Method>, default_value = "ghost")]
    pub method: Method,
    #[arg(long, value_parser = parse_from_str::<Solver>)]
    pub solver: Option<Solver>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Operator file to write (ACTB plus a .json sidecar).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub operator: PathBuf,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Pruned block as `start:count`.
    #[arg(long, value_parser = parse_spec)]
    pub spec: Option<(usize, usize)>,
    #[arg(long)]
    pub heldout_seed: Option<u64>,
    #[arg(long)]
    pub heldout_tokens: Option<usize>,
    /// Evaluate on a dump directory (boundary metrics only) instead of a model.
    #[arg(long, conflicts_with_all = ["model_config", "spec"])]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, value_parser = parse_spec)]
    pub spec: (usize, usize),
    /// Calibration sequence counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128])]
    pub sizes: Vec<usize>,
    /// Seeds as `a..b` (exclusive), `a..=b`, or a comma list.
    #[arg(long, value_parser = parse_seeds, default_value = "0..5")]
    pub seeds: SeedList,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long, value_parser = parse_from_str::<Solver>)]
    pub solver: Option<Solver>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// CSV destination; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Operator file written by `fit`.
    #[arg(long, conflicts_with = "dump")]
    pub operator: Option<PathBuf>,
    /// Dump directory to fit a ghost operator from.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct SeedList(pub Vec<u64>);

fn parse_from_str<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

fn parse_spec(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected start:count")?;
    let start = a.trim().parse().map_err(|_| format!("bad start `{a}`"))?;
    let count = b.trim().parse().map_err(|_| format!("bad count `{b}`"))?;
    Ok((start, count))
}

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|_| format!("bad seed `{t}`"))
    };
    let seeds = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if Vec::is_empty(&seeds) {
        return Err("empty seed list".into());
    }
    Ok(SeedList(seeds))
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Context {
    config: RunConfig,
    workdir: PathBuf,
    force: bool,
}

impl Context {
    fn model(&self, model_config: Option<&Path>) -> Result<ToyModel> {
        let cfg = match model_config {
            Some(p) => read_json::<ModelConfig>(p)?,
            None => self.config.model.clone(),
        };
        ToyModel::from_config(&cfg)
    }

    fn output(&self, path: &Path) -> Result<()> {
        if path.exists() && !self.force {
            return Err(Error::Exists(path.to_path_buf()));
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(())
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let config = match &cli.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    let workdir = cli
        .workdir
        .clone()
        .or_else(|| config.paths.workdir.clone())
        .unwrap_or_else(|| PathBuf::from("ghostalign-run"));
    let ctx = Context {
        config,
        workdir,
        force: cli.force,
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Select(a) => select_cmd(&ctx, a),
        Command::Fit(a) => fit_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Sweep(a) => sweep_cmd(&ctx, a),
        Command::Decompose(a) => decompose_cmd(a),
        Command::Run => {
            let summary = run_pipeline(&ctx.config, &ctx.workdir, ctx.force)?;
            print!("{}", summary.to_table());
            Ok(())
        }
        Command::Report => report_cmd(&ctx),
    }
}

fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<()> {
    let cfg = &ctx.config;
    let model = ToyModel::from_config(&cfg.model)?;
    let spec = model.boundary(a.start, a.count.unwrap_or(cfg.pruning.n))?;
    prepare_workdir(&ctx.workdir, ctx.force)?;
    write_json(ctx.workdir.join("model.json"), model.config())?;
    let inputs = model.sample_inputs(cfg.calibration.token_count(), cfg.calibration.seed);
    let pair = model.forward_capture(&inputs, &spec)?;
    let meta = DumpMetadata {
        model_id: model_id(&model),
        pre_layer: spec.start() as i64,
        post_layer: spec.post() as i64,
        seq_len: cfg.calibration.seq_len as u64,
        num_sequences: cfg.calibration.num_sequences as u64,
        token_count: cfg.calibration.token_count() as u64,
        seed: cfg.calibration.seed,
        source: DumpSource::Simulator,
    };
    let dtype = match a.dtype {
        DtypeArg::F32 => Dtype::F32,
        DtypeArg::F64 => Dtype::F64,
    };
    write_calibration_pair(&ctx.workdir, pair.pre(), pair.post(), &meta, dtype)?;
    print_json(&meta)
}

fn select_cmd(ctx: &Context, a: &SelectArgs) -> Result<()> {
    let model = ctx.model(a.model_config.as_deref())?;
    let calib = match &a.calib {
        Some(p) => read_actb(p)?,
        None => model.sample_inputs(
            ctx.config.calibration.token_count(),
            ctx.config.calibration.seed,
        ),
    };
    let mode = if a.flattened {
        CosineMode::Flattened
    } else {
        CosineMode::PerToken
    };
    let scores = match a.criterion {
        Criterion::StreamlineCosine => select_contiguous_block_with(&model, &calib, a.n, mode)?,
        Criterion::BlockInfluence => block_influence_scores(&model, &calib, a.n)?,
        Criterion::RemovalLoss => {
            let metric = if a.logit_kl {
                RemovalMetric::LogitKl
            } else {
                RemovalMetric::HiddenMse
            };
            select_by_removal_loss_with(&model, &calib, a.n, metric)?
        }
    };
    if let Some(out) = &a.out {
        ctx.output(out)?;
        write_json(out, &scores)?;
    }
    print_json(&scores)
}

fn fit_cmd(ctx: &Context, a: &FitArgs) -> Result<()> {
    let (pre, post, _meta) = load_calibration_pair(&a.dump)?;
    let pair = crate::simulator::ActivationPair::new(pre, post)?;
    let mut fit = ctx.config.fit.clone();
    if let Some(s) = a.solver {
        fit.solver = s;
    }
    let eps = a.eps.unwrap_or_else(|| fit.solver_eps());
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("--eps", format!("{eps} must be positive")));
    }
    let op = fit_method(a.method, &pair, fit.solver, eps)?;
    let info = OperatorInfo::describe(a.method, &op, &pair)?;
    ctx.output(&a.out)?;
    save_operator(&a.out, &op, &info)?;
    print_json(&info)
}

fn eval_cmd(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let (op, info) = load_operator(&a.operator)?;
    let report = if let Some(dump) = &a.dump {
        let (pre, post, _) = load_calibration_pair(dump)?;
        let pair = crate::simulator::ActivationPair::new(pre, post)?;
        boundary_report(info.method.as_str(), Some(&op), &pair, Split::Heldout)?
    } else {
        let model = ctx.model(a.model_config.as_deref())?;
        let (start, count) = a
            .spec
            .ok_or_else(|| Error::config("--spec", "required unless --dump is given"))?;
        let spec = BoundarySpec::new(start, count, model.num_layers())?;
        let tokens = a.heldout_tokens.unwrap_or(ctx.config.eval.heldout_tokens);
        let seed = a.heldout_seed.unwrap_or(ctx.config.eval.heldout_seed);
        let inputs = model.sample_inputs(tokens, seed);
        evaluate_method(
            &model,
            &spec,
            info.method.as_str(),
            Some(&op),
            &inputs,
            Split::Heldout,
        )?
    };
    if let Some(out) = &a.out {
        ctx.output(out)?;
        write_json(out, &report)?;
    }
    print_json(&report)
}

fn sweep_cmd(ctx: &Context, a: &SweepArgs) -> Result<()> {
    let model = ctx.model(a.model_config.as_deref())?;
    let spec = BoundarySpec::new(a.spec.0, a.spec.1, model.num_layers())?;
    let mut fit = ctx.config.fit.clone();
    if let Some(s) = a.solver {
        fit.solver = s;
    }
    let cfg = SweepConfig {
        sizes: a.sizes.clone(),
        seq_len: a.seq_len.unwrap_or(ctx.config.calibration.seq_len),
        seeds: a.seeds.0.clone(),
        heldout_tokens: ctx.config.eval.heldout_tokens,
        heldout_seed: ctx.config.eval.heldout_seed,
        eps: a.eps.unwrap_or_else(|| fit.solver_eps()),
        solver: fit.solver,
    };
    let report = calibration_sweep(&model, &spec, &cfg)?;
    match &a.out {
        Some(out) => {
            ctx.output(out)?;
            fs::write(out, report.to_csv()).map_err(|e| Error::io(out, e))?;
            print_json(&report.summary)
        }
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn decompose_cmd(a: &DecomposeArgs) -> Result<()> {
    let m = match (&a.operator, &a.dump) {
        (Some(path), _) => load_operator(path)?.0.additive_part(),
        (None, Some(dump)) => {
            let (pre, post, _) = load_calibration_pair(dump)?;
            let pair = crate::simulator::ActivationPair::new(pre, post)?;
            fit_ghost(&pair, crate::recovery::DEFAULT_EPS, Solver::RidgeNormal)?.m_star
        }
        (None, None) => return Err(Error::config("--operator", "need --operator or --dump")),
    };
    print_json(&decompose_symmetry(&m)?.summary())
}

fn report_cmd(ctx: &Context) -> Result<()> {
    let dir = &ctx.workdir;
    let mut evals: Vec<(Method, MethodEval)> = Vec::new();
    for method in Method::ALL {
        let path = dir.join(format!("eval_{method}.json"));
        if path.exists() {
            evals.push((method, read_json(&path)?));
        }
    }
    if evals.is_empty() {
        return Err(Error::Consistency(format!(
            "no eval_*.json files in {}",
            dir.display()
        )));
    }
    let channels = evals[0].1.heldout.per_channel_mae.len();
    let mut csv = String::from("channel");
    for (m, _) in &evals {
        csv.push_str(&format!(",{m}"));
    }
    csv.push('\n');
    for j in 0..channels {
        csv.push_str(&j.to_string());
        for (_, e) in &evals {
            let v = e
                .heldout
                .per_channel_mae
                .get(j)
                .copied()
                .unwrap_or(f64::NAN);
            csv.push_str(&format!(",{v:e}"));
        }
        csv.push('\n');
    }
    let path = dir.join("per_channel_mae.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let mut table = String::from("method,split,boundary_mae,alignment_residual,end_to_end_mse\n");
    for (m, e) in &evals {
        for r in [&e.calibration, &e.heldout] {
            let split = match r.split {
                Split::Calibration => "calibration",
                Split::Heldout => "heldout",
            };
            table.push_str(&format!(
                "{m},{split},{:e},{:e},{:e}\n",
                r.boundary_mae,
                r.alignment_residual,
                r.end_to_end_mse.unwrap_or(f64::NAN)
            ));
        }
    }
    let path = dir.join("metrics.csv");
    fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    print!("{table}");
    Ok(())
}
