//! The `desp` command line.

use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Model};
use crate::datasets::{generate, read_jsonl, write_jsonl, Example, GenSpec, Task, TaskDims};
use crate::error::{DespError, Result};
use crate::eval::{
    ablate_st, evaluate, predict_all, render_svg, viewport, write_ablation_csv, write_metrics_csv,
    PredictOptions,
};
use crate::training::{
    train, train_baseline, train_elementwise, write_atomic, write_log_csv, BaselinePredictor, ElementwiseBaseline,
    LogRow, SetLossKind, TrainConfig, TrainState,
};

#[derive(Parser, Debug)]
#[command(name = "desp", version, about = "Energy-based set prediction on synthetic set tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a JSON-lines dataset
    Gen(GenArgs),
    /// Train an energy model
    Train(TrainArgs),
    /// Train a direct set-loss or per-element baseline
    TrainBaseline(BaselineArgs),
    /// Write predicted sets as JSON lines
    Predict(PredictArgs),
    /// Score a checkpoint on a dataset
    Eval(EvalArgs),
    /// Sweep the ratio of noisy to total prediction steps
    AblateSt(AblateArgs),
    /// Draw sets as SVG scatter panels
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    dataset: Task,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Polygon sizes as `lo..hi` (inclusive)
    #[arg(long, default_value = "3..6", value_parser = parse_sizes)]
    sizes: RangeInclusive<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON training config; defaults apply to missing fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Metrics log (default: `<out>.log.csv`)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long, value_parser = ["chamfer", "hungarian", "elementwise"])]
    loss: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noisy steps `S` (default: the checkpoint's sampler setting)
    #[arg(long)]
    stochastic_steps: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Expected task; must match the checkpoint
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    out: PathBuf,
    /// Predictions per example (default 10 for anomaly, else 1)
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
    ratios: Vec<f64>,
    /// Number of prediction seeds averaged per ratio
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Dataset or predictions file (JSON lines with a "set" field)
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Viewport; inferred from dataset records when omitted
    #[arg(long)]
    task: Option<Task>,
    #[arg(long, default_value_t = 16)]
    limit: usize,
}

fn parse_sizes(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad size range {s:?}"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad size range {s:?}"))?;
    if lo < 3 || lo > hi {
        return Err(format!("size range {s:?} must satisfy 3 <= lo <= hi"));
    }
    Ok(lo..=hi)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_json(&std::fs::read_to_string(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn default_log(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

fn load_data(path: &Path) -> Result<Vec<Example>> {
    let data = read_jsonl(path)?;
    if data.is_empty() {
        return Err(DespError::Contract(format!("{} holds no examples", path.display())));
    }
    Ok(data)
}

fn progress(row: &LogRow) {
    let mut line = format!("epoch {} loss {:.6}", row.epoch, row.loss);
    if let (Some(p), Some(n)) = (row.mean_e_pos, row.mean_e_neg) {
        line.push_str(&format!(" E+ {p:.4} E- {n:.4}"));
    }
    let _ = writeln!(std::io::stderr(), "{line}");
}

type EpochHook<'a, M> = dyn FnMut(&M, &TrainState, &LogRow) -> Result<()> + 'a;

struct Outputs<'a> {
    ckpt: &'a Path,
    log: PathBuf,
    append_log: bool,
}

/// Runs `fit` and writes the log and checkpoint. Periodic checkpoints and
/// the one written after a failure hold the state at the end of the last
/// completed epoch, so a resumed run continues bit-exactly.
fn run_training<M: Clone>(
    mut model: M,
    mut state: TrainState,
    cfg: &TrainConfig,
    out: Outputs,
    wrap: impl Fn(M) -> Model,
    fit: impl FnOnce(&mut M, &mut TrainState, &mut EpochHook<M>) -> Result<Vec<LogRow>>,
) -> Result<()> {
    let mut last = (model.clone(), state.clone());
    let mut rows: Vec<LogRow> = Vec::new();
    let result = fit(&mut model, &mut state, &mut |m, st, row| {
        progress(row);
        rows.push(row.clone());
        last = (m.clone(), st.clone());
        if cfg.checkpoint_every > 0 && st.epoch % cfg.checkpoint_every == 0 {
            Checkpoint::new(&wrap(m.clone()), cfg, st).save(out.ckpt)?;
        }
        Ok(())
    });
    write_log(&out.log, &rows, out.append_log)?;
    let (model, state) = match result {
        Ok(_) => (model, state),
        Err(_) => last,
    };
    Checkpoint::new(&wrap(model), cfg, &state).save(out.ckpt)?;
    result.map(|_| ())
}

/// Writes the log, or appends to it when resuming an earlier run.
fn write_log(path: &Path, rows: &[LogRow], append: bool) -> Result<()> {
    let previous = if append { std::fs::read_to_string(path).ok() } else { None };
    write_log_csv(path, rows)?;
    if let Some(prev) = previous {
        let fresh = std::fs::read_to_string(path)?;
        let body: String = fresh.lines().skip(1).flat_map(|l| [l, "\n"]).collect();
        write_atomic(path, format!("{prev}{body}").as_bytes())?;
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let data = generate(&GenSpec {
        task: a.dataset,
        count: a.count,
        seed: a.seed,
        sizes: a.sizes,
    })?;
    write_jsonl(&a.out, &data)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let (cfg, task, model, state) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let Model::Energy { model, task } = ck.model()? else {
                return Err(DespError::Config("resume needs an energy checkpoint".into()));
            };
            let mut cfg = ck.config.clone();
            if let Some(p) = &a.config {
                let new = load_config(Some(p))?;
                if (TrainConfig { epochs: cfg.epochs, ..new.clone() }) != cfg {
                    return Err(DespError::Config("a resumed run may only change epochs".into()));
                }
                cfg.epochs = new.epochs;
            }
            (cfg, task, model, ck.train_state.clone())
        }
        None => {
            let cfg = load_config(a.config.as_deref())?;
            let task = TaskDims::infer(&data)?;
            let model = cfg.model.build(&task)?;
            (cfg, task, model, TrainState::default())
        }
    };
    if TaskDims::infer(&data)? != task {
        return Err(DespError::Config("dataset does not match the checkpoint's task".into()));
    }
    let out = Outputs {
        ckpt: &a.out,
        log: a.log.clone().unwrap_or_else(|| default_log(&a.out)),
        append_log: a.resume.is_some(),
    };
    run_training(
        model,
        state,
        &cfg,
        out,
        |model| Model::Energy { model, task },
        |m, st, hook| train(m, &data, &task, &cfg, st, hook),
    )
}

fn cmd_train_baseline(a: BaselineArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let cfg = load_config(a.config.as_deref())?;
    let task = TaskDims::infer(&data)?;
    let out = Outputs {
        ckpt: &a.out,
        log: a.log.clone().unwrap_or_else(|| default_log(&a.out)),
        append_log: false,
    };
    let (width, seed) = (cfg.model.width, cfg.model.init_seed);
    if a.loss == "elementwise" {
        if task.task != Task::Anomaly {
            return Err(DespError::Config("the elementwise baseline needs anomaly data".into()));
        }
        run_training(
            ElementwiseBaseline::new(task, width, seed),
            TrainState::default(),
            &cfg,
            out,
            Model::Elementwise,
            |m, st, hook| train_elementwise(m, &data, &cfg, st, hook),
        )
    } else {
        let loss: SetLossKind = a.loss.parse()?;
        run_training(
            BaselinePredictor::new(task, width, seed),
            TrainState::default(),
            &cfg,
            out,
            |model| Model::Baseline { model, loss },
            |m, st, hook| train_baseline(m, &data, loss, &cfg, st, hook),
        )
    }
}

fn load_model(path: &Path) -> Result<(Checkpoint, Model)> {
    let ck = Checkpoint::load(path)?;
    let model = ck.model()?;
    Ok((ck, model))
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    example: usize,
    sample: usize,
    set: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<f64>,
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let (ck, model) = load_model(&a.ckpt)?;
    let data = load_data(&a.data)?;
    let mut sampler = ck.config.sampler.clone();
    if let Some(s) = a.stochastic_steps {
        sampler.stochastic_steps = s;
    }
    let opts = PredictOptions {
        sampler,
        samples: a.samples,
        seed: a.seed,
    };
    let preds = predict_all(&model, &data, &opts)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    for (i, ps) in preds.into_iter().enumerate() {
        for (k, p) in ps.into_iter().enumerate() {
            let rec = PredictionRecord {
                example: i,
                sample: k,
                set: p.set,
                energy: p.energy,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (ck, model) = load_model(&a.ckpt)?;
    let task = model.task().task;
    if let Some(t) = a.task {
        if t != task {
            return Err(DespError::Config(format!("checkpoint is for {task}, not {t}")));
        }
    }
    let data = load_data(&a.data)?;
    let mut opts = PredictOptions::for_task(task, ck.config.sampler.clone(), a.seed);
    if let Some(k) = a.samples {
        opts.samples = k;
    }
    let (rows, _) = evaluate(&model, &data, &opts)?;
    write_metrics_csv(&a.out, &rows)
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let (ck, model) = load_model(&a.ckpt)?;
    let data = load_data(&a.data)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let rows = ablate_st(&model, &data, &ck.config.sampler, &a.ratios, &seeds)?;
    write_ablation_csv(&a.out, &rows)
}

#[derive(Deserialize)]
struct AnySet {
    set: Vec<Vec<f64>>,
    #[serde(default)]
    meta: Option<crate::datasets::Meta>,
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.data)?;
    let mut sets = Vec::new();
    let mut inferred = None;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).take(a.limit).enumerate() {
        let rec: AnySet = serde_json::from_str(line)
            .map_err(|e| DespError::Parse(format!("line {}: {e}", i + 1)))?;
        inferred = inferred.or(rec.meta.and_then(|m| m.task));
        sets.push(rec.set);
    }
    let task = a
        .task
        .or(inferred)
        .ok_or_else(|| DespError::Config("pass --task to pick a viewport".into()))?;
    let svg = render_svg(&sets, viewport(task)?)?;
    std::fs::write(&a.out, svg)?;
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::TrainBaseline(a) => cmd_train_baseline(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::AblateSt(a) => cmd_ablate(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            2
        }
    }
}
