use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use lencap::bench::{run_bench, BenchOptions};
use lencap::config::RunConfig;
use lencap::data::{generate_corpus, Corpus};
use lencap::decoding::{decode_ar, decode_nar, ArScorer, DecodeConfig, NarScorer, StepTrace};
use lencap::metrics::evaluate;
use lencap::model::{Checkpoint, ModelError, ModelKind};
use lencap::training::{self, Objective, TrainError};
use lencap::LengthLevelPlan;

const FORMATS: &str = "\
File formats:
  corpus       JSON lines; header line {\"format\":\"lencap-corpus\",\"version\":1,...}, one scene per line
  vocabulary   sidecar <corpus>.vocab; first line \"lencap-vocab 1\", one token per line in index order
  checkpoint   first line \"lencap-checkpoint 1\", JSON header line, little-endian f32 tensor data
  run config   TOML with optional top-level `plan` and [model] / [train] sections; unknown keys are errors
  loss log     \"# lencap-loss-log 1\" header, then \"iteration loss lr\" per line
  captions     JSON lines, one decode per line
  trace        JSON lines, one refinement step per line (positions 1-based)
  eval report  JSON, format \"lencap-eval 1\"
  bench report JSON, format \"lencap-bench 1\"

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric error.";

/// Length-controllable caption generation on a synthetic scene corpus.
#[derive(Parser)]
#[command(name = "lencap", version, after_help = FORMATS)]
struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its vocabulary file.
    #[command(after_help = FORMATS)]
    GenData(GenData),
    /// Train a non-autoregressive (masked) or autoregressive model.
    #[command(after_help = FORMATS)]
    Train(Train),
    /// Decode captions for every scene of a corpus.
    #[command(after_help = FORMATS)]
    Decode(Decode),
    /// Evaluate checkpoints: control precision, BLEU, Div-n, length histogram, ablations.
    #[command(after_help = FORMATS)]
    Eval(Eval),
    /// Benchmark forward passes and latency over refine budgets.
    #[command(after_help = FORMATS)]
    Bench(Bench),
}

#[derive(Args)]
struct GenData {
    /// Master seed; scene i is generated from a seed derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes.
    #[arg(long, default_value_t = 1000)]
    scenes: usize,
    /// Level plan: 4-level, 5-level, single, or ranges like 1-9,10-14,15-19,20-25.
    #[arg(long, default_value = "4-level")]
    plan: String,
    /// Corpus output path; the vocabulary goes next to it with extension .vocab.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Masked,
    Ar,
}

#[derive(Args)]
struct Train {
    /// Run config (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Objective; overrides the config's train.objective.
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Level plan of the model; overrides the config. Defaults to the corpus plan.
    #[arg(long)]
    plan: Option<String>,
    /// Seed; overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Iterations; overrides train.iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Output directory: model.ckpt, loss.log and periodic checkpoint-<iteration>.ckpt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Decode {
    /// Checkpoint to decode with.
    #[arg(long)]
    ckpt: PathBuf,
    /// Corpus whose scenes are captioned.
    #[arg(long)]
    corpus: PathBuf,
    /// One-based level; all levels of the model's plan when omitted.
    #[arg(long)]
    level: Option<usize>,
    /// Refine steps T (default per level: 10/15/20/25 for the 4-level plan, L_high otherwise).
    #[arg(long)]
    steps: Option<usize>,
    /// [EOS] decay factor (default per level: 1/0.88/0.95/1 for the 4-level plan, 1 otherwise).
    #[arg(long)]
    gamma: Option<f32>,
    /// Update only masked positions' confidences.
    #[arg(long)]
    no_global_update: bool,
    /// Decode only the first N scenes.
    #[arg(long)]
    scenes: Option<usize>,
    /// Captions output (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Per-step refinement trace output (JSON lines).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    /// Checkpoint, optionally named as NAME=PATH. Repeatable.
    #[arg(long = "ckpt", required = true)]
    ckpts: Vec<String>,
    /// Held-out corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Plan used to bucket decoded lengths (default: the corpus plan).
    #[arg(long)]
    plan: Option<String>,
    /// One-based level for the global-update / EOS-decay ablation (0 disables).
    #[arg(long, default_value_t = 2)]
    ablation_level: usize,
    /// Report output (JSON).
    #[arg(long)]
    report_out: PathBuf,
}

#[derive(Args)]
struct Bench {
    /// Checkpoint, optionally named as NAME=PATH. Repeatable.
    #[arg(long = "ckpt", required = true)]
    ckpts: Vec<String>,
    /// Corpus supplying the workload scenes.
    #[arg(long)]
    corpus: PathBuf,
    /// Refine budgets for non-autoregressive checkpoints.
    #[arg(long, value_delimiter = ',', default_value = "10,12,15,20,25")]
    steps_list: Vec<usize>,
    /// Timed repetitions of the workload.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Untimed warmup repetitions.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// One-based level to decode (default: the last level).
    #[arg(long)]
    level: Option<usize>,
    /// Workload size: the first N scenes.
    #[arg(long, default_value_t = 50)]
    scenes: usize,
    /// Also measure parallel throughput across the thread pool.
    #[arg(long)]
    parallel: bool,
    /// Report output (JSON).
    #[arg(long)]
    report_out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

fn parse_plan(s: &str, flag: &str) -> Result<LengthLevelPlan, Failure> {
    s.parse().map_err(|e| usage(format!("{flag}: {e}")))
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    Corpus::load(path).map_err(|e| usage(e.to_string()))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| match e {
        ModelError::Io(..) | ModelError::Checkpoint(_) => usage(e.to_string()),
        other => runtime(format!("{}: {other}", path.display())),
    })
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// `NAME=PATH`, or a bare path named after its file stem (after its
/// directory for `model.ckpt`).
fn named(spec: &str) -> (String, PathBuf) {
    if let Some((name, path)) = spec.split_once('=').filter(|(n, _)| !n.is_empty()) {
        return (name.to_string(), PathBuf::from(path));
    }
    let p = PathBuf::from(spec);
    let source = if p.file_name().is_some_and(|f| f == "model.ckpt") { p.parent().and_then(Path::file_name) } else { p.file_stem() };
    let name = source.map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
    (name, p)
}

fn check_vocab(ckpt: &Checkpoint, corpus: &Corpus, path: &Path) -> Outcome {
    if ckpt.vocab_hash != corpus.vocab.hash() {
        return Err(usage(format!(
            "{}: vocabulary hash {} does not match the corpus vocabulary {}",
            path.display(),
            ckpt.vocab_hash,
            corpus.vocab.hash()
        )));
    }
    Ok(())
}

fn gen_data(a: GenData) -> Outcome {
    let plan = parse_plan(&a.plan, "--plan")?;
    if a.scenes == 0 {
        return Err(usage("--scenes must be at least 1"));
    }
    let corpus = generate_corpus(a.seed, a.scenes, &plan).map_err(|e| runtime(e.to_string()))?;
    corpus.save(&a.out).map_err(|e| runtime(e.to_string()))?;
    let refs: usize = corpus.scenes.iter().map(|s| s.references.iter().map(Vec::len).sum::<usize>()).sum();
    println!("{} scenes, {} references, plan {} -> {}", corpus.scenes.len(), refs, plan, a.out.display());
    Ok(())
}

fn train(a: Train) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(o) = a.objective {
        cfg.train.objective = match o {
            ObjectiveArg::Masked => Objective::Masked,
            ObjectiveArg::Ar => Objective::TeacherForcing,
        };
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
        if cfg.train.warmup >= n {
            cfg.train.warmup = n / 10;
        }
    }
    let corpus = load_corpus(&a.corpus)?;
    let plan = match &a.plan {
        Some(p) => parse_plan(p, "--plan")?,
        None => cfg.plan_or(&corpus.plan),
    };
    let model = cfg.model.model_config(&corpus.vocab, &plan);
    let total = cfg.train.iterations;
    let (ckpt, log) = training::train(cfg.train.clone(), model, &corpus, plan, Some(&a.out), |e| {
        if e.iteration % 100 == 0 || e.iteration == total {
            eprintln!("iteration {:>6}/{total}  loss {:.4}  lr {:.2e}", e.iteration, e.loss, e.lr);
        }
    })
    .map_err(|e| match e {
        TrainError::Config(_) => usage(e.to_string()),
        other => runtime(other.to_string()),
    })?;
    let tail = log.len().div_ceil(10).max(1);
    let last: f32 = log.iter().rev().take(tail).map(|e| e.loss).sum::<f32>() / tail as f32;
    println!(
        "{:?} model, plan {}, {} iterations, final loss {:.4} -> {}",
        ckpt.kind,
        ckpt.plan,
        ckpt.iteration,
        last,
        training::final_checkpoint_path(&a.out).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CaptionRecord<'a> {
    scene: usize,
    level: usize,
    steps: Option<usize>,
    gamma: Option<f32>,
    passes: usize,
    tokens: &'a [usize],
    text: String,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    scene: usize,
    level: usize,
    #[serde(flatten)]
    step: &'a StepTrace,
}

fn decode(a: Decode) -> Outcome {
    let ckpt = load_ckpt(&a.ckpt)?;
    let corpus = load_corpus(&a.corpus)?;
    check_vocab(&ckpt, &corpus, &a.ckpt)?;
    let plan = &ckpt.plan;
    let levels: Vec<usize> = match a.level {
        Some(l) if l >= 1 && l <= plan.num_levels() => vec![l - 1],
        Some(l) => return Err(usage(format!("--level {l}: the model's plan {plan} has {} levels", plan.num_levels()))),
        None => (0..plan.num_levels()).collect(),
    };
    let mut configs = Vec::new();
    for &l in &levels {
        let mut c = DecodeConfig::for_level(plan, l).map_err(|e| usage(e.to_string()))?;
        if let Some(t) = a.steps {
            c.steps = t;
        }
        if let Some(g) = a.gamma {
            c.gamma = g;
        }
        c.global_update = !a.no_global_update;
        c.validate(plan).map_err(|e| usage(format!("--steps/--gamma: {e}")))?;
        configs.push(c);
    }
    let n = a.scenes.unwrap_or(corpus.scenes.len()).min(corpus.scenes.len());
    let scenes = &corpus.scenes[..n];
    type PerScene = Vec<(Vec<usize>, usize, Vec<StepTrace>)>;
    let decoded: Vec<PerScene> = scenes
        .par_iter()
        .map(|scene| {
            configs
                .iter()
                .map(|c| match ckpt.kind {
                    ModelKind::NonAutoregressive => decode_nar(&NarScorer(&ckpt.params), &scene.regions, c, plan)
                        .map(|d| (d.canvas, d.passes, d.trace)),
                    ModelKind::Autoregressive => {
                        decode_ar(&ArScorer(&ckpt.params), &scene.regions, c.level, plan).map(|d| (d.caption, d.passes, Vec::new()))
                    }
                })
                .collect::<Result<PerScene, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| runtime(e.to_string()))?;

    let nar = ckpt.kind == ModelKind::NonAutoregressive;
    let mut out = String::new();
    let mut trace = String::new();
    for (s, per) in decoded.iter().enumerate() {
        for ((canvas, passes, steps), c) in per.iter().zip(&configs) {
            let tokens = lencap::decoding::effective(canvas);
            let rec = CaptionRecord {
                scene: s,
                level: c.level + 1,
                steps: nar.then_some(c.steps),
                gamma: nar.then_some(c.gamma),
                passes: *passes,
                tokens,
                text: corpus.vocab.detokenize(tokens),
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"));
            for st in steps {
                let _ = writeln!(
                    trace,
                    "{}",
                    serde_json::to_string(&TraceRecord { scene: s, level: c.level + 1, step: st }).expect("trace serializes")
                );
            }
        }
    }
    write_file(&a.out, &out)?;
    if let Some(p) = &a.trace_out {
        write_file(p, &trace)?;
    }
    println!("{} captions -> {}", n * configs.len(), a.out.display());
    Ok(())
}

fn eval(a: Eval) -> Outcome {
    let corpus = load_corpus(&a.corpus)?;
    let hist_plan = match &a.plan {
        Some(p) => parse_plan(p, "--plan")?,
        None => corpus.plan.clone(),
    };
    let mut loaded = Vec::new();
    for spec in &a.ckpts {
        let (name, path) = named(spec);
        let ckpt = load_ckpt(&path)?;
        check_vocab(&ckpt, &corpus, &path)?;
        loaded.push((name, ckpt));
    }
    let refs: Vec<(String, &Checkpoint)> = loaded.iter().map(|(n, c)| (n.clone(), c)).collect();
    let ablation = a.ablation_level.checked_sub(1);
    let report = evaluate(&refs, &corpus, &hist_plan, ablation).map_err(|e| runtime(e.to_string()))?;
    write_file(&a.report_out, &report.to_json())?;
    print!("{}", report.to_table());
    Ok(())
}

fn bench(a: Bench) -> Outcome {
    let corpus = load_corpus(&a.corpus)?;
    if a.steps_list.iter().any(|&t| t == 0) {
        return Err(usage("--steps-list: every budget must be at least 1"));
    }
    let mut loaded = Vec::new();
    for spec in &a.ckpts {
        let (name, path) = named(spec);
        let ckpt = load_ckpt(&path)?;
        check_vocab(&ckpt, &corpus, &path)?;
        if let Some(l) = a.level {
            if l == 0 || l > ckpt.plan.num_levels() {
                return Err(usage(format!("--level {l}: {} has {} levels", path.display(), ckpt.plan.num_levels())));
            }
        }
        loaded.push((name, ckpt));
    }
    let refs: Vec<(String, &Checkpoint)> = loaded.iter().map(|(n, c)| (n.clone(), c)).collect();
    let n = a.scenes.min(corpus.scenes.len()).max(1);
    let opts = BenchOptions {
        steps: a.steps_list,
        repetitions: a.reps.max(1),
        warmup: a.warmup,
        level: a.level.map(|l| l - 1),
        parallel: a.parallel,
    };
    let report = run_bench(&refs, &corpus.scenes[..n], &opts).map_err(|e| runtime(e.to_string()))?;
    if let Some(p) = &a.report_out {
        write_file(p, &report.to_json())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
