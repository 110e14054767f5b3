use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;

use chase_core::chase::{check_count_dims, flop_count, param_count, SegmentSpec};
use chase_core::discrepancy::{report, ReportConfig, METRICS};
use chase_core::skeldata::{
    load_dataset, manifest_path, save_dataset, synth_generate, CorruptionConfig, Dataset, Dims, SynthConfig,
};
use chase_core::train::{
    corruption_table, evaluate, gradient_gate, train, Checkpoint, Model, Normalizer, TrainConfig, TrainState,
    MASK_LEVELS, NOISE_LEVELS,
};

use crate::manifest::RunDir;
use crate::{Cli, CliError, Command, Global};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    match cli.command {
        Command::Synth(a) => synth(&g, a),
        Command::Train(a) => train_cmd(&g, a),
        Command::Eval(a) => eval(&g, a),
        Command::Discrepancy(a) => discrepancy(&g, a),
        Command::Gradcheck(a) => gradcheck(&g, a),
        Command::Params(a) => params(a),
    }
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

fn config_or_default<T: DeserializeOwned + Default>(g: &Global) -> Result<T, CliError> {
    g.config.as_deref().map(load_json).transpose().map(Option::unwrap_or_default)
}

fn require_out(g: &Global) -> Result<&Path, CliError> {
    g.out.as_deref().ok_or_else(|| CliError::usage("--out is required for this command"))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize to JSON")
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| CliError::usage(format!("cannot load dataset {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes
    #[arg(long)]
    num_classes: Option<usize>,
    /// Training samples per class
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// Test samples per class
    #[arg(long)]
    test_samples_per_class: Option<usize>,
}

fn synth(g: &Global, a: SynthArgs) -> Result<(), CliError> {
    let mut cfg: SynthConfig = config_or_default(g)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.num_classes {
        cfg.num_classes = v;
    }
    if let Some(v) = a.samples_per_class {
        cfg.samples_per_class = v;
    }
    if let Some(v) = a.test_samples_per_class {
        cfg.test_samples_per_class = v;
    }
    cfg.validate()?;
    let out = require_out(g)?;
    let files: Vec<String> = ["train.chsk", "test.chsk"]
        .iter()
        .flat_map(|f| [f.to_string(), manifest_path(Path::new(f)).display().to_string()])
        .collect();
    let run = RunDir::reserve(out, g.run_id.as_deref().unwrap_or("synth"), &files)?;
    let (tr, te) = synth_generate(&cfg)?;
    save_dataset(&run.path("train.chsk"), &tr)?;
    save_dataset(&run.path("test.chsk"), &te)?;
    let seed = cfg.seed;
    run.finish("synth", to_value(&cfg), seed)?;
    println!("train={} samples={}", out.join("train.chsk").display(), tr.len());
    println!("test={} samples={}", out.join("test.chsk").display(), te.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training set (.chsk)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test set, evaluated after every epoch
    #[arg(long)]
    test: Option<PathBuf>,
    /// vanilla, s2com, s2com_global, s2com_global_std, batchnorm, aug, er or chase
    #[arg(long)]
    normalizer: Option<Normalizer>,
    /// Total epochs, counting any resumed ones
    #[arg(long)]
    epochs: Option<usize>,
    /// Weight of the entity discrepancy penalty
    #[arg(long)]
    lambda: Option<f64>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Samples per mini-batch
    #[arg(long)]
    batch_size: Option<usize>,
    /// Entity pairs sampled per batch
    #[arg(long, alias = "m")]
    pairs_per_batch: Option<usize>,
    /// Continue from a checkpoint written by an earlier run
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Fields a resumed run may change: how far to train and where the data lives.
const RESUMABLE: [&str; 3] = ["epochs", "train_path", "test_path"];

fn check_resumable(saved: &TrainConfig, now: &TrainConfig) -> Result<(), CliError> {
    let (serde_json::Value::Object(a), serde_json::Value::Object(b)) = (to_value(saved), to_value(now)) else {
        unreachable!("configs serialize to objects")
    };
    for (k, v) in &a {
        if !RESUMABLE.contains(&k.as_str()) && b.get(k) != Some(v) {
            return Err(CliError::usage(format!("config differs from the checkpoint's at `{k}`")));
        }
    }
    Ok(())
}

fn train_cmd(g: &Global, a: TrainArgs) -> Result<(), CliError> {
    let ck = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut cfg: TrainConfig = match (&g.config, &ck) {
        (Some(p), _) => load_json(p)?,
        (None, Some(ck)) => ck.meta.config.clone(),
        (None, None) => TrainConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if a.train.is_some() {
        cfg.train_path = a.train;
    }
    if a.test.is_some() {
        cfg.test_path = a.test;
    }
    if let Some(v) = a.normalizer {
        cfg.normalizer = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.pairs_per_batch {
        cfg.pairs_per_batch = v;
    }
    cfg.validate()?;
    if let Some(ck) = &ck {
        check_resumable(&ck.meta.config, &cfg)?;
        if ck.meta.epoch > cfg.epochs {
            return Err(CliError::usage(format!(
                "checkpoint is at epoch {} but only {} epochs were requested",
                ck.meta.epoch, cfg.epochs
            )));
        }
    }
    let train_path =
        cfg.train_path.clone().ok_or_else(|| CliError::usage("no training set: pass --train or set `train_path`"))?;
    let ds = load_data(&train_path)?;
    let test = cfg.test_path.as_deref().map(load_data).transpose()?;

    let run_id = g.run_id.as_deref().unwrap_or("train");
    let (log_name, ck_name) = (format!("{run_id}.metrics.jsonl"), format!("{run_id}.chck"));
    let mut run = RunDir::reserve(require_out(g)?, run_id, &[log_name.clone(), ck_name.clone()])?;
    let state = match &ck {
        Some(ck) => ck.to_state()?,
        None => TrainState::fresh(&cfg, &ds)?,
    };

    let log_path = run.path(&log_name);
    let file =
        File::create(&log_path).map_err(|e| CliError::usage(format!("cannot create {}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    let quiet = g.quiet;
    let result = train(&ds, test.as_ref(), &cfg, state, |m, _| {
        let line = serde_json::to_string(m)?;
        writeln!(log, "{line}").map_err(|e| chase_core::Error::Io { path: log_path.clone(), source: e })?;
        if !quiet {
            let acc = m.eval_acc.map(|a| format!(" eval_acc={a:.4}")).unwrap_or_default();
            let mmd = m.mpmmd.map(|v| format!(" mpmmd={v:.4}")).unwrap_or_default();
            eprintln!("epoch {} loss={:.4}{mmd}{acc}", m.epoch, m.train_loss);
        }
        Ok(())
    });
    log.flush().map_err(|e| CliError::usage(format!("cannot write {}: {e}", log_path.display())))?;
    let state = match result {
        Ok(s) => s,
        Err(e) => {
            run.artifacts = vec![log_name];
            run.finish("train", to_value(&cfg), cfg.seed)?;
            return Err(e.into());
        }
    };
    Checkpoint::from_state(&state, &cfg, &ds.classes).save(&run.path(&ck_name))?;
    let acc = evaluate(&state.model, test.as_ref().unwrap_or(&ds), None)?;
    let ck_path = run.path(&ck_name);
    run.finish("train", to_value(&cfg), cfg.seed)?;
    println!("checkpoint={}", ck_path.display());
    println!("final_acc={acc}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to score; defaults to the checkpoint's test set
    #[arg(long)]
    data: Option<PathBuf>,
    /// Single corruption: Gaussian noise standard deviation
    #[arg(long)]
    noise: Option<f64>,
    /// Single corruption: joint masking probability
    #[arg(long)]
    mask: Option<f64>,
}

#[derive(Serialize)]
struct SingleEval {
    data: PathBuf,
    corruption: CorruptionConfig,
    acc: f64,
}

fn eval(g: &Global, a: EvalArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = a
        .data
        .or_else(|| ck.meta.config.test_path.clone())
        .ok_or_else(|| CliError::usage("no dataset: pass --data"))?;
    let ds = load_data(&data)?;
    let model = ck.to_state()?.model;
    let seed = g.seed.unwrap_or(0);
    let run_id = g.run_id.as_deref().unwrap_or("eval");
    let name = format!("{run_id}.eval.json");
    let run = g.out.as_deref().map(|o| RunDir::reserve(o, run_id, std::slice::from_ref(&name))).transpose()?;

    let config = if a.noise.is_some() || a.mask.is_some() {
        let corruption =
            CorruptionConfig { noise_sigma: a.noise.unwrap_or(0.0), mask_prob: a.mask.unwrap_or(0.0), seed };
        corruption.validate()?;
        let acc = evaluate(&model, &ds, Some(&corruption))?;
        println!("acc={acc}");
        if let Some(r) = &run {
            write_json(&r.path(&name), &SingleEval { data: data.clone(), corruption, acc })?;
        }
        to_value(&corruption)
    } else {
        let table = corruption_table(&model, &ds, seed)?;
        println!("clean_acc={}", table.clean);
        for (s, acc) in &table.noise {
            println!("noise_sigma={s} acc={acc}");
        }
        for (p, acc) in &table.mask {
            println!("mask_prob={p} acc={acc}");
        }
        if let Some(r) = &run {
            write_json(&r.path(&name), &table)?;
        }
        serde_json::json!({ "noise_levels": NOISE_LEVELS, "mask_levels": MASK_LEVELS })
    };
    if let Some(r) = run {
        let config = serde_json::json!({
            "checkpoint": a.checkpoint,
            "data": data,
            "normalizer": model.normalizer,
            "corruption": config,
        });
        r.finish("eval", config, seed)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct DiscrepancyArgs {
    /// Dataset (.chsk)
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the checkpoint's normalizer, or vanilla without one
    #[arg(long)]
    normalizer: Option<Normalizer>,
    /// Trained model; required for learned normalizers
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Independent subsampling repetitions
    #[arg(long)]
    repetitions: Option<usize>,
    /// Points drawn per entity and repetition
    #[arg(long)]
    points_per_entity: Option<usize>,
}

fn discrepancy(g: &Global, a: DiscrepancyArgs) -> Result<(), CliError> {
    let mut cfg: ReportConfig = config_or_default(g)?;
    if let Some(v) = a.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = a.points_per_entity {
        cfg.points_per_entity = v;
    }
    let ds = load_data(&a.data)?;
    let model = match &a.checkpoint {
        Some(p) => {
            let model = Checkpoint::load(p)?.to_state()?.model;
            if a.normalizer.is_some_and(|n| n != model.normalizer) {
                return Err(CliError::usage(format!(
                    "--normalizer differs from the checkpoint's `{}`",
                    model.normalizer
                )));
            }
            model
        }
        None => {
            let normalizer = a.normalizer.unwrap_or_default();
            if matches!(normalizer, Normalizer::Chase | Normalizer::Batchnorm) {
                return Err(CliError::usage(format!("normalizer `{normalizer}` needs --checkpoint")));
            }
            let tc = TrainConfig { normalizer, ..TrainConfig::default() };
            Model::init(&tc, ds.dims, ds.num_classes().max(1))?
        }
    };
    check_dims(ds.dims, model.dims)?;
    let seed = g.seed.unwrap_or(0);
    let run_id = g.run_id.as_deref().unwrap_or("discrepancy");
    let files = [format!("{run_id}.discrepancy.csv"), format!("{run_id}.discrepancy.json")];
    let run = RunDir::reserve(require_out(g)?, run_id, &files)?;
    let rep = report(&ds, model.normalizer.name(), |x| model.normalize_eval(x), &cfg, seed)?;
    rep.write(&run.dir, run_id)?;
    let config = serde_json::json!({
        "data": a.data,
        "checkpoint": a.checkpoint,
        "normalizer": model.normalizer,
        "report": cfg,
    });
    run.finish("discrepancy", config, seed)?;
    for m in METRICS {
        let v = rep.mean_over_pairs(m).unwrap_or(f64::NAN);
        println!("{m}={v}");
    }
    Ok(())
}

fn check_dims(data: Dims, model: Dims) -> Result<(), CliError> {
    if data != model {
        return Err(CliError::usage(format!(
            "dataset shape {:?} differs from the model's {:?}",
            data.shape(),
            model.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Maximum relative error
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Corrupt the analytic gradient of one check (test fixture)
    #[arg(long, hide = true)]
    sabotage: Option<String>,
}

fn gradcheck(g: &Global, a: GradcheckArgs) -> Result<(), CliError> {
    let run_id = g.run_id.as_deref().unwrap_or("gradcheck");
    let name = format!("{run_id}.gradcheck.json");
    let run = g.out.as_deref().map(|o| RunDir::reserve(o, run_id, std::slice::from_ref(&name))).transpose()?;
    let checks = gradient_gate(a.eps, a.tol, a.sabotage.as_deref())?;
    println!("{:<20} {:>14} {:>14}  status", "op", "max_rel_error", "max_abs_error");
    for c in &checks {
        let status = if c.report.passed { "ok" } else { "FAIL" };
        println!("{:<20} {:>14.3e} {:>14.3e}  {status}", c.op, c.report.max_rel_error, c.report.max_abs_error);
    }
    if let Some(r) = run {
        write_json(&r.path(&name), &checks)?;
        r.finish("gradcheck", serde_json::json!({ "eps": a.eps, "tol": a.tol }), 0)?;
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.report.passed)
        .map(|c| format!("{} (max_rel_error={:.3e})", c.op, c.report.max_rel_error))
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed at eps={} tol={}", checks.len(), a.eps, a.tol);
        Ok(())
    } else {
        Err(CliError::check(format!("gradient check failed: {}", failed.join(", "))))
    }
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Channels
    #[arg(long)]
    c: usize,
    /// Frames
    #[arg(long)]
    t: usize,
    /// Joints
    #[arg(long)]
    j: usize,
    /// Entities
    #[arg(long)]
    e: usize,
    /// Lifted channels
    #[arg(long)]
    c1: usize,
    /// Squeezed channels
    #[arg(long)]
    c2: usize,
    /// Segment grid as `t,j,e`
    #[arg(long, default_value = "1,1,1")]
    seg: SegmentSpec,
}

fn params(a: ParamsArgs) -> Result<(), CliError> {
    let dims = Dims::new(a.c, a.t, a.j, a.e);
    check_count_dims(dims, a.c1, a.c2, a.seg)?;
    println!("params={}", param_count(dims, a.c1, a.c2));
    let f = flop_count(dims, a.c1, a.c2, a.seg);
    println!(
        "flops={} conv1={} pool={} conv2={} relu={} conv3={} softmax={} shift_vector={} subtract={} convention={}",
        f.total, f.conv1, f.pool, f.conv2, f.relu, f.conv3, f.softmax, f.shift_vector, f.subtract, f.convention
    );
    Ok(())
}
