use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use metatree::autodiff::{Container, Real, TensorData};
use metatree::model::ModelConfig;
use metatree::train::{gate_config, loss_grad_check, Corpus, Schedule, Trainer};

use crate::settings::Settings;
use crate::{CliError, Ctx};

const MODEL_KEYS: [&str; 9] =
    ["layers", "heads", "d_model", "d_mlp", "n_max", "m_max", "k_max", "sigma", "positional_bias"];
const SCHEDULE_KEYS: [&str; 13] = [
    "phase1_steps",
    "phase2_steps",
    "batch",
    "seed",
    "curriculum",
    "lr",
    "warmup",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "checkpoint_every",
    "augment",
];

/// Maps `on`/`off` to the boolean spelling the config parsers take.
fn switch(v: String) -> String {
    match v.as_str() {
        "on" | "yes" => "true".into(),
        "off" | "no" => "false".into(),
        _ => v,
    }
}

fn usage(e: metatree::Error) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Starting configuration: `desk` or `paper-full`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    d_model: Option<String>,
    #[arg(long)]
    d_mlp: Option<String>,
    #[arg(long)]
    n_max: Option<String>,
    #[arg(long)]
    m_max: Option<String>,
    #[arg(long)]
    k_max: Option<String>,
    /// Width of the smoothed target.
    #[arg(long)]
    sigma: Option<String>,
    /// Learned row/column position biases: on or off.
    #[arg(long)]
    positional_bias: Option<String>,
}

impl ModelArgs {
    fn flag(&self, key: &str) -> Option<String> {
        match key {
            "layers" => self.layers.clone(),
            "heads" => self.heads.clone(),
            "d_model" => self.d_model.clone(),
            "d_mlp" => self.d_mlp.clone(),
            "n_max" => self.n_max.clone(),
            "m_max" => self.m_max.clone(),
            "k_max" => self.k_max.clone(),
            "sigma" => self.sigma.clone(),
            "positional_bias" => self.positional_bias.clone(),
            _ => None,
        }
    }

    /// `base`, then the preset, then every key from file or flag.
    fn resolve(&self, base: ModelConfig, s: &Settings) -> Result<ModelConfig, CliError> {
        let mut cfg = base;
        if let Some(p) = s.get("preset", self.preset.clone())? {
            cfg.set("preset", &p).map_err(usage)?;
        }
        for key in MODEL_KEYS {
            if let Some(v) = s.get::<String>(key, self.flag(key))? {
                cfg.set(key, &switch(v)).map_err(usage)?;
            }
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory from `build-corpus`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    phase1_steps: Option<String>,
    #[arg(long)]
    phase2_steps: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    /// `two-phase` or `single-phase`.
    #[arg(long)]
    curriculum: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    /// Random row/column permutation of every example: on or off.
    #[arg(long)]
    augment: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    /// Parameter precision: f32 or f64.
    #[arg(long)]
    dtype: Option<String>,
    /// Stop after this many completed steps (the schedule is unchanged).
    #[arg(long)]
    max_steps: Option<u64>,
    /// Print the loss every this many steps.
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
}

impl TrainArgs {
    fn schedule_flag(&self, key: &str) -> Option<String> {
        match key {
            "phase1_steps" => self.phase1_steps.clone(),
            "phase2_steps" => self.phase2_steps.clone(),
            "batch" => self.batch.clone(),
            "seed" => self.seed.clone(),
            "curriculum" => self.curriculum.clone(),
            "lr" => self.lr.clone(),
            "warmup" => self.warmup.clone(),
            "weight_decay" => self.weight_decay.clone(),
            "augment" => self.augment.clone(),
            "checkpoint_every" => self.checkpoint_every.clone(),
            _ => None,
        }
    }
}

pub fn train(a: TrainArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let corpus_dir: PathBuf = s.req("corpus", a.corpus.clone())?;
    let out: PathBuf = s.req("out", a.out.clone())?;
    let resume: Option<PathBuf> = s.get("resume", a.resume.clone())?;
    let dtype = s.or("dtype", a.dtype.clone(), "f32".to_string())?;
    let max_steps: Option<u64> = s.get("max_steps", a.max_steps)?;
    let log_every = s.or("log_every", a.log_every, 100)?.max(1);
    let cfg = a.model.resolve(ModelConfig::desk(), s)?;
    let mut schedule = Schedule::default();
    for key in SCHEDULE_KEYS {
        if let Some(v) = s.get::<String>(key, a.schedule_flag(key))? {
            schedule.set(key, &switch(v)).map_err(usage)?;
        }
    }
    schedule.validate().map_err(usage)?;
    s.finish()?;

    let corpus = Corpus::load(&corpus_dir)?;
    std::fs::create_dir_all(&out)?;
    let opts = RunOpts { out: &out, max_steps, log_every, ctx };
    match resume {
        Some(path) => {
            let c = Container::load(&path)?;
            eprintln!("resuming from {}; model and schedule come from the checkpoint", path.display());
            match c.get("param/embed.w_x").map(|e| &e.data) {
                Some(TensorData::F64(_)) => run(Trainer::<f64>::resume(&c, &corpus)?, &corpus, opts),
                Some(TensorData::F32(_)) => run(Trainer::<f32>::resume(&c, &corpus)?, &corpus, opts),
                _ => Err(metatree::Error::format("checkpoint holds no model parameters").into()),
            }
        }
        None => match dtype.as_str() {
            "f32" => run(Trainer::<f32>::new(&corpus, &cfg, schedule)?, &corpus, opts),
            "f64" => run(Trainer::<f64>::new(&corpus, &cfg, schedule)?, &corpus, opts),
            other => Err(CliError::Usage(format!("dtype must be f32 or f64, got '{other}'"))),
        },
    }
}

struct RunOpts<'a> {
    out: &'a Path,
    max_steps: Option<u64>,
    log_every: u64,
    ctx: &'a Ctx,
}

fn run<T: Real>(mut t: Trainer<T>, corpus: &Corpus, o: RunOpts<'_>) -> Result<(), CliError> {
    t.meta.retain(|(k, _)| k != "command");
    t.meta.push(("command".into(), o.ctx.command.clone()));
    let log_path = o.out.join("train.log");
    let fresh = !log_path.exists();
    let mut log = OpenOptions::new().create(true).append(true).open(&log_path)?;
    if fresh {
        write!(log, "{}step,loss,lr\n", o.ctx.header("metatree-train-log 1"))?;
    }
    let until = o.max_steps.unwrap_or(u64::MAX);
    let lr = t.schedule.optimizer();
    let start = Instant::now();
    let first = t.step_count();
    let mut io_err = None;
    let result = t.run(corpus, until, Some(o.out), |step, loss| {
        if let Err(e) = writeln!(log, "{step},{loss},{}", lr.lr_at(step)) {
            io_err.get_or_insert(e);
        }
        if step % o.log_every == 0 {
            let rate = (step - first) as f64 / start.elapsed().as_secs_f64().max(1e-9);
            eprintln!("step {step:>7}  loss {loss:.6}  lr {:.3e}  {rate:.2} steps/s", lr.lr_at(step));
        }
    });
    if let Err(e) = result {
        // Leave a resumable state behind before reporting.
        let _ = t.checkpoint().save(o.out.join("aborted.mtc"));
        return Err(e.into());
    }
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let path = o.out.join(if t.is_done() { "final.mtc" } else { "latest.mtc" });
    t.checkpoint().save(&path)?;
    outln!(
        "trained to step {} of {} (last loss {}) -> {}",
        t.step_count(),
        t.schedule.total(),
        t.losses.last().map_or("n/a".into(), |l| format!("{l:.6}")),
        path.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest acceptable relative error.
    #[arg(long)]
    tolerance: Option<f64>,
}

pub fn grad_check(a: GradCheckArgs, s: &Settings, _ctx: &Ctx) -> Result<(), CliError> {
    let cfg = a.model.resolve(gate_config(), s)?;
    let seed = s.or("seed", a.seed, 3)?;
    let tol = s.or("tolerance", a.tolerance, 1e-4)?;
    s.finish()?;
    let r = loss_grad_check(&cfg, seed)?;
    outln!(
        "model: layers {} heads {} d_model {} block {}x{}",
        cfg.layers, cfg.heads, cfg.d_model, cfg.n_max, cfg.m_max
    );
    outln!("checked {} coordinates, max relative error {:.3e}", r.checked, r.max_rel_error);
    if let Some((p, i, an, nu)) = r.worst {
        outln!("worst: parameter {p}[{i}] analytic {an:.9e} numeric {nu:.9e}");
    }
    if r.max_rel_error < tol {
        outln!("PASS (< {tol:e})");
        Ok(())
    } else {
        Err(metatree::Error::Numeric(format!("max relative error {:.3e} exceeds {tol:e}", r.max_rel_error)).into())
    }
}
