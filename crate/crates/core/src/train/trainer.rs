//! Two-phase curriculum training with exact checkpoint/resume.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::corpus::{Corpus, TrainingExample};
use super::stream::{Phase, PhaseStream};
use super::target::{gaussian_target, snap_split};
use crate::autodiff::{AdamWConfig, AdamWState, Container, Real, Tape, Tensor, TensorData, Var};
use crate::data::Block;
use crate::error::{Error, Result};
use crate::model::{build_graph, parse_kv, ModelConfig, ModelParams, Packed};
use crate::seed;
use crate::tree::{DecisionTree, Node};

pub const CHECKPOINT_FORMAT: &str = "metatree-checkpoint 1";

/// Seed-path tags for the trainer's random streams.
const INIT_STREAM: u64 = 1;
const STREAM_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curriculum {
    /// Phase one then phase two.
    TwoPhase,
    /// Phase-two stream for every step.
    SinglePhase,
}

impl Curriculum {
    pub fn as_str(self) -> &'static str {
        match self {
            Curriculum::TwoPhase => "two-phase",
            Curriculum::SinglePhase => "single-phase",
        }
    }
}

impl FromStr for Curriculum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-phase" => Ok(Curriculum::TwoPhase),
            "single-phase" => Ok(Curriculum::SinglePhase),
            _ => Err(Error::validation(format!("unknown curriculum '{s}'"))),
        }
    }
}

/// Step counts, batch size, optimizer settings and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub phase1_steps: u64,
    pub phase2_steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub curriculum: Curriculum,
    pub lr: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Write a checkpoint every this many steps (0 = never).
    pub checkpoint_every: u64,
    /// Random row/column permutation of every drawn example.
    pub augment: bool,
}

impl Default for Schedule {
    /// The desk schedule: 15k + 45k steps at batch 32.
    fn default() -> Self {
        let o = AdamWConfig::default();
        Schedule {
            phase1_steps: 15_000,
            phase2_steps: 45_000,
            batch: 32,
            seed: 0,
            curriculum: Curriculum::TwoPhase,
            lr: o.lr,
            warmup: o.warmup,
            weight_decay: o.weight_decay,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            checkpoint_every: 1000,
            augment: true,
        }
    }
}

impl Schedule {
    pub fn total(&self) -> u64 {
        self.phase1_steps + self.phase2_steps
    }

    /// Phase used by the update that takes the counter from `step` to `step + 1`.
    pub fn phase_at(&self, step: u64) -> Phase {
        match self.curriculum {
            Curriculum::TwoPhase if step < self.phase1_steps => Phase::One,
            _ => Phase::Two,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            warmup: self.warmup,
            total: self.total(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 || self.batch == 0 {
            return Err(Error::validation("schedule needs at least one step and a positive batch"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 13] = [
            ("phase1_steps", self.phase1_steps.to_string()),
            ("phase2_steps", self.phase2_steps.to_string()),
            ("batch", self.batch.to_string()),
            ("seed", self.seed.to_string()),
            ("curriculum", self.curriculum.as_str().to_string()),
            ("lr", format!("{}", self.lr)),
            ("warmup", self.warmup.to_string()),
            ("weight_decay", format!("{}", self.weight_decay)),
            ("beta1", format!("{}", self.beta1)),
            ("beta2", format!("{}", self.beta2)),
            ("eps", format!("{}", self.eps)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("augment", self.augment.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::validation(format!("invalid value '{v}' for {k}")))
        }
        match key {
            "phase1_steps" => self.phase1_steps = num(key, value)?,
            "phase2_steps" => self.phase2_steps = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "curriculum" => self.curriculum = value.parse()?,
            "lr" => self.lr = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "augment" => self.augment = num(key, value)?,
            _ => return Err(Error::validation(format!("unknown schedule key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Schedule::default();
        for (k, v) in parse_kv(text)? {
            s.set(&k, &v)?;
        }
        s.validate()?;
        Ok(s)
    }
}

/// Uniform row and column shuffle of an example; teacher features follow
/// their columns.
pub fn augment(block: &Block, teacher: &DecisionTree, rng: &mut seed::Rng) -> (Block, DecisionTree) {
    let mut rows: Vec<usize> = (0..block.n).collect();
    let mut cols: Vec<usize> = (0..block.m).collect();
    rows.shuffle(rng);
    cols.shuffle(rng);
    let mut inverse = vec![0; block.m];
    for (new, &old) in cols.iter().enumerate() {
        inverse[old] = new;
    }
    (block.permuted(&rows, &cols), teacher.remap_features(|f| inverse[f]))
}

/// Target for one split, in packed cell order.
fn packed_target<T: Real>(pk: &Packed<T>, full: &[f64], m: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(pk.cells());
    for &i in &pk.rows {
        out.extend(pk.cols.iter().map(|&j| T::of(full[i * m + j])));
    }
    out
}

/// Summed smoothed-BCE terms for the teacher's root split on the whole
/// block and for each internal child on the block with the sibling's rows
/// masked. `None` when the teacher has no split at all.
pub fn example_loss<T: Real>(
    tape: &mut Tape<T>,
    params: &[Var],
    cfg: &ModelConfig,
    b: &Block,
    teacher: &DecisionTree,
) -> Result<Option<Var>> {
    let Node::Internal(root) = teacher.node(1) else { return Ok(None) };
    let mut terms = Vec::new();
    let mut term = |tape: &mut Tape<T>, split, subset: Option<&[bool]>| -> Result<()> {
        let snapped = snap_split(b, split, subset)?;
        let full = gaussian_target(b, snapped.feature, snapped.value, cfg.sigma, subset);
        let pk = Packed::<T>::new(b, cfg, subset)?;
        let target = packed_target(&pk, &full, b.m);
        let g = build_graph(tape, params, cfg, &pk);
        terms.push(tape.bce(g.scores, &target, &vec![true; pk.cells()]));
        Ok(())
    };
    term(tape, root, None)?;
    let left: Vec<bool> = (0..b.n).map(|i| root.goes_left(&b.raw_x[i * b.m..(i + 1) * b.m])).collect();
    for (child, side) in [(2, true), (3, false)] {
        if teacher.capacity() > child {
            if let Node::Internal(s) = teacher.node(child) {
                let subset: Vec<bool> = (0..b.n).map(|i| b.row_valid[i] && left[i] == side).collect();
                if subset.iter().any(|&v| v) {
                    term(tape, s, Some(&subset))?;
                }
            }
        }
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = tape.add(loss, t);
    }
    Ok(Some(loss))
}

/// Loss and parameter gradients of one example.
fn example_grad<T: Real>(
    params: &ModelParams<T>,
    b: &Block,
    teacher: &DecisionTree,
) -> Result<Option<(f64, Vec<Vec<T>>)>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
    let Some(loss) = example_loss(&mut tape, &vars, &params.config, b, teacher)? else { return Ok(None) };
    tape.backward(loss)?;
    let lv = tape.value(loss).item().as_f64();
    let grads = vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| tape.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.numel()]))
        .collect();
    Ok(Some((lv, grads)))
}

/// Model, optimizer and data-stream state.
pub struct Trainer<T: Real> {
    pub params: ModelParams<T>,
    pub opt: AdamWState<T>,
    pub schedule: Schedule,
    stream: PhaseStream,
    /// Mean example loss of every completed step.
    pub losses: Vec<f64>,
    /// Extra meta written into every checkpoint (e.g. the command line).
    pub meta: Vec<(String, String)>,
    last_checkpoint: Option<PathBuf>,
}

impl<T: Real> Trainer<T> {
    pub fn new(corpus: &Corpus, model: &ModelConfig, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        check_capacity(corpus, model)?;
        let params = ModelParams::init(model, seed::derive(schedule.seed, &[INIT_STREAM]))?;
        let opt = AdamWState::new(schedule.optimizer(), &params.tensors);
        let stream = PhaseStream::new(corpus, schedule.phase_at(0), seed::derive(schedule.seed, &[STREAM_STREAM]))?;
        Ok(Trainer { params, opt, schedule, stream, losses: Vec::new(), meta: Vec::new(), last_checkpoint: None })
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    pub fn is_done(&self) -> bool {
        self.opt.step >= self.schedule.total()
    }

    /// Draws a batch, averages example gradients in batch order and applies
    /// one optimizer update. Returns the mean example loss.
    pub fn step(&mut self, corpus: &Corpus) -> Result<f64> {
        let step = self.opt.step;
        let phase = self.schedule.phase_at(step);
        if self.stream.phase() != phase {
            self.stream = PhaseStream::new(corpus, phase, seed::derive(self.schedule.seed, &[STREAM_STREAM]))?;
        }
        let picks: Vec<usize> = (0..self.schedule.batch).map(|_| self.stream.next_index()).collect();
        let aug_seed = seed::derive(self.schedule.seed, &[AUGMENT_STREAM, step]);
        let params = &self.params;
        let shuffle = self.schedule.augment;
        let results: Vec<Result<Option<(f64, Vec<Vec<T>>)>>> = picks
            .par_iter()
            .enumerate()
            .map(|(slot, &e)| {
                let ex: &TrainingExample = corpus
                    .examples
                    .get(e)
                    .ok_or_else(|| Error::contract(format!("example {e} not in corpus")))?;
                if !shuffle {
                    return example_grad(params, &ex.block, &ex.teacher);
                }
                let mut rng = seed::rng_at(aug_seed, &[slot as u64]);
                let (b, t) = augment(&ex.block, &ex.teacher, &mut rng);
                example_grad(params, &b, &t)
            })
            .collect();
        let mut grads: Vec<Vec<T>> = params.tensors.iter().map(|t| vec![T::zero(); t.numel()]).collect();
        let mut total = 0.0;
        let mut used = 0usize;
        for r in results {
            if let Some((l, g)) = r? {
                total += l;
                used += 1;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, v) in acc.iter_mut().zip(gi) {
                        *a += v;
                    }
                }
            }
        }
        let loss = if used == 0 { 0.0 } else { total / used as f64 };
        if !loss.is_finite() {
            let last = self.last_checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string());
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}; last good checkpoint: {last}",
                step + 1
            )));
        }
        let inv = T::of(1.0 / self.schedule.batch as f64);
        grads.iter_mut().flatten().for_each(|v| *v *= inv);
        self.opt.update(&self.params.names, &mut self.params.tensors, &grads)?;
        self.losses.push(loss);
        Ok(loss)
    }

    /// Steps until `until` (capped at the schedule's total), writing
    /// periodic checkpoints into `out_dir` when given. `log` sees every
    /// completed step and its loss.
    pub fn run(
        &mut self,
        corpus: &Corpus,
        until: u64,
        out_dir: Option<&Path>,
        mut log: impl FnMut(u64, f64),
    ) -> Result<()> {
        let until = until.min(self.schedule.total());
        while self.opt.step < until {
            let loss = self.step(corpus)?;
            let s = self.opt.step;
            log(s, loss);
            if let Some(dir) = out_dir {
                let every = self.schedule.checkpoint_every;
                if every > 0 && s % every == 0 {
                    let path = dir.join(format!("checkpoint-{s:07}.mtc"));
                    self.checkpoint().save(&path)?;
                    self.last_checkpoint = Some(path);
                }
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("format", CHECKPOINT_FORMAT);
        for (k, v) in &self.meta {
            c.set_meta(k, v.clone());
        }
        c.set_meta("schedule", self.schedule.to_text());
        c.set_meta("step", self.opt.step.to_string());
        let (phase, epoch, pos) = self.stream.state();
        c.set_meta("stream", format!("{phase} {epoch} {pos}"));
        self.params.store(&mut c);
        for (i, n) in self.params.names.iter().enumerate() {
            let shape = self.params.tensors[i].shape().to_vec();
            c.push_real(&format!("adam/m/{n}"), &Tensor::from_vec(&shape, self.opt.m[i].clone()));
            c.push_real(&format!("adam/v/{n}"), &Tensor::from_vec(&shape, self.opt.v[i].clone()));
        }
        c.push("train/loss", &[self.losses.len()], TensorData::F64(self.losses.clone()));
        c
    }

    /// Continues exactly where `checkpoint` left off.
    pub fn resume(c: &Container, corpus: &Corpus) -> Result<Self> {
        if c.meta("format") != Some(CHECKPOINT_FORMAT) {
            return Err(Error::format("not a training checkpoint"));
        }
        let schedule = Schedule::from_text(c.require_meta("schedule")?)?;
        let params = ModelParams::<T>::restore(c)?;
        check_capacity(corpus, &params.config)?;
        let step: u64 = c
            .require_meta("step")?
            .parse()
            .map_err(|_| Error::format("checkpoint step is not a number"))?;
        let mut opt = AdamWState::new(schedule.optimizer(), &params.tensors);
        opt.step = step;
        for (i, n) in params.names.iter().enumerate() {
            opt.m[i] = c.real::<T>(&format!("adam/m/{n}"))?.into_data();
            opt.v[i] = c.real::<T>(&format!("adam/v/{n}"))?.into_data();
        }
        let st: Vec<&str> = c.require_meta("stream")?.split_whitespace().collect();
        let bad = || Error::format("checkpoint stream state is malformed");
        let [phase, epoch, pos] = st.as_slice() else { return Err(bad()) };
        let stream = PhaseStream::at(
            corpus,
            phase.parse()?,
            seed::derive(schedule.seed, &[STREAM_STREAM]),
            epoch.parse().map_err(|_| bad())?,
            pos.parse().map_err(|_| bad())?,
        )?;
        let losses = c.f64s("train/loss")?.1.to_vec();
        let meta = c
            .meta
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "format" | "schedule" | "step" | "stream" | "model"))
            .cloned()
            .collect();
        Ok(Trainer { params, opt, schedule, stream, losses, meta, last_checkpoint: None })
    }
}

fn check_capacity(corpus: &Corpus, cfg: &ModelConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::validation("corpus is empty"));
    }
    for e in &corpus.examples {
        let b = &e.block;
        if b.n > cfg.n_max || b.m > cfg.m_max || b.n_classes > cfg.k_max {
            return Err(Error::contract(format!(
                "example from {} ({}x{}, {} classes) exceeds model capacity {}x{}x{}",
                e.source_dataset, b.n, b.m, b.n_classes, cfg.n_max, cfg.m_max, cfg.k_max
            )));
        }
    }
    Ok(())
}
