use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use metatree::analysis::{
    bias_variance, default_sizes, evaluate, layer_probe_study, preference_study, preamble, rank_table, sample_blocks,
    Algo, BiasVarianceConfig, EvalConfig, EvalReport, PreferenceConfig,
};
use metatree::data::sample_block;
use metatree::generate::{block_tree_to_dataset, generate_tree};
use metatree::model::Model;
use metatree::seed;
use metatree::tree::{tree_to_dot, tree_to_text};

use crate::data::{label_column, load_dataset, load_datasets, write_text};
use crate::settings::Settings;
use crate::{CliError, Ctx};

fn load_model(path: &Path) -> Result<Arc<Model>, CliError> {
    Model::load(path).map(Arc::new).map_err(|e| match e {
        metatree::Error::Io(io) => {
            metatree::Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))).into()
        }
        other => other.into(),
    })
}

/// `a.csv` → `a.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

#[derive(Args, Debug)]
pub struct GenTreeArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tree file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a Graphviz rendering next to the tree (or to stdout).
    #[arg(long)]
    emit_dot: bool,
}

pub fn gen_tree(a: GenTreeArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let model = load_model(&s.req::<PathBuf>("model", a.model)?)?;
    let label = label_column(s, a.label)?;
    let ds = load_dataset(&s.req::<String>("data", a.data)?, &label)?;
    let depth = s.or("depth", a.depth, 2)?;
    let seed = s.or("seed", a.seed, 0)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    let emit_dot = s.or("emit_dot", a.emit_dot.then_some(true), false)?;
    s.finish()?;
    let cfg = model.config();
    let b = sample_block(&ds, cfg.n_max, cfg.m_max, seed::derive(seed, &[0]))?;
    let t = block_tree_to_dataset(&generate_tree(model.as_ref(), &b, depth, seed::derive(seed, &[1]))?, &b);
    let text = tree_to_text(&t, &[("command", &ctx.command), ("dataset", &ds.name)]);
    let dot = emit_dot.then(|| tree_to_dot(&t, &ds.feature_names, &ds.class_names));
    match out {
        Some(p) => {
            write_text(&p, &text)?;
            if let Some(d) = &dot {
                write_text(&sibling(&p, "dot"), d)?;
            }
            eprintln!("tree with {} splits -> {}", t.split_count(), p.display());
        }
        None => {
            out!("{text}");
            if let Some(d) = dot {
                out!("{d}");
            }
        }
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| CliError::Usage(format!("bad {what} '{x}'"))))
        .collect()
}

fn algos(list: &str, model: Option<&PathBuf>) -> Result<Vec<Algo>, CliError> {
    let model = model.map(|p| load_model(p)).transpose()?;
    list.split(',').map(|n| Algo::parse(n.trim(), model.as_ref()).map_err(|e| CliError::Usage(e.to_string()))).collect()
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Comma-separated: learned, greedy-gini, greedy-entropy, greedy-gainratio, optimal-d2.
    #[arg(long)]
    algos: Option<String>,
    /// Checkpoint used by `learned`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    datasets: Option<String>,
    #[arg(long)]
    label: Option<String>,
    /// Comma-separated ensemble sizes.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Add a per-tree fit time column (not reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Report CSV; an accuracy-curve table is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let model: Option<PathBuf> = s.get("model", a.model)?;
    let algos = algos(&s.req::<String>("algos", a.algos)?, model.as_ref())?;
    let label = label_column(s, a.label)?;
    let datasets = load_datasets(&s.req::<String>("datasets", a.datasets)?, &label)?;
    let sizes = match s.get::<String>("sizes", a.sizes)? {
        Some(v) => parse_list(&v, "ensemble size")?,
        None => default_sizes(),
    };
    let base = EvalConfig::new(sizes, s.or("depth", a.depth, 2)?, s.or("runs", a.runs, 5)?, s.or("seed", a.seed, 0)?);
    let cfg = EvalConfig {
        n: s.or("n", a.n, base.n)?,
        m: s.or("m", a.m, base.m)?,
        timing: s.or("timing", a.timing.then_some(true), false)?,
        ..base
    };
    let out: PathBuf = s.req("out", a.out)?;
    s.finish()?;
    let rep = evaluate(&algos, &datasets, &cfg)?;
    write_text(&out, &rep.to_csv(&ctx.command)?)?;
    write_text(&sibling(&out, "curve.csv"), &rep.curve_csv(&ctx.command))?;
    let size = *rep.sizes.iter().max().expect("sizes are non-empty");
    outln!("mean accuracy over {} runs at ensemble size {size}:", rep.runs);
    for d in &rep.datasets {
        for al in &rep.algos {
            let (m, sd) = rep.summary(al, d, size).expect("every cell is filled");
            outln!("  {d:<24} {al:<18} {m:.4} ± {sd:.4}");
        }
    }
    outln!("report -> {}", out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct RankArgs {
    /// Report CSV from `eval`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Ensemble size to rank at (default: the largest).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn rank(a: RankArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let path: PathBuf = s.req("report", a.report)?;
    let size: Option<usize> = s.get("size", a.size)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    s.finish()?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let table = rank_table(&EvalReport::from_csv(&text)?, size)?;
    out!("{}", table.to_text());
    if let Some(p) = out {
        write_text(&p, &table.to_csv(&ctx.command))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BiasVarianceArgs {
    #[arg(long)]
    algo: Option<String>,
    /// Checkpoint used by `learned`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn bias_variance_cmd(a: BiasVarianceArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let model: Option<PathBuf> = s.get("model", a.model)?;
    let name: String = s.req("algo", a.algo)?;
    let algo = algos(&name, model.as_ref())?.remove(0);
    let label = label_column(s, a.label)?;
    let ds = load_dataset(&s.req::<String>("dataset", a.dataset)?, &label)?;
    let reps = s.or("reps", a.reps, 100)?;
    let base = BiasVarianceConfig::default();
    let cfg = BiasVarianceConfig {
        depth: s.or("depth", a.depth, base.depth)?,
        n: s.or("n", a.n, base.n)?,
        m: s.or("m", a.m, base.m)?,
        ..base
    };
    let seed = s.or("seed", a.seed, 0)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    s.finish()?;
    let bv = bias_variance(&algo, &ds, reps, &cfg, seed)?;
    outln!("{} on {}: bias {:.6}  variance {:.6}  ({} fits, {} test points)", algo.name(), ds.name, bv.bias, bv.variance, bv.repetitions, bv.test_points);
    if let Some(p) = out {
        let mut text = preamble("metatree-bias-variance 1", &ctx.command, &[]);
        text.push_str("algo,dataset,repetitions,test_points,bias,variance\n");
        text.push_str(&format!("{},{},{},{},{},{}\n", algo.name(), ds.name, bv.repetitions, bv.test_points, bv.bias, bv.variance));
        write_text(&p, &text)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PreferArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    datasets: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    blocks_per: Option<usize>,
    /// Drop blocks whose teachers correlate above this.
    #[arg(long)]
    max_teacher_corr: Option<f64>,
    /// Leave blocks with at most this accuracy gap out of the regression.
    #[arg(long)]
    min_acc_gap: Option<f64>,
    /// Low/medium bucket boundary.
    #[arg(long)]
    low: Option<f64>,
    /// Medium/high bucket boundary.
    #[arg(long)]
    high: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-block CSV; a text summary is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn prefer(a: PreferArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let model = load_model(&s.req::<PathBuf>("model", a.model)?)?;
    let label = label_column(s, a.label)?;
    let datasets = load_datasets(&s.req::<String>("datasets", a.datasets)?, &label)?;
    let base = PreferenceConfig::default();
    let (n, m) = (model.config().n_max.min(base.n), model.config().m_max.min(base.m));
    let cfg = PreferenceConfig {
        blocks_per: s.or("blocks_per", a.blocks_per, base.blocks_per)?,
        max_teacher_corr: s.or("max_teacher_corr", a.max_teacher_corr, base.max_teacher_corr)?,
        min_acc_gap: s.or("min_acc_gap", a.min_acc_gap, base.min_acc_gap)?,
        buckets: (s.or("low", a.low, base.buckets.0)?, s.or("high", a.high, base.buckets.1)?),
        n,
        m,
        ..base
    };
    if !(cfg.buckets.0 <= cfg.buckets.1) {
        return Err(CliError::Usage("bucket boundaries must satisfy low <= high".into()));
    }
    let seed = s.or("seed", a.seed, 0)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    s.finish()?;
    let st = preference_study(model.as_ref(), &datasets, &cfg, seed)?;
    let summary = st.summary();
    out!("{summary}");
    if let Some(p) = out {
        write_text(&p, &st.to_csv(&ctx.command))?;
        write_text(&sibling(&p, "summary.txt"), &format!("# command = {}\n{summary}", ctx.command))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    datasets: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    blocks_per: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn probe(a: ProbeArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let model = load_model(&s.req::<PathBuf>("model", a.model)?)?;
    let label = label_column(s, a.label)?;
    let datasets = load_datasets(&s.req::<String>("datasets", a.datasets)?, &label)?;
    let per = s.or("blocks_per", a.blocks_per, 20)?;
    let seed = s.or("seed", a.seed, 0)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    s.finish()?;
    let cfg = model.config();
    let blocks = sample_blocks(&datasets, per, cfg.n_max, cfg.m_max, seed)?;
    let st = layer_probe_study(&model, &blocks)?;
    outln!("mean correlation with the final split over {} blocks:", st.blocks);
    for (l, c) in st.per_layer.iter().enumerate() {
        let name = if l == 0 { "embedding".to_string() } else { format!("layer {l}") };
        outln!("  {name:<10} {c:.4}");
    }
    if let Some(p) = out {
        write_text(&p, &st.to_csv(&ctx.command))?;
    }
    Ok(())
}
