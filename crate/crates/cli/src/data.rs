use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use metatree::data::{load_csv, write_csv, Dataset, LabelColumn, XorSpec};
use metatree::seed;
use metatree::train::{gen_corpus_with, CorpusSpec};
use metatree::tree::DEFAULT_LAMBDA;

use crate::settings::Settings;
use crate::{CliError, Ctx};

/// Loads every `.csv` in a directory (sorted by name) or a comma-separated
/// list of files.
pub fn load_datasets(spec: &str, label: &LabelColumn) -> Result<Vec<Dataset>, CliError> {
    let p = Path::new(spec);
    let files: Vec<PathBuf> = if p.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        v
    } else {
        spec.split(',').filter(|s| !s.is_empty()).map(PathBuf::from).collect()
    };
    if files.is_empty() {
        return Err(CliError::Usage(format!("no datasets found in '{spec}'")));
    }
    files.iter().map(|f| load_csv(f, label).map_err(|e| with_path(e, f))).collect()
}

pub fn load_dataset(path: &str, label: &LabelColumn) -> Result<Dataset, CliError> {
    load_csv(path, label).map_err(|e| with_path(e, Path::new(path)))
}

fn with_path(e: metatree::Error, path: &Path) -> CliError {
    match e {
        metatree::Error::Io(io) => CliError::Core(metatree::Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        ))),
        other => CliError::Core(other),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenXorArgs {
    /// Nesting level (1 or 2).
    #[arg(long)]
    level: Option<u8>,
    /// Label-flip probability.
    #[arg(long)]
    noise: Option<f64>,
    /// Rows per dataset.
    #[arg(long)]
    n: Option<usize>,
    /// Uniform noise features added to the two signal features.
    #[arg(long)]
    noise_dims: Option<usize>,
    /// Number of datasets.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn gen_xor(a: GenXorArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let level = s.or("level", a.level, 1)?;
    if !(level == 1 || level == 2) {
        return Err(CliError::Usage(format!("--level must be 1 or 2, got {level}")));
    }
    let noise = s.or("noise", a.noise, 0.15)?;
    let n = s.or("n", a.n, 1000)?;
    let dims = s.or("noise_dims", a.noise_dims, 8)?;
    let count = s.or("count", a.count, 1)?;
    let out: PathBuf = s.req("out", a.out)?;
    let seed = s.or("seed", a.seed, 0)?;
    s.finish()?;
    fs::create_dir_all(&out)?;
    let width = count.saturating_sub(1).to_string().len().max(4);
    let mut manifest = ctx.header("metatree-xor 1");
    for i in 0..count {
        let spec = XorSpec::new(level, noise, dims, seed::derive(seed, &[i as u64])).materialize()?;
        let mut ds = spec.sample(n, 0)?;
        let stem = format!("xor-l{level}-{i:0width$}");
        ds.name = stem.clone();
        write_csv(&ds, out.join(format!("{stem}.csv")))?;
        let spec_text = format!("# command: {}\n{}", ctx.command, spec.to_text());
        fs::write(out.join(format!("{stem}.spec")), spec_text)?;
        manifest.push_str(&format!("{stem}.csv\t{stem}.spec\n"));
    }
    fs::write(out.join("manifest.txt"), manifest)?;
    outln!("wrote {count} XOR level-{level} datasets ({n} rows, {} features) to {}", 2 + dims, out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct BuildCorpusArgs {
    /// Directory of CSV files or a comma-separated list.
    #[arg(long)]
    datasets: Option<String>,
    /// Label column: a name, a 0-based index, or `last`.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    per_dataset: Option<usize>,
    /// Per-leaf penalty of the exact depth-2 teacher.
    #[arg(long)]
    lambda: Option<f64>,
    /// Block rows.
    #[arg(long)]
    n: Option<usize>,
    /// Block columns.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn label_column(s: &Settings, flag: Option<String>) -> Result<LabelColumn, CliError> {
    Ok(s.or("label", flag, "last".to_string())?.parse().expect("infallible"))
}

pub fn build_corpus(a: BuildCorpusArgs, s: &Settings, ctx: &Ctx) -> Result<(), CliError> {
    let label = label_column(s, a.label)?;
    let datasets = load_datasets(&s.req::<String>("datasets", a.datasets)?, &label)?;
    let base = CorpusSpec::new(s.or("per_dataset", a.per_dataset, 100)?);
    let spec = CorpusSpec {
        lambda: s.or("lambda", a.lambda, DEFAULT_LAMBDA)?,
        n: s.or("n", a.n, base.n)?,
        m: s.or("m", a.m, base.m)?,
        ..base
    };
    let out: PathBuf = s.req("out", a.out)?;
    let seed = s.or("seed", a.seed, 0)?;
    s.finish()?;
    let mut corpus = gen_corpus_with(&datasets, &spec, seed);
    corpus.header.push(("command".into(), ctx.command.clone()));
    corpus.save(&out)?;
    let skipped = corpus.manifest.iter().filter(|m| m.note.starts_with("skipped")).count();
    outln!(
        "corpus: {} pairs ({} examples) from {} datasets, {skipped} skipped -> {}",
        corpus.pair_count(),
        corpus.len(),
        datasets.len(),
        out.display()
    );
    Ok(())
}
