//! Teacher corpus: depth-2 optimal and greedy trees fit on sampled blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::{Container, TensorData};
use crate::data::{sample_block, train_test_split, Block, Dataset, FeatureKind, XorSpec, DEFAULT_M_MAX, DEFAULT_N_MAX, DEFAULT_TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::seed;
use crate::tree::{accuracy, build_greedy, build_optimal_depth2, parse_tree, tree_to_text, Criterion, DecisionTree, Provenance, DEFAULT_LAMBDA};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Held-out rows of the source dataset, restricted to the block's columns
/// (column `b` here is block column `b`).
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub n_cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub block: Arc<Block>,
    pub teacher: DecisionTree,
    pub teacher_tag: Provenance,
    pub test_accuracy: f64,
    pub source_dataset: String,
    pub seed: u64,
    /// Examples fit on the same block share a pair id.
    pub pair: usize,
    pub held_out: Arc<HeldOut>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub dataset: String,
    pub requested: usize,
    pub produced: usize,
    pub seed: u64,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub examples: Vec<TrainingExample>,
    pub manifest: Vec<ManifestEntry>,
    /// Free-form header lines (e.g. the generating command line).
    pub header: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub per_dataset: usize,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub train_fraction: f64,
}

impl CorpusSpec {
    pub fn new(per_dataset: usize) -> Self {
        CorpusSpec {
            per_dataset,
            n: DEFAULT_N_MAX,
            m: DEFAULT_M_MAX,
            lambda: DEFAULT_LAMBDA,
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }
}

/// Both teachers on one block, or the reason the repetition was dropped.
fn make_pair(ds: &Dataset, spec: &CorpusSpec, pair_seed: u64) -> Result<(Arc<Block>, Arc<HeldOut>, [(DecisionTree, f64); 2])> {
    let (train, test) = train_test_split(ds, spec.train_fraction, seed::derive(pair_seed, &[0]))?;
    let block = sample_block(&train, spec.n, spec.m, seed::derive(pair_seed, &[1]))?;
    let cols: Vec<usize> = (0..block.m).map(|j| block.source_cols[j].unwrap_or(0)).collect();
    let mut x = Vec::with_capacity(test.n_rows() * block.m);
    for i in 0..test.n_rows() {
        x.extend(cols.iter().map(|&j| test.value(i, j)));
    }
    let held = HeldOut { x, y: test.y.clone(), n_cols: block.m };
    let opt = build_optimal_depth2(&block, spec.lambda)?;
    let gini = build_greedy(&block, 2, Criterion::Gini)?;
    let a_opt = accuracy(&opt, &held.x, held.n_cols, &held.y)?;
    let a_gini = accuracy(&gini, &held.x, held.n_cols, &held.y)?;
    Ok((Arc::new(block), Arc::new(held), [(opt, a_opt), (gini, a_gini)]))
}

/// Default block shape, penalty and split fraction.
pub fn gen_corpus(datasets: &[Dataset], per_dataset: usize, seed: u64) -> Corpus {
    gen_corpus_with(datasets, &CorpusSpec::new(per_dataset), seed)
}

/// For every dataset and repetition: split, sample a block, fit both
/// teachers and score them on the held-out part. Repetitions run in
/// parallel; the result does not depend on the thread count.
pub fn gen_corpus_with(datasets: &[Dataset], spec: &CorpusSpec, seed: u64) -> Corpus {
    let mut corpus = Corpus::default();
    for (d, ds) in datasets.iter().enumerate() {
        let ds_seed = seed::derive(seed, &[d as u64]);
        let results: Vec<(u64, Result<_>)> = (0..spec.per_dataset)
            .into_par_iter()
            .map(|r| {
                let s = seed::derive(ds_seed, &[r as u64]);
                (s, make_pair(ds, spec, s))
            })
            .collect();
        let mut produced = 0;
        let mut failures: Vec<String> = Vec::new();
        for (s, res) in results {
            match res {
                Ok((block, held, teachers)) => {
                    let pair = corpus.examples.len() / 2;
                    for (tree, acc) in teachers {
                        corpus.examples.push(TrainingExample {
                            block: block.clone(),
                            teacher_tag: tree.provenance,
                            teacher: tree,
                            test_accuracy: acc,
                            source_dataset: ds.name.clone(),
                            seed: s,
                            pair,
                            held_out: held.clone(),
                        });
                    }
                    produced += 1;
                }
                Err(e) => failures.push(e.to_string()),
            }
        }
        let note = match failures.first() {
            None => String::new(),
            Some(first) if produced == 0 => format!("skipped: {first}"),
            Some(first) => format!("{} repetitions dropped: {first}", failures.len()),
        };
        corpus.manifest.push(ManifestEntry {
            dataset: ds.name.clone(),
            requested: spec.per_dataset,
            produced,
            seed: ds_seed,
            note,
        });
    }
    corpus
}

/// `count` XOR datasets of `rows` points each with independently drawn
/// boundaries.
pub fn xor_datasets(level: u8, noise: f64, extra_dims: usize, count: usize, rows: usize, seed: u64) -> Result<Vec<Dataset>> {
    (0..count)
        .map(|k| {
            let spec = XorSpec::new(level, noise, extra_dims, seed::derive(seed, &[k as u64])).materialize()?;
            spec.sample(rows, 0)
        })
        .collect()
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn pair_count(&self) -> usize {
        self.examples.iter().map(|e| e.pair + 1).max().unwrap_or(0)
    }

    pub fn count_tag(&self, tag: Provenance) -> usize {
        self.examples.iter().filter(|e| e.teacher_tag == tag).count()
    }

    /// Writes `manifest.txt` and one container per pair under `records/`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("records"))?;
        let mut man = String::new();
        let _ = writeln!(man, "# metatree-corpus {CORPUS_FORMAT_VERSION}");
        for (k, v) in &self.header {
            let _ = writeln!(man, "# {k} {}", v.replace('\n', " "));
        }
        let _ = writeln!(man, "# pairs {}", self.pair_count());
        for m in &self.manifest {
            let _ = writeln!(man, "dataset\t{}\t{}\t{}\t{}\t{}", m.dataset, m.requested, m.produced, m.seed, m.note);
        }
        let mut start = 0;
        while start < self.examples.len() {
            let pair = self.examples[start].pair;
            let end = start + self.examples[start..].iter().take_while(|e| e.pair == pair).count();
            record(&self.examples[start..end])?.save(dir.join("records").join(format!("{pair:07}.mtc")))?;
            let _ = writeln!(man, "record\t{pair:07}.mtc");
            start = end;
        }
        fs::write(dir.join("manifest.txt"), man)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut corpus = Corpus::default();
        let mut version_ok = false;
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# ") {
                let (k, v) = h.split_once(' ').unwrap_or((h, ""));
                match k {
                    "metatree-corpus" => version_ok = v.trim().parse::<u32>().ok() == Some(CORPUS_FORMAT_VERSION),
                    "pairs" => {}
                    _ => corpus.header.push((k.to_string(), v.to_string())),
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match f.as_slice() {
                ["dataset", name, req, prod, s, note] => corpus.manifest.push(ManifestEntry {
                    dataset: name.to_string(),
                    requested: parse_num(req)?,
                    produced: parse_num(prod)?,
                    seed: parse_num(s)?,
                    note: note.to_string(),
                }),
                ["record", file] => {
                    let pair = corpus.pair_count();
                    let c = Container::load(dir.join("records").join(file))?;
                    corpus.examples.extend(unrecord(&c, pair)?);
                }
                [""] => {}
                _ => return Err(Error::format(format!("corpus manifest: unexpected line '{line}'"))),
            }
        }
        if !version_ok {
            return Err(Error::format("corpus manifest lacks a supported version header"));
        }
        Ok(corpus)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(format!("corpus manifest: bad number '{s}'")))
}

fn bools(v: &[bool]) -> Vec<i64> {
    v.iter().map(|&b| b as i64).collect()
}

fn opt_idx(v: &[Option<usize>]) -> Vec<i64> {
    v.iter().map(|o| o.map_or(-1, |i| i as i64)).collect()
}

fn record(examples: &[TrainingExample]) -> Result<Container> {
    let e0 = &examples[0];
    let b = &e0.block;
    let mut c = Container::new();
    c.set_meta("format", format!("metatree-corpus-record {CORPUS_FORMAT_VERSION}"));
    c.set_meta("dataset", e0.source_dataset.clone());
    c.set_meta("seed", e0.seed.to_string());
    c.set_meta("n_classes", b.n_classes.to_string());
    c.set_meta("teachers", examples.iter().map(|e| e.teacher_tag.as_str()).collect::<Vec<_>>().join(" "));
    for e in examples {
        let tag = e.teacher_tag.as_str();
        c.set_meta(&format!("teacher.{tag}"), tree_to_text(&e.teacher, &[]));
        c.set_meta(&format!("accuracy.{tag}"), format!("{}", e.test_accuracy));
    }
    let (n, m) = (b.n, b.m);
    c.push("block/raw_x", &[n, m], TensorData::F64(b.raw_x.clone()));
    c.push("block/xn", &[n, m], TensorData::F64(b.xn.clone()));
    c.push_i64("block/y", &[n], b.y.iter().map(|&v| v as i64).collect());
    c.push_i64("block/row_valid", &[n], bools(&b.row_valid));
    c.push_i64("block/col_valid", &[m], bools(&b.col_valid));
    c.push("block/col_means", &[m], TensorData::F64(b.col_means.clone()));
    c.push("block/col_stds", &[m], TensorData::F64(b.col_stds.clone()));
    let kinds = b.col_kinds.iter().map(|k| (*k == FeatureKind::Categorical) as i64).collect();
    c.push_i64("block/col_kinds", &[m], kinds);
    c.push_i64("block/source_rows", &[n], opt_idx(&b.source_rows));
    c.push_i64("block/source_cols", &[m], opt_idx(&b.source_cols));
    let h = &e0.held_out;
    c.push("test/x", &[h.y.len(), h.n_cols], TensorData::F64(h.x.clone()));
    c.push_i64("test/y", &[h.y.len()], h.y.iter().map(|&v| v as i64).collect());
    Ok(c)
}

fn unrecord(c: &Container, pair: usize) -> Result<Vec<TrainingExample>> {
    let fmt = c.require_meta("format")?;
    if fmt != format!("metatree-corpus-record {CORPUS_FORMAT_VERSION}") {
        return Err(Error::format(format!("unsupported corpus record '{fmt}'")));
    }
    let f64v = |k: &str| c.f64s(k).map(|(s, v)| (s.to_vec(), v.to_vec()));
    let usizes = |k: &str| -> Result<Vec<usize>> {
        let (_, v) = c.i64s(k)?;
        v.iter().map(|&x| usize::try_from(x).map_err(|_| Error::format(format!("{k}: negative value")))).collect()
    };
    let flags = |k: &str| c.i64s(k).map(|(_, v)| v.iter().map(|&x| x != 0).collect::<Vec<bool>>());
    let opts = |k: &str| c.i64s(k).map(|(_, v)| v.iter().map(|&x| usize::try_from(x).ok()).collect::<Vec<_>>());
    let (shape, raw_x) = f64v("block/raw_x")?;
    if shape.len() != 2 {
        return Err(Error::format("block/raw_x must be a matrix"));
    }
    let (n, m) = (shape[0], shape[1]);
    let block = Block {
        n,
        m,
        raw_x,
        xn: f64v("block/xn")?.1,
        y: usizes("block/y")?,
        n_classes: parse_num(c.require_meta("n_classes")?)?,
        col_means: f64v("block/col_means")?.1,
        col_stds: f64v("block/col_stds")?.1,
        row_valid: flags("block/row_valid")?,
        col_valid: flags("block/col_valid")?,
        col_kinds: flags("block/col_kinds")?
            .into_iter()
            .map(|cat| if cat { FeatureKind::Categorical } else { FeatureKind::Numeric })
            .collect(),
        source_rows: opts("block/source_rows")?,
        source_cols: opts("block/source_cols")?,
    };
    let lens = [block.xn.len(), block.y.len() * m, block.row_valid.len() * m, block.col_valid.len() * n];
    if lens.iter().any(|&l| l != n * m) {
        return Err(Error::format("corpus record arrays disagree with the block shape"));
    }
    let (ts, tx) = f64v("test/x")?;
    let held = HeldOut { x: tx, y: usizes("test/y")?, n_cols: ts.get(1).copied().unwrap_or(m) };
    let block = Arc::new(block);
    let held = Arc::new(held);
    let seed = parse_num(c.require_meta("seed")?)?;
    let dataset = c.require_meta("dataset")?.to_string();
    let mut out = Vec::new();
    for tag in c.require_meta("teachers")?.split_whitespace() {
        let teacher = parse_tree(c.require_meta(&format!("teacher.{tag}"))?)?;
        out.push(TrainingExample {
            block: block.clone(),
            teacher_tag: tag.parse()?,
            teacher,
            test_accuracy: parse_num(c.require_meta(&format!("accuracy.{tag}"))?)?,
            source_dataset: dataset.clone(),
            seed,
            pair,
            held_out: held.clone(),
        });
    }
    Ok(out)
}
