use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::{mean_std, preamble, read_preamble, Algo};
use crate::data::{sample_block, train_test_split, Dataset, DEFAULT_M_MAX, DEFAULT_N_MAX, DEFAULT_TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::generate::{block_tree_to_dataset, vote};
use crate::seed;

pub const EVAL_FORMAT: &str = "metatree-eval 1";

/// Ensemble sizes used by default: 1, 5, 10, 20, ..., 100.
pub fn default_sizes() -> Vec<usize> {
    let mut s = vec![1, 5];
    s.extend((1..=10).map(|k| k * 10));
    s
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub sizes: Vec<usize>,
    pub depth: usize,
    pub runs: usize,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub train_fraction: f64,
    /// Record per-tree fit time (makes the report non-deterministic).
    pub timing: bool,
}

impl EvalConfig {
    pub fn new(sizes: Vec<usize>, depth: usize, runs: usize, seed: u64) -> Self {
        EvalConfig {
            sizes,
            depth,
            runs,
            seed,
            n: DEFAULT_N_MAX,
            m: DEFAULT_M_MAX,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            timing: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::validation("ensemble sizes must be positive and non-empty"));
        }
        if self.runs == 0 {
            return Err(Error::validation("runs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub algo: String,
    pub dataset: String,
    pub size: usize,
    pub run: usize,
    pub accuracy: f64,
    /// Mean milliseconds per fitted tree, when timing was requested.
    pub fit_ms: Option<f64>,
}

/// Fingerprint of the block handed to one algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHash {
    pub dataset: usize,
    pub run: usize,
    pub block: usize,
    pub algo: usize,
    pub hash: u64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub algos: Vec<String>,
    pub datasets: Vec<String>,
    pub sizes: Vec<usize>,
    pub runs: usize,
    pub depth: usize,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
    /// Empty for reports read back from CSV.
    pub block_hashes: Vec<BlockHash>,
}

/// Sample-fit-vote protocol: per dataset and run, a fresh train/test split
/// and one sequence of blocks shared by every algorithm.
pub fn evaluate(algos: &[Algo], datasets: &[Dataset], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if algos.is_empty() || datasets.is_empty() {
        return Err(Error::validation("evaluate needs at least one algorithm and one dataset"));
    }
    for a in algos {
        a.check_depth(cfg.depth)?;
    }
    let max_size = *cfg.sizes.iter().max().unwrap();
    let jobs: Vec<(usize, usize)> =
        (0..datasets.len()).flat_map(|d| (0..cfg.runs).map(move |r| (d, r))).collect();
    let parts: Vec<(Vec<EvalRow>, Vec<BlockHash>)> = jobs
        .par_iter()
        .map(|&(d, r)| {
            let ds = &datasets[d];
            let path = [d as u64, r as u64];
            let (train, test) = train_test_split(ds, cfg.train_fraction, seed::derive(cfg.seed, &[path[0], path[1], 0]))?;
            let fits: Vec<Vec<(crate::tree::DecisionTree, BlockHash, f64)>> = (0..max_size)
                .into_par_iter()
                .map(|k| {
                    let b = sample_block(&train, cfg.n, cfg.m, seed::derive(cfg.seed, &[path[0], path[1], 1, k as u64]))?;
                    let tree_seed = seed::derive(cfg.seed, &[path[0], path[1], 2, k as u64]);
                    algos
                        .iter()
                        .enumerate()
                        .map(|(a, algo)| {
                            let hash = BlockHash { dataset: d, run: r, block: k, algo: a, hash: b.fingerprint() };
                            let t0 = Instant::now();
                            let t = algo.fit(&b, cfg.depth, tree_seed)?;
                            let ms = t0.elapsed().as_secs_f64() * 1e3;
                            Ok((block_tree_to_dataset(&t, &b), hash, ms))
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            let mut rows = Vec::new();
            for (a, algo) in algos.iter().enumerate() {
                let trees: Vec<_> = fits.iter().map(|f| f[a].0.clone()).collect();
                let fit_ms = cfg.timing.then(|| fits.iter().map(|f| f[a].2).sum::<f64>() / max_size as f64);
                for &s in &cfg.sizes {
                    let pred = vote(&trees[..s], &test.x, test.n_features, test.n_classes)?;
                    let hits = pred.iter().zip(&test.y).filter(|(p, y)| p == y).count();
                    rows.push(EvalRow {
                        algo: algo.name(),
                        dataset: ds.name.clone(),
                        size: s,
                        run: r,
                        accuracy: hits as f64 / test.y.len() as f64,
                        fit_ms,
                    });
                }
            }
            let hashes = fits.iter().flat_map(|f| f.iter().map(|x| x.1)).collect();
            Ok((rows, hashes))
        })
        .collect::<Result<_>>()?;
    let (rows, hashes): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(EvalReport {
        algos: algos.iter().map(Algo::name).collect(),
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        sizes: cfg.sizes.clone(),
        runs: cfg.runs,
        depth: cfg.depth,
        seed: cfg.seed,
        rows: rows.into_iter().flatten().collect(),
        block_hashes: hashes.into_iter().flatten().collect(),
    })
}

impl EvalReport {
    /// True when every algorithm saw bit-identical blocks within each run.
    pub fn is_paired(&self) -> bool {
        let mut seen: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
        self.block_hashes.iter().all(|h| *seen.entry((h.dataset, h.run, h.block)).or_insert(h.hash) == h.hash)
    }

    /// Accuracies over runs for one cell of the report.
    pub fn accuracies(&self, algo: &str, dataset: &str, size: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.algo == algo && r.dataset == dataset && r.size == size)
            .map(|r| r.accuracy)
            .collect()
    }

    /// Mean and population standard deviation across runs.
    pub fn summary(&self, algo: &str, dataset: &str, size: usize) -> Option<(f64, f64)> {
        let v = self.accuracies(algo, dataset, size);
        (!v.is_empty()).then(|| mean_std(&v))
    }

    pub fn to_csv(&self, command: &str) -> Result<String> {
        let mut out = preamble(
            EVAL_FORMAT,
            command,
            &[
                ("depth", self.depth.to_string()),
                ("runs", self.runs.to_string()),
                ("seed", self.seed.to_string()),
                ("sizes", join(&self.sizes)),
            ],
        );
        let timing = self.rows.iter().any(|r| r.fit_ms.is_some());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["algo", "dataset", "size", "run", "accuracy"];
        if timing {
            header.push("fit_ms");
        }
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.algo.clone(), r.dataset.clone(), r.size.to_string(), r.run.to_string(), r.accuracy.to_string()];
            if timing {
                rec.push(r.fit_ms.map(|v| format!("{v:.3}")).unwrap_or_default());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        out.push_str(&String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv is utf-8"));
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<EvalReport> {
        let meta = read_preamble(text);
        let get = |k: &str| meta.iter().find(|(a, _)| a == k).map(|(_, v)| v.as_str());
        match get("format") {
            Some(EVAL_FORMAT) => {}
            other => return Err(Error::Format(format!("expected '{EVAL_FORMAT}' report, found {other:?}"))),
        }
        let num = |k: &str| -> Result<u64> {
            get(k)
                .ok_or_else(|| Error::Format(format!("report header lacks '{k}'")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad '{k}' in report header")))
        };
        let mut rep = EvalReport {
            depth: num("depth")? as usize,
            runs: num("runs")? as usize,
            seed: num("seed")?,
            ..Default::default()
        };
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format(format!("report row {} is short", line + 1)));
            let bad = |what: &str| Error::Format(format!("report row {}: bad {what}", line + 1));
            let row = EvalRow {
                algo: field(0)?.to_string(),
                dataset: field(1)?.to_string(),
                size: field(2)?.parse().map_err(|_| bad("size"))?,
                run: field(3)?.parse().map_err(|_| bad("run"))?,
                accuracy: field(4)?.parse().map_err(|_| bad("accuracy"))?,
                fit_ms: rec.get(5).filter(|s| !s.is_empty()).map(|s| s.parse()).transpose().map_err(|_| bad("fit_ms"))?,
            };
            if !(0.0..=1.0).contains(&row.accuracy) {
                return Err(bad("accuracy (outside [0, 1])"));
            }
            push_unique(&mut rep.algos, &row.algo);
            push_unique(&mut rep.datasets, &row.dataset);
            if !rep.sizes.contains(&row.size) {
                rep.sizes.push(row.size);
            }
            rep.rows.push(row);
        }
        Ok(rep)
    }

    /// Accuracy-versus-ensemble-size curve: mean and std per algorithm,
    /// dataset and size.
    pub fn curve_csv(&self, command: &str) -> String {
        let mut out = preamble(EVAL_FORMAT, command, &[("table", "curve".into())]);
        out.push_str("algo,dataset,size,mean,std\n");
        for a in &self.algos {
            for d in &self.datasets {
                for &s in &self.sizes {
                    if let Some((m, sd)) = self.summary(a, d, s) {
                        let _ = writeln!(out, "{a},{d},{s},{m},{sd}");
                    }
                }
            }
        }
        out
    }
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
