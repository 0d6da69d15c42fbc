use std::fmt::Write as _;

use rayon::prelude::*;

use super::{pearson, preamble};
use crate::data::{sample_block, train_test_split, Block, Dataset, DEFAULT_M_MAX, DEFAULT_N_MAX, DEFAULT_TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::generate::{block_tree_to_dataset, SplitScorer};
use crate::model::{score_to_split, Model};
use crate::seed;
use crate::tree::{accuracy, build_greedy, build_optimal_depth2, Criterion, DecisionTree, Split, DEFAULT_LAMBDA};

pub const PREFERENCE_FORMAT: &str = "metatree-prefer 1";
pub const PROBE_FORMAT: &str = "metatree-probe 1";

/// Pearson correlation of two binary indicators plus whether the
/// constant-indicator convention applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

/// Pearson correlation of two indicator vectors, computed from integer
/// counts so that it is exactly symmetric. When either side is constant the
/// result is 1 if both are the same constant and 0 otherwise.
pub fn indicator_correlation(a: &[bool], b: &[bool]) -> Correlation {
    assert_eq!(a.len(), b.len(), "indicator lengths differ");
    let n = a.len() as i128;
    let na = a.iter().filter(|&&v| v).count() as i128;
    let nb = b.iter().filter(|&&v| v).count() as i128;
    let nab = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as i128;
    let (va, vb) = (na * (n - na), nb * (n - nb));
    if va == 0 || vb == 0 {
        let same = va == 0 && vb == 0 && (na == 0) == (nb == 0);
        return Correlation { value: if same { 1.0 } else { 0.0 }, degenerate: true };
    }
    let r = (n * nab - na * nb) as f64 / ((va * vb) as f64).sqrt();
    Correlation { value: r.clamp(-1.0, 1.0), degenerate: false }
}

/// Correlation between the left/right assignments two splits induce on the
/// rows of `x` (row-major, `n_cols` wide).
pub fn split_correlation(a: &Split, b: &Split, x: &[f64], n_cols: usize) -> Result<f64> {
    split_correlation_detail(a, b, x, n_cols).map(|c| c.value)
}

pub fn split_correlation_detail(a: &Split, b: &Split, x: &[f64], n_cols: usize) -> Result<Correlation> {
    if n_cols == 0 || x.len() % n_cols != 0 || x.len() / n_cols < 2 {
        return Err(Error::contract("split correlation needs a matrix with at least two rows"));
    }
    if a.feature >= n_cols || b.feature >= n_cols {
        return Err(Error::contract(format!("split feature out of range for {n_cols} columns")));
    }
    let ia: Vec<bool> = x.chunks(n_cols).map(|r| a.goes_left(r)).collect();
    let ib: Vec<bool> = x.chunks(n_cols).map(|r| b.goes_left(r)).collect();
    Ok(indicator_correlation(&ia, &ib))
}

/// Raw values of a block's valid rows, all `m` columns wide.
pub fn block_matrix(b: &Block) -> Vec<f64> {
    b.valid_rows().flat_map(|i| b.raw_x[i * b.m..(i + 1) * b.m].iter().copied()).collect()
}

fn block_correlation(b: &Block, s: &Split, t: &Split) -> Result<f64> {
    split_correlation(s, t, &block_matrix(b), b.m)
}

#[derive(Debug, Clone)]
pub struct PreferenceConfig {
    pub blocks_per: usize,
    pub n: usize,
    pub m: usize,
    pub train_fraction: f64,
    /// Blocks whose teachers correlate above this are dropped.
    pub max_teacher_corr: f64,
    /// Blocks whose teachers' accuracy gap is at most this are left out of
    /// the regression.
    pub min_acc_gap: f64,
    /// Low/medium and medium/high bucket boundaries.
    pub buckets: (f64, f64),
    pub lambda: f64,
    pub criterion: Criterion,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        PreferenceConfig {
            blocks_per: 100,
            n: DEFAULT_N_MAX,
            m: DEFAULT_M_MAX,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            max_teacher_corr: 0.7,
            min_acc_gap: 0.08,
            buckets: (1.0 / 3.0, 2.0 / 3.0),
            lambda: DEFAULT_LAMBDA,
            criterion: Criterion::Gini,
        }
    }
}

impl PreferenceConfig {
    /// `(kept in study, kept in regression)`.
    pub fn filters(&self, teacher_corr: f64, acc_greedy: f64, acc_optimal: f64) -> (bool, bool) {
        let study = teacher_corr <= self.max_teacher_corr;
        (study, study && (acc_greedy - acc_optimal).abs() > self.min_acc_gap)
    }

    /// 0 = low, 1 = medium, 2 = high.
    pub fn bucket(&self, corr: f64) -> usize {
        if corr < self.buckets.0 {
            0
        } else if corr < self.buckets.1 {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub dataset: String,
    pub block: usize,
    pub corr_model_greedy: f64,
    pub corr_model_optimal: f64,
    pub corr_teachers: f64,
    pub acc_greedy: f64,
    pub acc_optimal: f64,
    pub in_study: bool,
    pub in_regression: bool,
}

#[derive(Debug, Clone)]
pub struct PreferenceStudy {
    pub records: Vec<PreferenceRecord>,
    /// Blocks where a teacher produced no root split.
    pub skipped: usize,
    pub config: PreferenceConfig,
}

/// Root splits of the model and both teachers on one block, with the
/// teachers' depth-2 trees scored on held-out rows.
#[allow(clippy::too_many_arguments)]
pub fn preference_record(
    model: &dyn SplitScorer,
    b: &Block,
    test: &Dataset,
    cfg: &PreferenceConfig,
    dataset: &str,
    block: usize,
) -> Result<Option<PreferenceRecord>> {
    let choice = score_to_split(&model.scores(b, None)?, b, None)?;
    let greedy = build_greedy(b, 2, cfg.criterion)?;
    let optimal = build_optimal_depth2(b, cfg.lambda)?;
    let (Some(gs), Some(os)) = (greedy.root_split(), optimal.root_split()) else {
        return Ok(None);
    };
    let held_out = |t: &DecisionTree| accuracy(&block_tree_to_dataset(t, b), &test.x, test.n_features, &test.y);
    let (acc_greedy, acc_optimal) = (held_out(&greedy)?, held_out(&optimal)?);
    let corr_teachers = block_correlation(b, &gs, &os)?;
    let (in_study, in_regression) = cfg.filters(corr_teachers, acc_greedy, acc_optimal);
    Ok(Some(PreferenceRecord {
        dataset: dataset.to_string(),
        block,
        corr_model_greedy: block_correlation(b, &choice.split, &gs)?,
        corr_model_optimal: block_correlation(b, &choice.split, &os)?,
        corr_teachers,
        acc_greedy,
        acc_optimal,
        in_study,
        in_regression,
    }))
}

/// Which teacher the model's root split resembles, per block, against which
/// teacher generalizes better.
pub fn preference_study(
    model: &dyn SplitScorer,
    datasets: &[Dataset],
    cfg: &PreferenceConfig,
    seed: u64,
) -> Result<PreferenceStudy> {
    let (n, m) = model.block_shape();
    if cfg.n > n || cfg.m > m {
        return Err(Error::contract(format!("{}x{} blocks exceed the model's {n}x{m} capacity", cfg.n, cfg.m)));
    }
    let splits = datasets
        .iter()
        .enumerate()
        .map(|(d, ds)| train_test_split(ds, cfg.train_fraction, seed::derive(seed, &[d as u64, 0])))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..datasets.len()).flat_map(|d| (0..cfg.blocks_per).map(move |k| (d, k))).collect();
    let out = jobs
        .par_iter()
        .map(|&(d, k)| {
            let (train, test) = &splits[d];
            let b = sample_block(train, cfg.n, cfg.m, seed::derive(seed, &[d as u64, 1, k as u64]))?;
            preference_record(model, &b, test, cfg, &datasets[d].name, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = out.iter().filter(|r| r.is_none()).count();
    Ok(PreferenceStudy { records: out.into_iter().flatten().collect(), skipped, config: cfg.clone() })
}

/// Bucket counts `[low, medium, high]` of the model's correlation with one
/// teacher, among study blocks where one teacher generalizes better.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub better: &'static str,
    pub teacher: &'static str,
    pub counts: [usize; 3],
}

impl PreferenceStudy {
    pub fn bucket_table(&self) -> Vec<BucketRow> {
        let mut rows = Vec::new();
        for better in ["optimal", "greedy"] {
            for teacher in ["optimal", "greedy"] {
                let mut counts = [0; 3];
                for r in self.records.iter().filter(|r| r.in_study) {
                    let group = match r.acc_optimal.partial_cmp(&r.acc_greedy) {
                        Some(std::cmp::Ordering::Greater) => "optimal",
                        Some(std::cmp::Ordering::Less) => "greedy",
                        _ => continue,
                    };
                    if group != better {
                        continue;
                    }
                    let c = if teacher == "optimal" { r.corr_model_optimal } else { r.corr_model_greedy };
                    counts[self.config.bucket(c)] += 1;
                }
                rows.push(BucketRow { better, teacher, counts });
            }
        }
        rows
    }

    /// `(corr(model, greedy) − corr(model, optimal), acc_greedy − acc_optimal)`
    /// for blocks kept by both filters.
    pub fn scatter(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.in_regression)
            .map(|r| (r.corr_model_greedy - r.corr_model_optimal, r.acc_greedy - r.acc_optimal))
            .collect()
    }

    /// Pearson coefficient of the scatter; `None` with fewer than two points
    /// or no spread.
    pub fn scatter_pearson(&self) -> Option<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = self.scatter().into_iter().unzip();
        pearson(&x, &y)
    }

    pub fn to_csv(&self, command: &str) -> String {
        let c = &self.config;
        let mut out = preamble(
            PREFERENCE_FORMAT,
            command,
            &[
                ("max_teacher_corr", c.max_teacher_corr.to_string()),
                ("min_acc_gap", c.min_acc_gap.to_string()),
                ("buckets", format!("{},{}", c.buckets.0, c.buckets.1)),
            ],
        );
        out.push_str("dataset,block,corr_model_greedy,corr_model_optimal,corr_teachers,acc_greedy,acc_optimal,in_study,in_regression\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.block,
                r.corr_model_greedy,
                r.corr_model_optimal,
                r.corr_teachers,
                r.acc_greedy,
                r.acc_optimal,
                r.in_study as u8,
                r.in_regression as u8
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let c = &self.config;
        let study = self.records.iter().filter(|r| r.in_study).count();
        let regression = self.records.iter().filter(|r| r.in_regression).count();
        let mut out = format!(
            "blocks: {} scored, {} skipped (teacher without a split)\n\
             study: {study} kept (teacher correlation <= {})\n\
             regression: {regression} kept (accuracy gap > {})\n\
             buckets: low < {:.3} <= medium < {:.3} <= high\n",
            self.records.len(),
            self.skipped,
            c.max_teacher_corr,
            c.min_acc_gap,
            c.buckets.0,
            c.buckets.1
        );
        out.push_str("better   teacher    low  medium  high\n");
        for r in self.bucket_table() {
            let _ = writeln!(out, "{:<8} {:<8} {:>5} {:>7} {:>5}", r.better, r.teacher, r.counts[0], r.counts[1], r.counts[2]);
        }
        match self.scatter_pearson() {
            Some(p) => {
                let _ = writeln!(out, "pearson(corr difference, accuracy difference) = {p:.4} over {regression} blocks");
            }
            None => out.push_str("pearson(corr difference, accuracy difference) = undefined\n"),
        }
        out
    }
}

/// Per-layer correlation of each probe's split with the final split on one
/// block. `layers` holds probe scores, the last being the model output.
pub fn probe_correlations(layers: &[Vec<f64>], b: &Block) -> Result<Vec<f64>> {
    let last = layers.last().ok_or_else(|| Error::contract("no probe layers"))?;
    let final_split = score_to_split(last, b, None)?.split;
    layers
        .iter()
        .map(|s| block_correlation(b, &score_to_split(s, b, None)?.split, &final_split))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStudy {
    /// Mean correlation with the final split, embedding first.
    pub per_layer: Vec<f64>,
    pub blocks: usize,
}

pub fn layer_probe_study(model: &Model, blocks: &[Block]) -> Result<ProbeStudy> {
    if blocks.is_empty() {
        return Err(Error::validation("probe study needs at least one block"));
    }
    let per_block = blocks
        .par_iter()
        .map(|b| probe_correlations(&model.layer_scores(b, None)?, b))
        .collect::<Result<Vec<_>>>()?;
    let layers = per_block[0].len();
    let per_layer = (0..layers)
        .map(|l| per_block.iter().map(|c| c[l]).sum::<f64>() / blocks.len() as f64)
        .collect();
    Ok(ProbeStudy { per_layer, blocks: blocks.len() })
}

impl ProbeStudy {
    pub fn to_csv(&self, command: &str) -> String {
        let mut out = preamble(PROBE_FORMAT, command, &[("blocks", self.blocks.to_string())]);
        out.push_str("layer,mean_corr\n");
        for (l, c) in self.per_layer.iter().enumerate() {
            let _ = writeln!(out, "{l},{c}");
        }
        out
    }
}

/// `per` blocks from each dataset.
pub fn sample_blocks(datasets: &[Dataset], per: usize, n: usize, m: usize, seed: u64) -> Result<Vec<Block>> {
    datasets
        .iter()
        .enumerate()
        .flat_map(|(d, ds)| (0..per).map(move |k| sample_block(ds, n, m, seed::derive(seed, &[d as u64, k as u64]))))
        .collect()
}
