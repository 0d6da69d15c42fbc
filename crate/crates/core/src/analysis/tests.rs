use std::sync::Arc;

use super::*;
use crate::data::{Block, Dataset, XorSpec};
use crate::generate::SplitScorer;
use crate::model::{Model, ModelConfig, ModelParams};
use crate::tree::{build_greedy, Criterion};
use crate::Error;

fn xor_sets(count: usize, rows: usize, seed: u64) -> Vec<Dataset> {
    (0..count)
        .map(|i| {
            let spec = XorSpec::new(1, 0.15, 2, seed + i as u64).materialize().unwrap();
            let mut ds = spec.sample(rows, 0).unwrap();
            ds.name = format!("xor{i}");
            ds
        })
        .collect()
}

fn small_cfg(sizes: Vec<usize>, runs: usize) -> EvalConfig {
    EvalConfig { n: 64, m: 4, ..EvalConfig::new(sizes, 2, runs, 11) }
}

fn tiny_model() -> Model {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 8, d_mlp: 16, n_max: 64, m_max: 4, k_max: 2, ..ModelConfig::desk() };
    Model::F64(ModelParams::init_with_std(&cfg, 3, 0.3).unwrap())
}

/// Puts all score mass on the cell reproducing greedy-gini's root partition.
struct GreedyMimic;

impl SplitScorer for GreedyMimic {
    fn scores(&self, b: &Block, _: Option<&[bool]>) -> crate::Result<Vec<f64>> {
        let mut s = vec![0.0; b.n * b.m];
        let split = build_greedy(b, 1, Criterion::Gini)?.root_split().expect("block has a split");
        let j = split.feature;
        let row = b
            .valid_rows()
            .filter(|&i| b.raw(i, j) <= split.threshold)
            .max_by(|&a, &c| b.raw(a, j).total_cmp(&b.raw(c, j)))
            .unwrap();
        s[row * b.m + j] = 1.0;
        Ok(s)
    }

    fn block_shape(&self) -> (usize, usize) {
        (256, 10)
    }
}

#[test]
fn counts_one_accuracy_per_run() {
    let ds = xor_sets(2, 200, 1);
    let algos = [Algo::Greedy(Criterion::Gini), Algo::Greedy(Criterion::Entropy)];
    let rep = evaluate(&algos, &ds, &small_cfg(vec![1], 5)).unwrap();
    assert_eq!(rep.rows.len(), 2 * 2 * 5);
    for a in &rep.algos {
        for d in &rep.datasets {
            assert_eq!(rep.accuracies(a, d, 1).len(), 5);
        }
    }
    assert!(rep.rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
}

#[test]
fn self_comparison_is_identical_and_paired() {
    let ds = xor_sets(1, 200, 4);
    let algos = [Algo::Greedy(Criterion::Gini), Algo::Greedy(Criterion::Gini)];
    let rep = evaluate(&algos, &ds, &small_cfg(vec![1, 3], 2)).unwrap();
    // Rows come per (dataset, run) as [algo 0 sizes..., algo 1 sizes...].
    for job in rep.rows.chunks(4) {
        for s in 0..2 {
            assert_eq!(job[s].accuracy.to_bits(), job[2 + s].accuracy.to_bits());
        }
    }
    assert!(rep.is_paired());
    let again = evaluate(&algos, &ds, &small_cfg(vec![1, 3], 2)).unwrap();
    assert_eq!(rep.rows, again.rows);
}

#[test]
fn learned_model_shares_the_blocks() {
    let ds = xor_sets(1, 150, 6);
    let algos = [Algo::learned("tiny", Arc::new(tiny_model())), Algo::Optimal { lambda: 1e-3 }];
    let rep = evaluate(&algos, &ds, &small_cfg(vec![1, 2], 1)).unwrap();
    assert!(rep.is_paired());
    assert_eq!(rep.block_hashes.len(), 2 * 2);
}

#[test]
fn optimal_beyond_depth_two_is_unsupported() {
    let ds = xor_sets(1, 100, 2);
    let cfg = EvalConfig { depth: 3, ..small_cfg(vec![1], 1) };
    let err = evaluate(&[Algo::Greedy(Criterion::Gini), Algo::Optimal { lambda: 1e-3 }], &ds, &cfg).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)), "{err}");
}

#[test]
fn optimal_beats_greedy_on_xor() {
    let ds = xor_sets(10, 400, 20);
    let cfg = EvalConfig { n: 256, m: 4, ..EvalConfig::new(vec![1], 2, 3, 5) };
    let rep = evaluate(&[Algo::Greedy(Criterion::Gini), Algo::Optimal { lambda: 1e-3 }], &ds, &cfg).unwrap();
    let mean = |a: &str| rep.rows.iter().filter(|r| r.algo == a).map(|r| r.accuracy).sum::<f64>() / 30.0;
    assert!(mean("optimal-d2") > mean("greedy-gini"), "{} vs {}", mean("optimal-d2"), mean("greedy-gini"));
}

#[test]
fn report_csv_round_trips() {
    let ds = xor_sets(2, 120, 8);
    let rep = evaluate(&[Algo::Greedy(Criterion::Gini), Algo::Greedy(Criterion::GainRatio)], &ds, &small_cfg(vec![1, 2], 2))
        .unwrap();
    let text = rep.to_csv("metatree eval --runs 2").unwrap();
    assert!(text.starts_with("# format = metatree-eval 1\n# command = metatree eval --runs 2\n"));
    let back = EvalReport::from_csv(&text).unwrap();
    assert_eq!(back.rows, rep.rows);
    assert_eq!((back.algos, back.datasets, back.sizes), (rep.algos.clone(), rep.datasets.clone(), rep.sizes.clone()));
    assert_eq!(rank_table(&EvalReport::from_csv(&text).unwrap(), None).unwrap(), rank_table(&rep, None).unwrap());
}

#[test]
fn rank_table_replays_from_rows() {
    let ds = xor_sets(4, 150, 30);
    let algos = [Algo::Greedy(Criterion::Gini), Algo::Greedy(Criterion::Entropy), Algo::Optimal { lambda: 1e-3 }];
    let rep = evaluate(&algos, &ds, &small_cfg(vec![1], 2)).unwrap();
    let t = rank_table(&rep, Some(1)).unwrap();
    let champions: usize = t.rows.iter().map(|r| r.champions).sum();
    assert!(champions >= ds.len());
    assert!(t.rows.iter().all(|r| (1.0..=3.0).contains(&r.mean_rank)));
    let total: f64 = t.rows.iter().map(|r| r.mean_rank).sum();
    assert!((total - 6.0).abs() < 1e-12);
}

#[test]
fn preference_with_greedy_mimic() {
    let ds = xor_sets(2, 300, 40);
    let cfg = PreferenceConfig { blocks_per: 5, n: 128, m: 4, ..Default::default() };
    let st = preference_study(&GreedyMimic, &ds, &cfg, 3).unwrap();
    assert_eq!(st.records.len() + st.skipped, 10);
    for r in &st.records {
        assert_eq!(r.corr_model_greedy, 1.0);
        assert_eq!(r.in_study, r.corr_teachers <= 0.7);
    }
    let rows = st.bucket_table();
    assert_eq!(rows.len(), 4);
    assert!(st.summary().contains("buckets"));
}

#[test]
fn probe_final_layer_is_one() {
    let m = tiny_model();
    let ds = xor_sets(1, 200, 50);
    let blocks = sample_blocks(&ds, 4, 64, 4, 1).unwrap();
    let st = layer_probe_study(&m, &blocks).unwrap();
    assert_eq!(st.per_layer.len(), 3);
    assert_eq!(*st.per_layer.last().unwrap(), 1.0);
}

#[test]
fn bias_variance_runs_on_greedy() {
    let ds = &xor_sets(1, 300, 60)[0];
    let cfg = BiasVarianceConfig { n: 64, m: 4, ..Default::default() };
    let bv = bias_variance(&Algo::Greedy(Criterion::Gini), ds, 6, &cfg, 2).unwrap();
    assert!(bv.bias > 0.0 && bv.variance >= 0.0);
    assert_eq!(bv, bias_variance(&Algo::Greedy(Criterion::Gini), ds, 6, &cfg, 2).unwrap());
}

#[test]
fn algo_names_parse_back() {
    for s in ["greedy-gini", "greedy-entropy", "greedy-gainratio", "optimal-d2"] {
        assert_eq!(Algo::parse(s, None).unwrap().name(), s);
    }
    assert!(Algo::parse("learned", None).is_err());
    assert!(Algo::parse("cart", None).is_err());
}
