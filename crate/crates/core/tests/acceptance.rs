//! Acceptance suite. Every criterion prints one `criterion N: PASS|FAIL` line
//! straight to stdout (bypassing the test harness capture) and then asserts.
//!
//! Criteria that need the trained desk model are `#[ignore]`d: the desk
//! schedule is 60k steps at batch 32, far beyond a test run on a small
//! machine. Run them with `cargo test --release -p metatree-core --test
//! acceptance -- --ignored`; trained models are cached under the target dir
//! and training resumes from the newest checkpoint.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use metatree::analysis::{
    bias_variance, bias_variance_of, evaluate, layer_probe_study, preference_record, preference_study, sample_blocks,
    Algo, BiasVarianceConfig, EvalConfig, PreferenceConfig,
};
use metatree::autodiff::Container;
use metatree::data::{sample_block, train_test_split, Block, Dataset, XorSpec};
use metatree::model::{Model, ModelConfig, ModelParams};
use metatree::seed;
use metatree::train::{gate_config, gen_corpus, loss_grad_check, xor_datasets, Corpus, Curriculum, Schedule, Trainer};
use metatree::tree::{
    accuracy, best_split, build_greedy, build_optimal_depth2, optimal_depth2_fit, parse_tree, tree_to_text, Criterion,
    DecisionTree, Node,
};

// Pinned tolerances and thresholds.
const C1_INSTANCES: usize = 1000;
const C1_FLOAT_TOL: f64 = 1e-12;
const C2_MAX_REL_ERR: f64 = 1e-4;
const C3_TRIALS: usize = 100;
const C3_MAX_DEV: f64 = 1e-9;
const C4_NOISE_CEILING: f64 = 0.85;
const C4_MAX_REL_ERR_POINTS: f64 = 6.0;
const C4_MIN_MARGIN_POINTS: f64 = 5.0;
const C4_EVAL_BLOCKS: usize = 500;
const C5_SEEDS: [u64; 3] = [1, 2, 3];
const C6_TOY_TOL: f64 = 1e-12;
const C6_REPETITIONS: usize = 50;
const C7_CASES: usize = 20;
const C7_TOL: f64 = 1e-12;
const C7_MIN_RETAINED: usize = 30;

// Training corpus: 5,000 XOR-L1 blocks, each fit by both teachers.
const CORPUS_SEED: u64 = 0x0C0_4BA5E;
const CORPUS_DATASETS: usize = 5000;
const CORPUS_ROWS: usize = 512;
const EVAL_SEED: u64 = 0xE7A1;

fn verdict(id: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

fn not_run(id: &str, why: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id}: NOT RUN ({why})");
}

// ---------------------------------------------------------------------------
// 1. Oracle equivalence

fn random_instance(rng: &mut seed::Rng, inst: usize) -> (Vec<f64>, usize, Vec<usize>, usize) {
    let n = rng.random_range(2..=64);
    let m = rng.random_range(1..=5);
    let k = rng.random_range(2..=3);
    let x: Vec<f64> = (0..n * m)
        .map(|_| match inst % 3 {
            // Coarse integer grid: many ties between candidates.
            0 => rng.random_range(0..5) as f64,
            1 => rng.random_range(-1.0..1.0),
            // Mostly-constant columns.
            _ => {
                if rng.random_bool(0.8) {
                    1.0
                } else {
                    rng.random_range(0..3) as f64
                }
            }
        })
        .collect();
    let y = (0..n).map(|_| rng.random_range(0..k)).collect();
    (x, m, y, k)
}

fn check_gini(x: &[f64], m: usize, y: &[usize], k: usize) -> Result<bool, String> {
    let n = y.len();
    let rows: Vec<usize> = (0..n).collect();
    let parent = common::class_counts(y, 0..n, k);
    let parent_score = (parent.iter().map(|c| (c * c) as u128).sum::<u128>(), n as u128);
    let cands = common::all_splits(x, m, y, k, &rows);
    let mut best: Option<&common::Candidate> = None;
    for c in &cands {
        let s = common::gini_score(&c.left, &c.right);
        if best.is_none_or(|b| common::frac_cmp(s, common::gini_score(&b.left, &b.right)).is_gt()) {
            best = Some(c);
        }
    }
    let best_score = best.map(|b| common::gini_score(&b.left, &b.right));
    let has_gain = best_score.is_some_and(|s| common::frac_cmp(s, parent_score).is_gt());
    let got = best_split(x, m, y, k, Criterion::Gini).map_err(|e| e.to_string())?;
    match (got, has_gain) {
        (None, false) => Ok(false),
        (Some((s, g)), true) => {
            let left = common::class_counts(y, rows.iter().copied().filter(|&r| x[r * m + s.feature] <= s.threshold), k);
            let right = common::class_counts(y, rows.iter().copied().filter(|&r| x[r * m + s.feature] > s.threshold), k);
            if left.iter().sum::<u64>() == 0 || right.iter().sum::<u64>() == 0 {
                return Err(format!("degenerate split {s:?}"));
            }
            if common::frac_cmp(common::gini_score(&left, &right), best_score.unwrap()).is_ne() {
                return Err(format!("split {s:?} is not gini-optimal"));
            }
            let fg = common::float_gain("gini", &parent, &left, &right).unwrap();
            if (fg - g).abs() > C1_FLOAT_TOL {
                return Err(format!("reported gain {g} vs recomputed {fg}"));
            }
            let b = best.unwrap();
            // A different but equally good partition is a tie-break difference.
            Ok(b.feature != s.feature || b.left != left)
        }
        (got, _) => Err(format!("implementation {got:?}, oracle has_gain={has_gain}")),
    }
}

fn check_float(x: &[f64], m: usize, y: &[usize], k: usize, criterion: Criterion, name: &str) -> Result<(), String> {
    let n = y.len();
    let rows: Vec<usize> = (0..n).collect();
    let parent = common::class_counts(y, 0..n, k);
    let oracle = common::all_splits(x, m, y, k, &rows)
        .iter()
        .filter_map(|c| common::float_gain(name, &parent, &c.left, &c.right))
        .fold(f64::NEG_INFINITY, f64::max);
    let pure = parent.iter().any(|&c| c as usize == n);
    let got = best_split(x, m, y, k, criterion).map_err(|e| e.to_string())?;
    match got {
        None if pure || oracle <= 1e-12 + C1_FLOAT_TOL => Ok(()),
        Some((s, g)) if !pure && oracle > 1e-12 - C1_FLOAT_TOL => {
            let left = common::class_counts(y, rows.iter().copied().filter(|&r| x[r * m + s.feature] <= s.threshold), k);
            let right = common::class_counts(y, rows.iter().copied().filter(|&r| x[r * m + s.feature] > s.threshold), k);
            let own = common::float_gain(name, &parent, &left, &right).ok_or("undefined gain at the chosen split")?;
            if (own - g).abs() > C1_FLOAT_TOL || (oracle - g).abs() > C1_FLOAT_TOL {
                return Err(format!("{name}: reported {g}, recomputed {own}, oracle max {oracle}"));
            }
            Ok(())
        }
        got => Err(format!("{name}: implementation {got:?}, oracle max {oracle}")),
    }
}

/// Training-set correct count of a tree by an independent walk of the heap.
fn walk_correct(t: &DecisionTree, x: &[f64], m: usize, y: &[usize]) -> usize {
    (0..y.len()).filter(|&r| walk(t, &x[r * m..(r + 1) * m]) == y[r]).count()
}

fn walk(t: &DecisionTree, row: &[f64]) -> usize {
    let mut i = 1;
    loop {
        match t.node(i) {
            Node::Internal(s) => i = if row[s.feature] <= s.threshold { 2 * i } else { 2 * i + 1 },
            Node::Leaf(l) => return l.label,
            Node::Absent => panic!("walked into an absent node"),
        }
    }
}

#[test]
fn criterion_1_oracle_equivalence() {
    let start = std::time::Instant::now();
    let mut rng = seed::rng(0xC1);
    let mut mismatches: Vec<String> = Vec::new();
    let mut tie_breaks = 0;
    for inst in 0..C1_INSTANCES {
        let (x, m, y, k) = random_instance(&mut rng, inst);
        let n = y.len();
        match check_gini(&x, m, &y, k) {
            Ok(tie) => tie_breaks += tie as usize,
            Err(e) => mismatches.push(format!("#{inst} gini: {e}")),
        }
        for (c, name) in [(Criterion::Entropy, "entropy"), (Criterion::GainRatio, "gain_ratio")] {
            if let Err(e) = check_float(&x, m, &y, k, c, name) {
                mismatches.push(format!("#{inst} {e}"));
            }
        }
        let lambda = [0.0, 1e-3, 0.05][(inst / 3) % 3];
        let rows: Vec<usize> = (0..n).collect();
        let cols: Vec<usize> = (0..m).collect();
        let fit = optimal_depth2_fit(&x, m, &y, k, &rows, &cols, lambda).unwrap();
        let (correct, leaves, objective) = common::optimal_depth2(&x, m, &y, k, lambda);
        if (fit.objective - objective).abs() > C1_FLOAT_TOL {
            mismatches.push(format!(
                "#{inst} optimal λ={lambda}: objective {} ({} correct, {} leaves) vs oracle {objective} ({correct}, {leaves})",
                fit.objective, fit.correct, fit.leaves
            ));
        }
        if walk_correct(&fit.tree, &x, m, &y) != fit.correct || fit.tree.leaf_count() != fit.leaves {
            mismatches.push(format!("#{inst} optimal tree disagrees with its reported fit"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches.is_empty() && secs < 300.0;
    verdict(
        "1",
        pass,
        &format!(
            "{C1_INSTANCES} instances, {} mismatches, {tie_breaks} equal-score tie-breaks, {secs:.1}s",
            mismatches.len()
        ),
    );
    assert!(pass, "{}", mismatches.iter().take(10).cloned().collect::<Vec<_>>().join("\n"));
}

// ---------------------------------------------------------------------------
// 2. Gradient gate

#[test]
fn criterion_2_gradient_gate() {
    let cfg = gate_config();
    assert_eq!((cfg.n_max, cfg.m_max, cfg.layers, cfg.d_model), (8, 3, 2, 16));
    let start = std::time::Instant::now();
    let worst = (1..=3).map(|s| loss_grad_check(&cfg, s).unwrap().max_rel_error).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < C2_MAX_REL_ERR && secs < 60.0;
    verdict("2", pass, &format!("max relative error {worst:.3e} over 3 seeds, {secs:.1}s"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Equivariance

fn random_dataset(rng: &mut seed::Rng, rows: usize, cols: usize, k: usize) -> Dataset {
    let x = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut y: Vec<usize> = (0..rows).map(|i| i % k).collect();
    y.shuffle(rng);
    Dataset::from_numeric("eq", x, cols, y, k).unwrap()
}

#[test]
fn criterion_3_equivariance() {
    let cfg = ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        d_mlp: 32,
        n_max: 24,
        m_max: 6,
        k_max: 3,
        positional_bias: false,
        ..ModelConfig::desk()
    };
    let mut p = ModelParams::<f64>::init(&cfg, 7).unwrap();
    p.perturb(8, 0.1);
    let model = Model::F64(p);
    let mut rng = seed::rng(0xC3);
    let mut worst = 0.0f64;
    for t in 0..C3_TRIALS {
        // Short datasets leave padding rows and columns in the block.
        let rows = rng.random_range(6..=30);
        let cols = rng.random_range(1..=6);
        let k = rng.random_range(2..=3);
        let ds = random_dataset(&mut rng, rows, cols, k);
        let b = sample_block(&ds, 24, 6, t as u64).unwrap();
        let mut pr: Vec<usize> = (0..b.n).collect();
        let mut pc: Vec<usize> = (0..b.m).collect();
        pr.shuffle(&mut rng);
        pc.shuffle(&mut rng);
        let s0 = model.scores(&b, None).unwrap();
        let s1 = model.scores(&b.permuted(&pr, &pc), None).unwrap();
        for a in 0..b.n {
            for c in 0..b.m {
                worst = worst.max((s1[a * b.m + c] - s0[pr[a] * b.m + pc[c]]).abs());
            }
        }
    }
    let pass = worst < C3_MAX_DEV;
    verdict("3", pass, &format!("{C3_TRIALS} trials, max abs deviation {worst:.3e}"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Trained desk models (criteria 4, 5, 6b, 7b, 8b)

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn training_corpus() -> Corpus {
    let dir = cache_dir().join("corpus");
    if let Ok(c) = Corpus::load(&dir) {
        return c;
    }
    let ds = xor_datasets(1, 0.15, 8, CORPUS_DATASETS, CORPUS_ROWS, CORPUS_SEED).unwrap();
    let c = gen_corpus(&ds, 1, CORPUS_SEED);
    c.save(&dir).unwrap();
    c
}

fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("checkpoint-")))
        .collect();
    v.sort();
    v.pop()
}

/// The desk preset trained on the XOR-L1 corpus with the desk schedule.
fn trained_desk_model(curriculum: Curriculum, seed: u64) -> Model {
    let dir = cache_dir().join(format!("{}-{seed}", curriculum.as_str()));
    let done = dir.join("final.mtc");
    if let Ok(m) = Model::load(&done) {
        return m;
    }
    std::fs::create_dir_all(&dir).unwrap();
    let corpus = training_corpus();
    let mut t: Trainer<f32> = match latest_checkpoint(&dir) {
        Some(p) => Trainer::resume(&Container::load(p).unwrap(), &corpus).unwrap(),
        None => {
            let schedule = Schedule { seed, curriculum, ..Schedule::default() };
            Trainer::new(&corpus, &ModelConfig::desk(), schedule).unwrap()
        }
    };
    t.run(&corpus, u64::MAX, Some(&dir), |_, _| {}).unwrap();
    t.checkpoint().save(&done).unwrap();
    Model::F32(t.params)
}

fn xor_eval_sets(level: u8, salt: u64) -> Vec<Dataset> {
    xor_datasets(level, 0.15, 8, C4_EVAL_BLOCKS, 1000, seed::derive(EVAL_SEED, &[level as u64, salt])).unwrap()
}

/// Mean held-out accuracy of `(learned, greedy-gini)` depth-2 trees, one
/// block per dataset.
fn learned_vs_greedy(model: Model, sets: &[Dataset]) -> (f64, f64) {
    let algos = [Algo::learned("learned", Arc::new(model)), Algo::Greedy(Criterion::Gini)];
    let rep = evaluate(&algos, sets, &EvalConfig::new(vec![1], 2, 1, EVAL_SEED)).unwrap();
    let mean = |a: &str| {
        let v: Vec<f64> = rep.rows.iter().filter(|r| r.algo == a).map(|r| r.accuracy).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    (mean("learned"), mean("greedy-gini"))
}

#[test]
#[ignore = "needs the full desk training run"]
fn criterion_4_xor_headline() {
    let model = trained_desk_model(Curriculum::TwoPhase, C5_SEEDS[0]);
    let (l1, g1) = learned_vs_greedy(model.clone(), &xor_eval_sets(1, 0));
    let rel_err = (C4_NOISE_CEILING - l1) * 100.0;
    let margin = (l1 - g1) * 100.0;
    let (l2, g2) = learned_vs_greedy(model, &xor_eval_sets(2, 0));
    let pass = rel_err <= C4_MAX_REL_ERR_POINTS && margin >= C4_MIN_MARGIN_POINTS && l2 > g2;
    verdict(
        "4",
        pass,
        &format!(
            "L1 learned {l1:.4} greedy {g1:.4}: relative error {rel_err:.2} pts, margin {margin:.2} pts; L2 learned {l2:.4} greedy {g2:.4}"
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "needs six full desk training runs"]
fn criterion_5_curriculum_direction() {
    let sets = xor_eval_sets(1, 5);
    let mean = |c: Curriculum| {
        C5_SEEDS.iter().map(|&s| learned_vs_greedy(trained_desk_model(c, s), &sets).0).sum::<f64>() / C5_SEEDS.len() as f64
    };
    let (two, single) = (mean(Curriculum::TwoPhase), mean(Curriculum::SinglePhase));
    let pass = single <= two;
    verdict("5", pass, &format!("mean XOR-L1 accuracy two-phase {two:.4}, single-phase {single:.4}"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. Bias-variance

#[test]
fn criterion_6a_bias_variance_toy_oracle() {
    // Two models on two points, truth [0, 0]: the mean prediction is
    // (1, 0) at point 0 and (1/2, 1/2) at point 1.
    let bv = bias_variance_of(&[vec![0, 0], vec![0, 1]], &[0, 0], 2).unwrap();
    let (bias, var) = ((0.5f64).sqrt() / 2.0, 2.0f64.sqrt() / 4.0);
    // Three models predicting each of three classes once, truth class 0.
    let bv3 = bias_variance_of(&[vec![0], vec![1], vec![2]], &[0], 3).unwrap();
    let third = 6.0f64.sqrt() / 3.0;
    let dev = [bv.bias - bias, bv.variance - var, bv3.bias - third, bv3.variance - third]
        .iter()
        .fold(0.0f64, |a, d| a.max(d.abs()));
    let pass = dev <= C6_TOY_TOL;
    verdict("6a", pass, &format!("toy oracle max deviation {dev:.3e}"));
    assert!(pass);
}

#[test]
#[ignore = "needs the full desk training run"]
fn criterion_6b_learned_variance_below_greedy() {
    let model = Arc::new(trained_desk_model(Curriculum::TwoPhase, C5_SEEDS[0]));
    let cfg = BiasVarianceConfig::default();
    let sets = xor_datasets(1, 0.15, 8, 5, 2000, seed::derive(EVAL_SEED, &[6])).unwrap();
    let (mut lv, mut gv) = (0.0, 0.0);
    for (i, ds) in sets.iter().enumerate() {
        let s = seed::derive(EVAL_SEED, &[6, i as u64]);
        lv += bias_variance(&Algo::learned("learned", model.clone()), ds, C6_REPETITIONS, &cfg, s).unwrap().variance;
        gv += bias_variance(&Algo::Greedy(Criterion::Gini), ds, C6_REPETITIONS, &cfg, s).unwrap().variance;
    }
    let (lv, gv) = (lv / sets.len() as f64, gv / sets.len() as f64);
    let pass = lv < gv;
    verdict("6b", pass, &format!("mean variance learned {lv:.4}, greedy-gini {gv:.4} (N={C6_REPETITIONS})"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. Preference-study machinery

fn tiny_scorer() -> Model {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 8, d_mlp: 16, n_max: 64, m_max: 4, k_max: 2, ..ModelConfig::desk() };
    Model::F64(ModelParams::init_with_std(&cfg, 3, 0.3).unwrap())
}

fn indicators(b: &Block, f: usize, t: f64) -> Vec<bool> {
    b.valid_rows().map(|i| b.raw(i, f) <= t).collect()
}

/// Held-out accuracy of a block-space tree, walking it over dataset rows.
fn held_out_by_hand(t: &DecisionTree, b: &Block, test: &Dataset) -> f64 {
    let correct = (0..test.n_rows())
        .filter(|&i| {
            let row: Vec<f64> = (0..b.m).map(|j| b.source_cols[j].map_or(0.0, |c| test.value(i, c))).collect();
            walk(t, &row) == test.y[i]
        })
        .count();
    correct as f64 / test.n_rows() as f64
}

#[test]
fn criterion_7a_preference_machinery() {
    let model = tiny_scorer();
    let cfg = PreferenceConfig { n: 64, m: 4, ..Default::default() };
    // Category 0: excluded (teachers correlate > 0.7); 1: in the study but
    // out of the regression (accuracy gap <= 0.08); 2: in both.
    let quota = [7, 7, 6];
    let mut found = [0usize; 3];
    let mut errors = Vec::new();
    let mut s = 0u64;
    while found.iter().sum::<usize>() < C7_CASES && s < 20_000 {
        s += 1;
        let spec = XorSpec::new(1 + (s % 2) as u8, [0.0, 0.15, 0.3][(s % 3) as usize], (s % 3) as usize, s);
        let ds = spec.materialize().unwrap().sample(300, 0).unwrap();
        let (train, test) = train_test_split(&ds, 0.7, s).unwrap();
        let b = sample_block(&train, 64, 4, s).unwrap();
        let g = build_greedy(&b, 2, Criterion::Gini).unwrap();
        let o = build_optimal_depth2(&b, cfg.lambda).unwrap();
        let (Some(gs), Some(os)) = (g.root_split(), o.root_split()) else { continue };
        let (gi, oi) = (indicators(&b, gs.feature, gs.threshold), indicators(&b, os.feature, os.threshold));
        if gi == oi {
            continue;
        }
        let corr = common::pearson_indicators(&gi, &oi);
        let (ag, ao) = (held_out_by_hand(&g, &b, &test), held_out_by_hand(&o, &b, &test));
        let study = corr <= 0.7;
        let regression = study && (ag - ao).abs() > 0.08;
        let cat = if !study { 0 } else if !regression { 1 } else { 2 };
        if found[cat] >= quota[cat] {
            continue;
        }
        found[cat] += 1;
        let r = preference_record(&model, &b, &test, &cfg, "case", s as usize).unwrap().expect("both teachers split");
        let choice = metatree::model::score_to_split(&model.scores(&b, None).unwrap(), &b, None).unwrap();
        let mi = indicators(&b, choice.split.feature, choice.split.threshold);
        let checks = [
            ("teacher correlation", r.corr_teachers, corr),
            ("model-greedy correlation", r.corr_model_greedy, common::pearson_indicators(&mi, &gi)),
            ("model-optimal correlation", r.corr_model_optimal, common::pearson_indicators(&mi, &oi)),
            ("greedy accuracy", r.acc_greedy, ag),
            ("optimal accuracy", r.acc_optimal, ao),
        ];
        for (what, got, want) in checks {
            if (got - want).abs() > C7_TOL {
                errors.push(format!("seed {s}: {what} {got} vs {want}"));
            }
        }
        if (r.in_study, r.in_regression) != (study, regression) {
            errors.push(format!("seed {s}: filters {:?} vs {:?}", (r.in_study, r.in_regression), (study, regression)));
        }
    }
    let pass = found == quota && errors.is_empty();
    verdict(
        "7a",
        pass,
        &format!("{} cases (excluded/study-only/regression = {found:?}), {} mismatches", found.iter().sum::<usize>(), errors.len()),
    );
    assert!(pass, "{errors:?}");
}

#[test]
#[ignore = "needs the full desk training run"]
fn criterion_7b_preference_sign() {
    let model = trained_desk_model(Curriculum::TwoPhase, C5_SEEDS[0]);
    let mut sets = xor_datasets(1, 0.15, 8, 10, 2000, seed::derive(EVAL_SEED, &[7, 1])).unwrap();
    sets.extend(xor_datasets(2, 0.15, 8, 10, 2000, seed::derive(EVAL_SEED, &[7, 2])).unwrap());
    let cfg = PreferenceConfig { blocks_per: 25, ..Default::default() };
    let st = preference_study(&model, &sets, &cfg, EVAL_SEED).unwrap();
    let retained = st.records.iter().filter(|r| r.in_regression).count();
    let r = st.scatter_pearson();
    let pass = retained >= C7_MIN_RETAINED && r.is_some_and(|r| r > 0.0);
    verdict("7b", pass, &format!("{retained} retained blocks, Pearson {r:?}"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. Probe consistency

#[test]
fn criterion_8a_probe_final_layer_bit_exact() {
    let cfg = ModelConfig { layers: 3, heads: 2, d_model: 16, d_mlp: 32, n_max: 32, m_max: 5, k_max: 3, ..ModelConfig::desk() };
    let p64 = ModelParams::<f64>::init_with_std(&cfg, 21, 0.2).unwrap();
    let models = [Model::F32(p64.cast()), Model::F64(p64)];
    let mut rng = seed::rng(0xC8);
    let mut compared = 0;
    let mut exact = true;
    for t in 0..10u64 {
        let ds = random_dataset(&mut rng, 40, 5, 3);
        let b = sample_block(&ds, 32, 5, t).unwrap();
        let subset: Vec<bool> = (0..b.n).map(|i| i % 3 != 0).collect();
        for m in &models {
            for rs in [None, Some(subset.as_slice())] {
                let layers = m.layer_scores(&b, rs).unwrap();
                let out = m.scores(&b, rs).unwrap();
                let last = layers.last().unwrap();
                exact &= last.len() == out.len() && last.iter().zip(&out).all(|(a, b)| a.to_bits() == b.to_bits());
                compared += 1;
            }
        }
    }
    verdict("8a", exact, &format!("{compared} final-layer probes compared bitwise"));
    assert!(exact);
}

#[test]
#[ignore = "needs the full desk training run"]
fn criterion_8b_probe_depth_direction() {
    let model = trained_desk_model(Curriculum::TwoPhase, C5_SEEDS[0]);
    let sets = xor_datasets(1, 0.15, 8, 25, 1000, seed::derive(EVAL_SEED, &[8])).unwrap();
    let blocks = sample_blocks(&sets, 4, 256, 10, EVAL_SEED).unwrap();
    let st = layer_probe_study(&model, &blocks).unwrap();
    // per_layer[l] is the probe after layer l; the last entry is the output.
    let layers = model.config().layers;
    let (first, penult) = (st.per_layer[1], st.per_layer[layers - 1]);
    let pass = penult > first;
    verdict("8b", pass, &format!("mean probe correlation layer 1 {first:.4}, layer {} {penult:.4}", layers - 1));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9. Determinism and persistence

fn small_corpus(seed: u64) -> Corpus {
    let ds = xor_datasets(1, 0.15, 2, 6, 120, seed).unwrap();
    let spec = metatree::train::CorpusSpec { n: 32, m: 4, ..metatree::train::CorpusSpec::new(1) };
    metatree::train::gen_corpus_with(&ds, &spec, seed)
}

fn container_bytes(c: &Container) -> Vec<u8> {
    let mut v = Vec::new();
    c.write_to(&mut v).unwrap();
    v
}

#[test]
fn criterion_9_determinism_and_persistence() {
    let mut failures: Vec<&str> = Vec::new();

    // Resume: 3 steps, checkpoint through bytes, 3 more == 6 straight.
    let corpus = small_corpus(91);
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 8, d_mlp: 16, n_max: 32, m_max: 4, k_max: 2, ..ModelConfig::desk() };
    let schedule = Schedule { phase1_steps: 3, phase2_steps: 3, batch: 2, warmup: 2, seed: 5, ..Schedule::default() };
    let mut straight: Trainer<f64> = Trainer::new(&corpus, &cfg, schedule.clone()).unwrap();
    straight.run(&corpus, 6, None, |_, _| {}).unwrap();
    let mut first: Trainer<f64> = Trainer::new(&corpus, &cfg, schedule).unwrap();
    first.run(&corpus, 4, None, |_, _| {}).unwrap();
    let bytes = container_bytes(&first.checkpoint());
    let restored = Container::read_from(&mut bytes.as_slice()).unwrap();
    let mut resumed: Trainer<f64> = Trainer::resume(&restored, &corpus).unwrap();
    resumed.run(&corpus, 6, None, |_, _| {}).unwrap();
    if container_bytes(&straight.checkpoint()) != container_bytes(&resumed.checkpoint()) {
        failures.push("resumed training diverged from the uninterrupted run");
    }

    // Checkpoint round trip: bytes -> container -> bytes, and model store/restore.
    if container_bytes(&restored) != bytes {
        failures.push("checkpoint bytes changed on a round trip");
    }
    let model = Model::restore(&restored).unwrap();
    let mut c = Container::new();
    model.store(&mut c);
    let again = Model::restore(&Container::read_from(&mut container_bytes(&c).as_slice()).unwrap()).unwrap();
    let mut c2 = Container::new();
    again.store(&mut c2);
    if container_bytes(&c) != container_bytes(&c2) {
        failures.push("model parameters changed on a round trip");
    }

    // Tree serialization: every teacher tree and a few deeper greedy trees.
    let mut trees: Vec<DecisionTree> = corpus.examples.iter().map(|e| e.teacher.clone()).collect();
    for e in corpus.examples.iter().step_by(2) {
        trees.push(build_greedy(&e.block, 4, Criterion::Entropy).unwrap());
    }
    for t in &trees {
        let text = tree_to_text(t, &[]);
        let back = parse_tree(&text).unwrap();
        if back != *t || tree_to_text(&back, &[]) != text {
            failures.push("tree text round trip is not exact");
            break;
        }
    }

    // Corpus replay: stored accuracies recompute exactly, from disk and from
    // a regeneration with the same seed.
    let dir = tempfile::tempdir().unwrap();
    corpus.save(dir.path()).unwrap();
    let loaded = Corpus::load(dir.path()).unwrap();
    if loaded.examples != corpus.examples || small_corpus(91).examples != corpus.examples {
        failures.push("corpus differs after save/load or regeneration");
    }
    for e in &loaded.examples {
        let h = &e.held_out;
        if accuracy(&e.teacher, &h.x, h.n_cols, &h.y).unwrap().to_bits() != e.test_accuracy.to_bits() {
            failures.push("replayed teacher accuracy differs from the stored one");
            break;
        }
    }

    let pass = failures.is_empty();
    verdict(
        "9",
        pass,
        &if pass {
            format!("resume, checkpoint, {} trees and {} corpus examples bit-exact", trees.len(), loaded.examples.len())
        } else {
            failures.join("; ")
        },
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------

/// Reports the criteria that only run with `--ignored`.
#[test]
fn trained_model_criteria_status() {
    for id in ["4", "5", "6b", "7b", "8b"] {
        not_run(id, "needs the full desk training run; run this target with --ignored");
    }
}
