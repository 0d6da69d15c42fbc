use rand::seq::SliceRandom;

use super::*;
use crate::autodiff::{grad_check, Tape, Var};
use crate::data::{gen_xor, Block, XorSpec};
use crate::model::{build_graph, ModelConfig, ModelParams, Packed};
use crate::seed;
use crate::tree::{build_optimal_depth2, DecisionTree, Node};

fn tiny(bias: bool) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        d_mlp: 32,
        n_max: 64,
        m_max: 4,
        k_max: 2,
        sigma: 0.05,
        positional_bias: bias,
    }
}

fn xor_example(n: usize, s: u64) -> (Block, DecisionTree) {
    let (b, _) = gen_xor(&XorSpec::new(1, 0.1, 1, s), n).unwrap();
    let t = build_optimal_depth2(&b, 1e-3).unwrap();
    (b, t)
}

fn loss_of(p: &ModelParams<f64>, b: &Block, t: &DecisionTree) -> f64 {
    let mut tape = Tape::new();
    let v: Vec<Var> = p.tensors.iter().map(|x| tape.constant(x.clone())).collect();
    let l = example_loss(&mut tape, &v, &p.config, b, t).unwrap().unwrap();
    tape.value(l).item()
}

fn small_corpus() -> Corpus {
    let ds = xor_datasets(1, 0.1, 1, 2, 60, 21).unwrap();
    gen_corpus_with(&ds, &CorpusSpec { n: 32, m: 3, ..CorpusSpec::new(3) }, 22)
}

#[test]
fn example_loss_gradient_matches_finite_differences() {
    let cfg = ModelConfig { n_max: 16, ..tiny(true) };
    let mut p = ModelParams::<f64>::init(&cfg, 1).unwrap();
    p.perturb(2, 0.2);
    let (b, t) = xor_example(12, 3);
    assert!(matches!(t.node(2), Node::Internal(_)) || matches!(t.node(3), Node::Internal(_)));
    let r = grad_check(
        |tape, v| example_loss(tape, v, &cfg, &b, &t).unwrap().unwrap(),
        &p.tensors,
        1e-5,
        200,
        4,
    );
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn augmentation_preserves_loss_and_targets() {
    let cfg = tiny(false);
    let mut p = ModelParams::<f64>::init(&cfg, 5).unwrap();
    p.perturb(6, 0.2);
    let (b, t) = xor_example(24, 7);
    let base = loss_of(&p, &b, &t);
    let mut rng = seed::rng(8);
    for _ in 0..5 {
        let (b2, t2) = augment(&b, &t, &mut rng);
        let l = loss_of(&p, &b2, &t2);
        assert!((l - base).abs() < 1e-12, "{l} vs {base}");
    }
    // targets permute with the block
    let mut rows: Vec<usize> = (0..b.n).collect();
    let mut cols: Vec<usize> = (0..b.m).collect();
    rows.shuffle(&mut rng);
    cols.shuffle(&mut rng);
    let pb = b.permuted(&rows, &cols);
    let f = t.root_split().unwrap().feature;
    let nf = cols.iter().position(|&c| c == f).unwrap();
    let v = b.norm(3, f);
    let m0 = gaussian_target(&b, f, v, 0.05, None);
    let m1 = gaussian_target(&pb, nf, v, 0.05, None);
    for (a, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            assert_eq!(m1[a * b.m + c], m0[i * b.m + j]);
        }
    }
}

#[test]
fn left_child_term_ignores_right_rows() {
    let cfg = tiny(true);
    let mut p = ModelParams::<f64>::init(&cfg, 9).unwrap();
    p.perturb(10, 0.2);
    let (b, t) = xor_example(24, 11);
    let root = t.root_split().unwrap();
    let Node::Internal(ls) = t.node(2) else { panic!("left child is a leaf") };
    let left: Vec<bool> = (0..b.n).map(|i| root.goes_left(&b.raw_x[i * b.m..(i + 1) * b.m])).collect();
    let term = |b: &Block| {
        let s = snap_split(b, ls, Some(&left)).unwrap();
        let full = gaussian_target(b, s.feature, s.value, cfg.sigma, Some(&left));
        let pk = Packed::<f64>::new(b, &cfg, Some(&left)).unwrap();
        let target: Vec<f64> = pk.rows.iter().flat_map(|&i| pk.cols.iter().map(move |&j| (i, j))).map(|(i, j)| full[i * b.m + j]).collect();
        let mut tape = Tape::new();
        let v: Vec<Var> = p.tensors.iter().map(|x| tape.constant(x.clone())).collect();
        let g = build_graph(&mut tape, &v, &cfg, &pk);
        let l = tape.bce(g.scores, &target, &vec![true; pk.cells()]);
        tape.value(l).item()
    };
    let base = term(&b);
    let mut c = b.clone();
    for i in 0..c.n {
        if !left[i] {
            for j in 0..c.m {
                c.xn[i * c.m + j] = -50.0 + j as f64;
            }
        }
    }
    assert_eq!(term(&c).to_bits(), base.to_bits());
}

#[test]
fn overfits_a_fixed_batch() {
    let c = small_corpus();
    let batch = select_phase_stream(&c, Phase::One).len();
    let sched = Schedule {
        phase1_steps: 200,
        phase2_steps: 0,
        batch,
        seed: 3,
        lr: 3e-3,
        warmup: 10,
        augment: false,
        checkpoint_every: 0,
        ..Schedule::default()
    };
    let mut tr = Trainer::<f32>::new(&c, &tiny(true), sched).unwrap();
    tr.run(&c, 200, None, |_, _| {}).unwrap();
    let first = tr.losses[0];
    let last = tr.losses[190..].iter().sum::<f64>() / 10.0;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn resume_is_bit_exact() {
    let c = small_corpus();
    let sched = Schedule {
        phase1_steps: 3,
        phase2_steps: 3,
        batch: 4,
        seed: 5,
        lr: 1e-3,
        warmup: 2,
        checkpoint_every: 0,
        ..Schedule::default()
    };
    let mut a = Trainer::<f64>::new(&c, &tiny(true), sched.clone()).unwrap();
    a.run(&c, 6, None, |_, _| {}).unwrap();

    let mut b = Trainer::<f64>::new(&c, &tiny(true), sched).unwrap();
    b.run(&c, 2, None, |_, _| {}).unwrap();
    let mut bytes = Vec::new();
    b.checkpoint().write_to(&mut bytes).unwrap();
    drop(b);
    let ck = crate::autodiff::Container::read_from(&mut bytes.as_slice()).unwrap();
    let mut r = Trainer::<f64>::resume(&ck, &c).unwrap();
    assert_eq!(r.step_count(), 2);
    r.run(&c, 6, None, |_, _| {}).unwrap();
    assert_eq!(r.losses, a.losses);
    assert_eq!(r.params, a.params);
    assert_eq!(r.opt, a.opt);
}

#[test]
fn non_finite_loss_aborts() {
    let c = small_corpus();
    let sched = Schedule { phase1_steps: 2, phase2_steps: 0, batch: 2, checkpoint_every: 0, ..Schedule::default() };
    let mut tr = Trainer::<f64>::new(&c, &tiny(true), sched).unwrap();
    tr.params.get_mut("head.b").unwrap().data_mut()[0] = f64::NAN;
    let err = tr.step(&c).unwrap_err();
    assert!(matches!(err, crate::Error::Numeric(_)));
    assert!(err.to_string().contains("last good checkpoint"), "{err}");
}

#[test]
fn schedule_text_round_trip() {
    let s = Schedule { curriculum: Curriculum::SinglePhase, seed: 42, augment: false, ..Schedule::default() };
    assert_eq!(Schedule::from_text(&s.to_text()).unwrap(), s);
    assert_eq!(s.phase_at(0), Phase::Two);
    let t = Schedule::default();
    assert_eq!((t.phase_at(14_999), t.phase_at(15_000)), (Phase::One, Phase::Two));
}

#[test]
fn gradient_gate_passes_on_tiny_model() {
    let r = loss_grad_check(&gate_config(), 3).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}
