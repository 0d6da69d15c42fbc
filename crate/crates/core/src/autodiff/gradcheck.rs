use rand::seq::index;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::seed;

pub const DEFAULT_MAX_COORDS: usize = 200;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(param, coordinate, analytic, numeric)` at the maximum.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares `backward` against central differences on up to `max_coords`
/// coordinates drawn with `seed`. `build` must construct a scalar loss
/// from the given parameter leaves.
pub fn grad_check<F>(build: F, params: &[Tensor<f64>], eps: f64, max_coords: usize, seed: u64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars);
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = eval(params);
    tape.backward(loss).expect("grad_check: loss must be a scalar");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    drop(tape);

    let total: usize = params.iter().map(Tensor::numel).sum();
    let picks: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut v = index::sample(&mut seed::rng(seed), total, max_coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut work = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for flat in picks {
        let (mut pi, mut ci) = (0, flat);
        while ci >= params[pi].numel() {
            ci -= params[pi].numel();
            pi += 1;
        }
        let orig = work[pi].data()[ci];
        work[pi].data_mut()[ci] = orig + eps;
        let (t, _, l) = eval(&work);
        let up = t.value(l).item();
        work[pi].data_mut()[ci] = orig - eps;
        let (t, _, l) = eval(&work);
        let down = t.value(l).item();
        work[pi].data_mut()[ci] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[pi][ci];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((pi, ci, a, numeric));
            }
        }
    }
    report
}
