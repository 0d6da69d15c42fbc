//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

/// Candidate thresholds of column `j` over `rows`: every distinct value but
/// the largest (`x <= v` then separates `v` from the next larger value).
pub fn candidates(x: &[f64], n_cols: usize, rows: &[usize], j: usize) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().map(|&r| x[r * n_cols + j]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.pop();
    v
}

pub fn class_counts(y: &[usize], rows: impl IntoIterator<Item = usize>, k: usize) -> Vec<u64> {
    let mut c = vec![0u64; k];
    for r in rows {
        c[y[r]] += 1;
    }
    c
}

/// Exact Gini split score as a fraction `num / den`; larger is better.
/// Equals `sum(l^2)/n_l + sum(r^2)/n_r`, which orders splits as Gini gain does.
pub fn gini_score(left: &[u64], right: &[u64]) -> (u128, u128) {
    let nl: u64 = left.iter().sum();
    let nr: u64 = right.iter().sum();
    let sl: u64 = left.iter().map(|c| c * c).sum();
    let sr: u64 = right.iter().map(|c| c * c).sum();
    ((sl as u128) * (nr as u128) + (sr as u128) * (nl as u128), (nl as u128) * (nr as u128))
}

pub fn frac_cmp(a: (u128, u128), b: (u128, u128)) -> std::cmp::Ordering {
    (a.0 * b.1).cmp(&(b.0 * a.1))
}

/// Textbook impurity gain for the float criteria.
pub fn float_gain(criterion: &str, parent: &[u64], left: &[u64], right: &[u64]) -> Option<f64> {
    let imp = |c: &[u64]| -> f64 {
        let n: u64 = c.iter().sum();
        match criterion {
            "gini" => 1.0 - c.iter().map(|&v| (v as f64 / n as f64).powi(2)).sum::<f64>(),
            _ => -c.iter().filter(|&&v| v > 0).map(|&v| {
                let p = v as f64 / n as f64;
                p * p.log2()
            }).sum::<f64>(),
        }
    };
    let n: u64 = parent.iter().sum();
    let (nl, nr) = (left.iter().sum::<u64>() as f64, right.iter().sum::<u64>() as f64);
    let (wl, wr) = (nl / n as f64, nr / n as f64);
    let gain = imp(parent) - wl * imp(left) - wr * imp(right);
    if criterion == "gain_ratio" {
        let info = -(wl * wl.log2()) - wr * wr.log2();
        (info > 0.0).then(|| gain / info)
    } else {
        Some(gain)
    }
}

/// Every candidate split of the matrix with its left/right class counts.
pub struct Candidate {
    pub feature: usize,
    pub threshold: f64,
    pub left: Vec<u64>,
    pub right: Vec<u64>,
}

pub fn all_splits(x: &[f64], n_cols: usize, y: &[usize], k: usize, rows: &[usize]) -> Vec<Candidate> {
    let mut out = Vec::new();
    for j in 0..n_cols {
        for t in candidates(x, n_cols, rows, j) {
            let left = class_counts(y, rows.iter().copied().filter(|&r| x[r * n_cols + j] <= t), k);
            let right = class_counts(y, rows.iter().copied().filter(|&r| x[r * n_cols + j] > t), k);
            out.push(Candidate { feature: j, threshold: t, left, right });
        }
    }
    out
}

fn majority_count(y: &[usize], rows: &[usize], k: usize) -> u64 {
    *class_counts(y, rows.iter().copied(), k).iter().max().unwrap()
}

/// Best `(correct, leaves)` over every tree of depth at most 2:
/// each root option (leaf or any candidate split) combined with each
/// option for the left child and each for the right child. The objective is
/// `correct / n - lambda * leaves`; ties prefer fewer leaves.
pub fn optimal_depth2(x: &[f64], n_cols: usize, y: &[usize], k: usize, lambda: f64) -> (u64, u64, f64) {
    let n = y.len();
    let rows: Vec<usize> = (0..n).collect();
    let obj = |correct: u64, leaves: u64| correct as f64 / n as f64 - lambda * leaves as f64;
    // Options for a subtree of depth <= 1 over `rows`.
    let stump_options = |rows: &[usize]| -> Vec<(u64, u64)> {
        let mut opts = vec![(majority_count(y, rows, k), 1)];
        for j in 0..n_cols {
            for t in candidates(x, n_cols, rows, j) {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[r * n_cols + j] <= t);
                opts.push((majority_count(y, &l, k) + majority_count(y, &r, k), 2));
            }
        }
        opts
    };
    let mut best = (majority_count(y, &rows, k), 1u64);
    let mut consider = |c: u64, l: u64| {
        let (b, nb) = (obj(c, l), obj(best.0, best.1));
        if b > nb || (b == nb && l < best.1) {
            best = (c, l);
        }
    };
    for j in 0..n_cols {
        for t in candidates(x, n_cols, &rows, j) {
            let (lr, rr): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[r * n_cols + j] <= t);
            let lo = stump_options(&lr);
            let ro = stump_options(&rr);
            for &(cl, ll) in &lo {
                for &(cr, lr_) in &ro {
                    consider(cl + cr, ll + lr_);
                }
            }
        }
    }
    (best.0, best.1, obj(best.0, best.1))
}

/// Pearson correlation of two 0/1 vectors by the textbook float formula,
/// with the constant-vector convention (1 when both are the same constant).
pub fn pearson_indicators(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len() as f64;
    let fa: Vec<f64> = a.iter().map(|&v| v as u8 as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as u8 as f64).collect();
    let (ma, mb) = (fa.iter().sum::<f64>() / n, fb.iter().sum::<f64>() / n);
    let cov: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = fa.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = fb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        return if va == 0.0 && vb == 0.0 && fa[0] == fb[0] { 1.0 } else { 0.0 };
    }
    cov / (va.sqrt() * vb.sqrt())
}
