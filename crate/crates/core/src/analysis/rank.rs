use std::fmt::Write as _;

use super::{mean_std, preamble, EvalReport};
use crate::error::{Error, Result};

pub const RANK_FORMAT: &str = "metatree-rank 1";

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub algo: String,
    pub mean_rank: f64,
    pub std_rank: f64,
    pub champions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub size: usize,
    pub datasets: usize,
    pub rows: Vec<RankRow>,
}

/// Ranks of `vals`, 1 for the largest; tied values share the mean of the
/// ranks they span.
pub fn midranks(vals: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut ranks = vec![0.0; vals.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && vals[order[j + 1]] == vals[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rank table from per-dataset mean accuracies, `acc[dataset][algo]`.
pub fn rank_accuracies(algos: &[String], acc: &[Vec<f64>], size: usize) -> Result<RankTable> {
    if algos.len() < 2 {
        return Err(Error::validation("a rank table needs at least two algorithms"));
    }
    if acc.is_empty() {
        return Err(Error::validation("a rank table needs at least one dataset"));
    }
    if let Some(row) = acc.iter().find(|r| r.len() != algos.len()) {
        return Err(Error::contract(format!("{} accuracies for {} algorithms", row.len(), algos.len())));
    }
    let ranks: Vec<Vec<f64>> = acc.iter().map(|r| midranks(r)).collect();
    let rows = algos
        .iter()
        .enumerate()
        .map(|(a, name)| {
            let mine: Vec<f64> = ranks.iter().map(|r| r[a]).collect();
            let (mean_rank, std_rank) = mean_std(&mine);
            let champions = acc
                .iter()
                .filter(|r| r.iter().all(|&v| v <= r[a]))
                .count();
            RankRow { algo: name.clone(), mean_rank, std_rank, champions }
        })
        .collect();
    Ok(RankTable { size, datasets: acc.len(), rows })
}

/// Ranks algorithms per dataset by mean accuracy over runs at one ensemble
/// size (the largest when `size` is `None`).
pub fn rank_table(report: &EvalReport, size: Option<usize>) -> Result<RankTable> {
    let size = match size {
        Some(s) => s,
        None => *report.sizes.iter().max().ok_or_else(|| Error::validation("report has no rows"))?,
    };
    let acc = report
        .datasets
        .iter()
        .map(|d| {
            report
                .algos
                .iter()
                .map(|a| {
                    report
                        .summary(a, d, size)
                        .map(|(m, _)| m)
                        .ok_or_else(|| Error::validation(format!("no accuracy for {a} on {d} at size {size}")))
                })
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    rank_accuracies(&report.algos, &acc, size)
}

impl RankTable {
    pub fn to_csv(&self, command: &str) -> String {
        let mut out = preamble(
            RANK_FORMAT,
            command,
            &[("size", self.size.to_string()), ("datasets", self.datasets.to_string())],
        );
        out.push_str("algo,mean_rank,std_rank,champions\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.algo, r.mean_rank, r.std_rank, r.champions);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.algo.len()).max().unwrap_or(0).max(9);
        let mut out = format!(
            "ensemble size {}, {} datasets\n{:<w$}  {:>13}  {:>9}\n",
            self.size, self.datasets, "algorithm", "rank", "champions"
        );
        for r in &self.rows {
            let _ = writeln!(out, "{:<w$}  {:>6.2} ± {:<4.2}  {:>9}", r.algo, r.mean_rank, r.std_rank, r.champions);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn midranks_share_tied_positions() {
        assert_eq!(midranks(&[0.9, 0.5, 0.9, 0.1]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(midranks(&[0.3, 0.3, 0.3]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn dominant_algorithm_takes_every_first_place() {
        let acc: Vec<Vec<f64>> = (0..7).map(|d| vec![0.8 + d as f64 * 0.01, 0.5]).collect();
        let t = rank_accuracies(&names(2), &acc, 1).unwrap();
        assert_eq!((t.rows[0].mean_rank, t.rows[0].std_rank, t.rows[0].champions), (1.0, 0.0, 7));
        assert_eq!((t.rows[1].mean_rank, t.rows[1].champions), (2.0, 0));
    }

    #[test]
    fn exact_ties_award_both() {
        let acc = vec![vec![0.7, 0.7]; 4];
        let t = rank_accuracies(&names(2), &acc, 1).unwrap();
        for r in &t.rows {
            assert_eq!((r.mean_rank, r.champions), (1.5, 4));
        }
    }

    #[test]
    fn single_algorithm_rejected() {
        assert!(rank_accuracies(&names(1), &[vec![0.5]], 1).is_err());
    }
}
