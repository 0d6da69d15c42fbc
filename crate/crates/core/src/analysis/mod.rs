//! Evaluation protocols: ensemble accuracy curves, rank tables, empirical
//! bias and variance, split-preference and layer-probe studies.

mod algo;
mod bias_variance;
mod correlation;
mod eval;
mod rank;

pub use algo::Algo;
pub use bias_variance::{bias_variance, bias_variance_of, BiasVariance, BiasVarianceConfig};
pub use correlation::{
    block_matrix, indicator_correlation, layer_probe_study, preference_record, preference_study, probe_correlations,
    sample_blocks, split_correlation, split_correlation_detail, BucketRow, Correlation, PreferenceConfig,
    PreferenceRecord, PreferenceStudy, ProbeStudy, PREFERENCE_FORMAT, PROBE_FORMAT,
};
pub use eval::{default_sizes, evaluate, BlockHash, EvalConfig, EvalReport, EvalRow, EVAL_FORMAT};
pub use rank::{midranks, rank_accuracies, rank_table, RankRow, RankTable, RANK_FORMAT};

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation, `None` for fewer than two points or zero spread.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Comment header naming the file format and the invoking command.
pub fn preamble(format: &str, command: &str, extra: &[(&str, String)]) -> String {
    let mut out = format!("# format = {format}\n# command = {command}\n");
    for (k, v) in extra {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out
}

/// `key = value` pairs from the leading `#` lines of a report.
pub fn read_preamble(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map_while(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}

#[cfg(test)]
mod tests;
