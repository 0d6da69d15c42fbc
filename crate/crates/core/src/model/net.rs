//! Forward graph: embedding, axial-attention layers and the scoring head.
//!
//! Only active cells (valid rows in the requested subset x valid columns)
//! enter the graph. Positional biases are looked up by original row and
//! column index, so packing is indistinguishable from masking the inactive
//! cells with `-inf` attention logits, and inactive cells cannot influence
//! active scores.

use super::config::ModelConfig;
use super::params::{head_slots, layer_slots, ModelParams, B_COL, B_ROW, IN_W1, IN_W2, W_X, W_Y};
use crate::autodiff::{Axis, Real, Tape, Tensor, Var};
use crate::data::Block;
use crate::error::{Error, Result};
use crate::tree::Split;

/// Active cells of a block, packed row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Packed<T> {
    /// Shape of the source block.
    pub n: usize,
    pub m: usize,
    /// Original indices of the active rows and columns.
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub xn: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Packed<T> {
    /// `row_subset` further restricts the valid rows (sibling masking).
    pub fn new(b: &Block, cfg: &ModelConfig, row_subset: Option<&[bool]>) -> Result<Self> {
        if b.n > cfg.n_max || b.m > cfg.m_max || b.n_classes > cfg.k_max {
            return Err(Error::contract(format!(
                "block {}x{} with {} classes exceeds model capacity {}x{} with {} classes",
                b.n, b.m, b.n_classes, cfg.n_max, cfg.m_max, cfg.k_max
            )));
        }
        if let Some(s) = row_subset {
            if s.len() != b.n {
                return Err(Error::contract(format!("row subset has {} entries for {} rows", s.len(), b.n)));
            }
        }
        let rows: Vec<usize> = (0..b.n).filter(|&i| b.row_valid[i] && row_subset.is_none_or(|s| s[i])).collect();
        let cols: Vec<usize> = b.valid_cols().collect();
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::contract("no unmasked cell in block"));
        }
        let mut xn = Vec::with_capacity(rows.len() * cols.len());
        for &i in &rows {
            xn.extend(cols.iter().map(|&j| T::of(b.norm(i, j))));
        }
        let labels = rows.iter().map(|&i| b.y[i]).collect();
        Ok(Packed { n: b.n, m: b.m, rows, cols, xn, labels })
    }

    pub fn cells(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    /// Expands packed per-cell values to the full `n x m` grid (zeros elsewhere).
    pub fn unpack(&self, vals: &[T]) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.m];
        let mc = self.cols.len();
        for (r, &i) in self.rows.iter().enumerate() {
            for (c, &j) in self.cols.iter().enumerate() {
                out[i * self.m + j] = vals[r * mc + c].as_f64();
            }
        }
        out
    }
}

/// Handles into a recorded forward pass.
pub(crate) struct Graph {
    /// `Emb_x + Emb_y + B` before the input MLP, `[cells, d]`.
    #[cfg_attr(not(test), allow(dead_code))]
    pub pre_mlp: Var,
    /// Embedding output followed by each layer's output, `[cells, d]`.
    pub hiddens: Vec<Var>,
    /// Per-cell probabilities, `[cells]`.
    pub scores: Var,
}

pub(crate) fn build_graph<T: Real>(tape: &mut Tape<T>, p: &[Var], cfg: &ModelConfig, pk: &Packed<T>) -> Graph {
    let (nr, mc) = (pk.rows.len(), pk.cols.len());
    let cells = nr * mc;
    let x = tape.constant(Tensor::from_vec(&[cells, 1], pk.xn.clone()));
    let ex = tape.matmul(x, p[W_X]);
    let label_idx: Vec<usize> = pk.labels.iter().flat_map(|&y| std::iter::repeat_n(y, mc)).collect();
    let ey = tape.gather_rows(p[W_Y], label_idx);
    let mut pre = tape.add(ex, ey);
    if cfg.positional_bias {
        let col_idx: Vec<usize> = (0..cells).map(|c| pk.cols[c % mc]).collect();
        let row_idx: Vec<usize> = (0..cells).map(|c| pk.rows[c / mc]).collect();
        let b1 = tape.gather_rows(p[B_COL], col_idx);
        let b2 = tape.gather_rows(p[B_ROW], row_idx);
        let bias = tape.add(b1, b2);
        pre = tape.add(pre, bias);
    }
    let u = tape.matmul(pre, p[IN_W1]);
    let u = tape.silu(u);
    let mut h = tape.matmul(u, p[IN_W2]);
    let mut hiddens = vec![h];
    for l in 0..cfg.layers {
        h = tabular_layer(tape, p, cfg, l, h, nr, mc);
        hiddens.push(h);
    }
    let scores = head(tape, p, cfg, h);
    Graph { pre_mlp: pre, hiddens, scores }
}

/// One residual block: both attention branches read the same normalized
/// input, then a gated MLP with its own residual.
pub(crate) fn tabular_layer<T: Real>(
    tape: &mut Tape<T>,
    p: &[Var],
    cfg: &ModelConfig,
    l: usize,
    h: Var,
    nr: usize,
    mc: usize,
) -> Var {
    let s = layer_slots(l);
    let d = cfg.d_model;
    let x = tape.rms_norm(h, p[s.norm_attn]);
    let mut y = h;
    for (w, axis) in [(s.col, Axis::Column), (s.row, Axis::Row)] {
        let mut qkv = [x; 3];
        for (slot, &wi) in qkv.iter_mut().zip(&w[..3]) {
            let t = tape.matmul(x, p[wi]);
            *slot = tape.reshape(t, &[nr, mc, d]);
        }
        let a = tape.axial_attention(qkv[0], qkv[1], qkv[2], axis, cfg.heads);
        let a = tape.reshape(a, &[nr * mc, d]);
        let o = tape.matmul(a, p[w[3]]);
        y = tape.add(y, o);
    }
    let z = tape.rms_norm(y, p[s.norm_mlp]);
    let g = tape.matmul(z, p[s.w1]);
    let g = tape.silu(g);
    let u = tape.matmul(z, p[s.w3]);
    let gu = tape.mul(g, u);
    let f = tape.matmul(gu, p[s.w2]);
    tape.add(y, f)
}

/// Final norm, projection to one logit per cell, sigmoid.
pub(crate) fn head<T: Real>(tape: &mut Tape<T>, p: &[Var], cfg: &ModelConfig, h: Var) -> Var {
    let (gn, w, b) = head_slots(cfg.layers);
    let z = tape.rms_norm(h, p[gn]);
    let logit = tape.matmul(z, p[w]);
    let logit = tape.add(logit, p[b]);
    let s = tape.sigmoid(logit);
    let cells = tape.shape(s)[0];
    tape.reshape(s, &[cells])
}

/// Hidden states retained by [`ModelParams::trace`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub packed: Packed<T>,
    /// `hiddens[0]` is the embedding, `hiddens[l]` the output of layer `l`.
    pub hiddens: Vec<Tensor<T>>,
    /// Final scores on the full grid.
    pub scores: Vec<f64>,
}

impl<T: Real> ModelParams<T> {
    fn constants(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Scores on the full `n x m` grid; inactive cells are exactly 0.
    pub fn forward(&self, b: &Block, row_subset: Option<&[bool]>) -> Result<Vec<f64>> {
        let pk = Packed::new(b, &self.config, row_subset)?;
        let mut tape = Tape::new();
        let p = self.constants(&mut tape);
        let g = build_graph(&mut tape, &p, &self.config, &pk);
        Ok(pk.unpack(tape.value(g.scores).data()))
    }

    /// Forward pass keeping every layer's hidden state.
    pub fn trace(&self, b: &Block, row_subset: Option<&[bool]>) -> Result<Trace<T>> {
        let pk = Packed::new(b, &self.config, row_subset)?;
        let mut tape = Tape::new();
        let p = self.constants(&mut tape);
        let g = build_graph(&mut tape, &p, &self.config, &pk);
        let scores = pk.unpack(tape.value(g.scores).data());
        let hiddens = g.hiddens.iter().map(|&v| tape.value(v).clone()).collect();
        Ok(Trace { packed: pk, hiddens, scores })
    }

    /// Applies the shared head to hidden state `l` (`0..=layers`).
    pub fn probe_layer(&self, trace: &Trace<T>, l: usize) -> Result<Vec<f64>> {
        let h = trace.hiddens.get(l).ok_or_else(|| {
            Error::contract(format!("probe layer {l} out of range 0..={}", trace.hiddens.len() - 1))
        })?;
        let mut tape = Tape::new();
        let p = self.constants(&mut tape);
        let hv = tape.constant(h.clone());
        let s = head(&mut tape, &p, &self.config, hv);
        Ok(trace.packed.unpack(tape.value(s).data()))
    }
}

/// The split a score grid selects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellChoice {
    pub row: usize,
    pub col: usize,
    pub split: Split,
}

/// Arg-max over active cells (first in row-major order on ties); the
/// threshold is the raw value of the chosen cell.
pub fn score_to_split(scores: &[f64], b: &Block, row_subset: Option<&[bool]>) -> Result<CellChoice> {
    if scores.len() != b.n * b.m {
        return Err(Error::contract(format!("{} scores for a {}x{} block", scores.len(), b.n, b.m)));
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..b.n {
        if !b.row_valid[i] || row_subset.is_some_and(|s| !s[i]) {
            continue;
        }
        for j in 0..b.m {
            if !b.col_valid[j] {
                continue;
            }
            let s = scores[i * b.m + j];
            if s.is_nan() {
                return Err(Error::Numeric(format!("score at cell ({i}, {j}) is NaN")));
            }
            if best.is_none_or(|(_, _, bs)| s > bs) {
                best = Some((i, j, s));
            }
        }
    }
    let (row, col, _) = best.ok_or_else(|| Error::contract("all cells are masked"))?;
    Ok(CellChoice { row, col, split: Split { feature: col, threshold: b.raw(row, col) } })
}

/// Floating-point operation counts of one layer on an `n x m` grid
/// (a multiply-add counts as two).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerFlops {
    pub column_attention: f64,
    pub row_attention: f64,
    pub projections: f64,
    pub mlp: f64,
}

impl LayerFlops {
    pub fn total(&self) -> f64 {
        self.column_attention + self.row_attention + self.projections + self.mlp
    }
}

pub fn layer_flops(cfg: &ModelConfig, n: usize, m: usize) -> LayerFlops {
    let (n, m, d, f) = (n as f64, m as f64, cfg.d_model as f64, cfg.d_mlp as f64);
    // scores and weighted values: two (len x len x d) products per line
    LayerFlops {
        column_attention: m * 2.0 * 2.0 * n * n * d,
        row_attention: n * 2.0 * 2.0 * m * m * d,
        projections: 8.0 * 2.0 * n * m * d * d,
        mlp: 3.0 * 2.0 * n * m * d * f,
    }
}
