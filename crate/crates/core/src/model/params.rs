use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::autodiff::{Container, Real, Tensor};
use crate::error::{Error, Result};
use crate::seed;

pub const INIT_STD: f64 = 0.02;

/// Slots of the tensors shared by all layers.
pub(crate) const W_X: usize = 0;
pub(crate) const W_Y: usize = 1;
pub(crate) const B_COL: usize = 2;
pub(crate) const B_ROW: usize = 3;
pub(crate) const IN_W1: usize = 4;
pub(crate) const IN_W2: usize = 5;
const GLOBALS: usize = 6;
const PER_LAYER: usize = 13;

/// Slots of one tabular layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlots {
    pub norm_attn: usize,
    /// q, k, v, o for column attention.
    pub col: [usize; 4],
    pub row: [usize; 4],
    pub norm_mlp: usize,
    pub w1: usize,
    pub w3: usize,
    pub w2: usize,
}

pub(crate) fn layer_slots(l: usize) -> LayerSlots {
    let b = GLOBALS + PER_LAYER * l;
    LayerSlots {
        norm_attn: b,
        col: [b + 1, b + 2, b + 3, b + 4],
        row: [b + 5, b + 6, b + 7, b + 8],
        norm_mlp: b + 9,
        w1: b + 10,
        w3: b + 11,
        w2: b + 12,
    }
}

/// Slots of the scoring head: final norm gain, projection, bias.
pub(crate) fn head_slots(layers: usize) -> (usize, usize, usize) {
    let b = GLOBALS + PER_LAYER * layers;
    (b, b + 1, b + 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Canonical `(name, shape, init)` list for a configuration.
fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, f) = (c.d_model, c.d_mlp);
    let mut v = vec![
        ("embed.w_x".to_string(), vec![1, d], Init::Normal),
        ("embed.w_y".to_string(), vec![c.k_max, d], Init::Normal),
        ("embed.b_col".to_string(), vec![c.m_max, d], Init::Zeros),
        ("embed.b_row".to_string(), vec![c.n_max, d], Init::Zeros),
        ("embed.mlp.w1".to_string(), vec![d, f], Init::Normal),
        ("embed.mlp.w2".to_string(), vec![f, d], Init::Normal),
    ];
    for l in 0..c.layers {
        v.push((format!("layer{l}.norm_attn"), vec![d], Init::Ones));
        for branch in ["col", "row"] {
            for w in ["wq", "wk", "wv", "wo"] {
                v.push((format!("layer{l}.{branch}.{w}"), vec![d, d], Init::Normal));
            }
        }
        v.push((format!("layer{l}.norm_mlp"), vec![d], Init::Ones));
        v.push((format!("layer{l}.mlp.w1"), vec![d, f], Init::Normal));
        v.push((format!("layer{l}.mlp.w3"), vec![d, f], Init::Normal));
        v.push((format!("layer{l}.mlp.w2"), vec![f, d], Init::Normal));
    }
    v.push(("head.norm".to_string(), vec![d], Init::Ones));
    v.push(("head.w".to_string(), vec![d, 1], Init::Normal));
    v.push(("head.b".to_string(), vec![1], Init::Zeros));
    v
}

/// All learnable tensors of a network, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

/// Normal draw truncated at two standard deviations.
fn truncated_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl<T: Real> ModelParams<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    /// Like [`init`](Self::init) with a custom projection scale; positional
    /// biases still start at zero unless `std` is applied via `perturb`.
    pub fn init_with_std(config: &ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (i, (name, shape, init)) in layout(config).into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Normal => {
                    let mut rng = seed::rng_at(seed, &[i as u64]);
                    (0..n).map(|_| T::of(truncated_normal(&mut rng, std))).collect()
                }
            };
            names.push(name);
            tensors.push(Tensor::from_vec(&shape, data));
        }
        Ok(ModelParams { config: config.clone(), names, tensors })
    }

    /// Adds `N(0, std)` noise to every tensor (including biases and gains);
    /// used to build generic test points away from the symmetric init.
    pub fn perturb(&mut self, seed: u64, std: f64) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            let mut rng = seed::rng_at(seed, &[i as u64, 1]);
            for v in t.data_mut() {
                *v += T::of(rng.sample::<f64, _>(StandardNormal) * std);
            }
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Writes the config under meta key `model` and every tensor under
    /// `param/<name>`.
    pub fn store(&self, c: &mut Container) {
        c.set_meta("model", self.config.to_text());
        for (n, t) in self.names.iter().zip(&self.tensors) {
            c.push_real(&format!("param/{n}"), t);
        }
    }

    pub fn restore(c: &Container) -> Result<Self> {
        let config = ModelConfig::from_text(c.require_meta("model")?)?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, _) in layout(&config) {
            let t: Tensor<T> = c.real(&format!("param/{name}"))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::format(format!("parameter {name} has shape {:?}, want {shape:?}", t.shape())));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams { config, names, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_slots() {
        let c = ModelConfig { layers: 2, ..ModelConfig::desk() };
        let p = ModelParams::<f64>::init(&c, 1).unwrap();
        assert_eq!(p.names[W_X], "embed.w_x");
        assert_eq!(p.names[IN_W2], "embed.mlp.w2");
        let s = layer_slots(1);
        assert_eq!(p.names[s.norm_attn], "layer1.norm_attn");
        assert_eq!(p.names[s.col[3]], "layer1.col.wo");
        assert_eq!(p.names[s.row[0]], "layer1.row.wq");
        assert_eq!(p.names[s.w2], "layer1.mlp.w2");
        let (n, w, b) = head_slots(2);
        assert_eq!((p.names[n].as_str(), p.names[w].as_str(), p.names[b].as_str()), ("head.norm", "head.w", "head.b"));
        assert_eq!(p.tensors.len(), b + 1);
    }

    #[test]
    fn init_is_truncated_and_seeded() {
        let c = ModelConfig::desk();
        let p = ModelParams::<f64>::init(&c, 3).unwrap();
        assert_eq!(p, ModelParams::init(&c, 3).unwrap());
        assert_ne!(p, ModelParams::init(&c, 4).unwrap());
        let w = p.get("layer0.col.wq").unwrap().data();
        assert!(w.iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let sd = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        // std of a normal truncated at 2 sigma is 0.8796 sigma
        assert!((sd / INIT_STD - 0.8796).abs() < 0.03, "{sd}");
        assert!(p.get("embed.b_row").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("head.norm").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn container_round_trip() {
        let c = ModelConfig { layers: 1, d_model: 8, heads: 2, d_mlp: 16, ..ModelConfig::desk() };
        let p = ModelParams::<f32>::init(&c, 5).unwrap();
        let mut k = Container::new();
        p.store(&mut k);
        assert_eq!(ModelParams::<f32>::restore(&k).unwrap(), p);
        assert!(ModelParams::<f64>::restore(&k).is_err());
    }
}
