use rand::seq::index;
use rand::Rng;

use super::block::Block;
use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// One axis-aligned cut of the XOR partition tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XorBoundary {
    pub axis: usize,
    pub value: f64,
}

/// A nested XOR problem on `[-1, 1]^2`.
///
/// Boundaries form a full binary tree in heap order (index 0 is the root,
/// children of `k` at `2k + 1`, `2k + 2`). Level 1 has 3 cuts, level 2 has 15.
/// Axes alternate with depth and the label of a point is the parity of the
/// number of "greater than" turns on its path.
#[derive(Debug, Clone, PartialEq)]
pub struct XorSpec {
    pub level: u8,
    pub boundaries: Vec<XorBoundary>,
    pub noise_rate: f64,
    pub extra_noise_dims: usize,
    pub seed: u64,
    /// Column positions of the two signal coordinates once materialized.
    pub signal_columns: Option<[usize; 2]>,
}

impl XorSpec {
    pub fn new(level: u8, noise_rate: f64, extra_noise_dims: usize, seed: u64) -> Self {
        XorSpec {
            level,
            boundaries: Vec::new(),
            noise_rate,
            extra_noise_dims,
            seed,
            signal_columns: None,
        }
    }

    /// Depth of the partition tree: 2 for level 1, 4 for level 2.
    pub fn depth(&self) -> usize {
        2 * self.level as usize
    }

    pub fn split_count(&self) -> usize {
        (1 << self.depth()) - 1
    }

    pub fn n_features(&self) -> usize {
        2 + self.extra_noise_dims
    }

    /// Highest accuracy any classifier can reach under the label noise.
    pub fn bayes_accuracy(&self) -> f64 {
        1.0 - self.noise_rate
    }

    pub fn is_materialized(&self) -> bool {
        !self.boundaries.is_empty() && self.signal_columns.is_some()
    }

    fn check_params(&self) -> Result<()> {
        if !(self.level == 1 || self.level == 2) {
            return Err(Error::contract(format!("XOR level must be 1 or 2, got {}", self.level)));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(Error::contract(format!(
                "noise rate must lie in [0, 0.5), got {}",
                self.noise_rate
            )));
        }
        Ok(())
    }

    /// Draws the cut positions and signal-column placement from the seed.
    pub fn materialize(&self) -> Result<XorSpec> {
        self.check_params()?;
        let mut rng = seed::rng_at(self.seed, &[0]);
        let root_axis = rng.random_range(0..2usize);
        let mut boundaries = vec![XorBoundary { axis: 0, value: 0.0 }; self.split_count()];
        // (node, lo, hi) with lo/hi the box corners
        let mut stack = vec![(0usize, [-1.0f64, -1.0], [1.0f64, 1.0])];
        while let Some((k, lo, hi)) = stack.pop() {
            let depth = usize::BITS as usize - 1 - (k + 1).leading_zeros() as usize;
            let axis = root_axis ^ (depth % 2);
            let value = rng.random_range(lo[axis]..hi[axis]);
            boundaries[k] = XorBoundary { axis, value };
            if 2 * k + 2 < boundaries.len() {
                let (mut left_hi, mut right_lo) = (hi, lo);
                left_hi[axis] = value;
                right_lo[axis] = value;
                stack.push((2 * k + 2, right_lo, hi));
                stack.push((2 * k + 1, lo, left_hi));
            }
        }
        let cols = index::sample(&mut rng, self.n_features(), 2).into_vec();
        let spec = XorSpec {
            boundaries,
            signal_columns: Some([cols[0], cols[1]]),
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks cut counts and that every cut lies inside the box it dissects.
    pub fn validate(&self) -> Result<()> {
        self.check_params()?;
        if self.boundaries.len() != self.split_count() {
            return Err(Error::validation(format!(
                "level {} needs {} boundaries, found {}",
                self.level,
                self.split_count(),
                self.boundaries.len()
            )));
        }
        let mut stack = vec![(0usize, [-1.0f64, -1.0], [1.0f64, 1.0])];
        while let Some((k, lo, hi)) = stack.pop() {
            let b = self.boundaries[k];
            if b.axis > 1 || b.value < lo[b.axis] || b.value > hi[b.axis] {
                return Err(Error::validation(format!("boundary {k} lies outside its box")));
            }
            if 2 * k + 2 < self.boundaries.len() {
                let (mut left_hi, mut right_lo) = (hi, lo);
                left_hi[b.axis] = b.value;
                right_lo[b.axis] = b.value;
                stack.push((2 * k + 1, lo, left_hi));
                stack.push((2 * k + 2, right_lo, hi));
            }
        }
        if let Some([a, b]) = self.signal_columns {
            if a == b || a >= self.n_features() || b >= self.n_features() {
                return Err(Error::validation("signal columns must be distinct and in range"));
            }
        }
        Ok(())
    }

    /// Noise-free label of a point in signal coordinates.
    pub fn clean_label(&self, p: [f64; 2]) -> usize {
        let mut k = 0;
        let mut parity = 0;
        while k < self.boundaries.len() {
            let b = self.boundaries[k];
            if p[b.axis] > b.value {
                parity ^= 1;
                k = 2 * k + 2;
            } else {
                k = 2 * k + 1;
            }
        }
        parity
    }

    /// Draws `n` points; `stream` selects an independent sample of the same
    /// problem (e.g. a training draw and a test draw).
    pub fn sample(&self, n: usize, stream: u64) -> Result<Dataset> {
        if !self.is_materialized() {
            return Err(Error::contract("XOR spec must be materialized before sampling"));
        }
        let [sa, sb] = self.signal_columns.expect("materialized");
        let m = self.n_features();
        let mut rng = seed::rng_at(self.seed, &[1, stream]);
        let mut x = vec![0.0; n * m];
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut x[i * m..(i + 1) * m];
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..=1.0);
            }
            let label = self.clean_label([row[sa], row[sb]]);
            let flip = self.noise_rate > 0.0 && rng.random::<f64>() < self.noise_rate;
            y.push(label ^ flip as usize);
        }
        let name = format!("xor-l{}-s{}", self.level, self.seed);
        Dataset::from_numeric(name, x, m, y, 2)
    }
}

pub const XOR_SPEC_FORMAT: &str = "metatree-xor-spec 1";

impl XorSpec {
    /// `key = value` lines; boundaries appear in heap order as `axis value`.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "format = {XOR_SPEC_FORMAT}\nlevel = {}\nnoise_rate = {}\nextra_noise_dims = {}\nseed = {}\n",
            self.level, self.noise_rate, self.extra_noise_dims, self.seed
        );
        if let Some([a, b]) = self.signal_columns {
            s.push_str(&format!("signal_columns = {a},{b}\n"));
        }
        for b in &self.boundaries {
            s.push_str(&format!("boundary = {} {}\n", b.axis, b.value));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<XorSpec> {
        let bad = |k: &str, v: &str| Error::format(format!("XOR spec: bad value '{v}' for {k}"));
        let mut spec = XorSpec::new(1, 0.0, 0, 0);
        let mut format_ok = false;
        for (k, v) in crate::model::parse_kv(text)? {
            let v = v.as_str();
            match k.as_str() {
                "format" => format_ok = v == XOR_SPEC_FORMAT,
                "level" => spec.level = v.parse().map_err(|_| bad(&k, v))?,
                "noise_rate" => spec.noise_rate = v.parse().map_err(|_| bad(&k, v))?,
                "extra_noise_dims" => spec.extra_noise_dims = v.parse().map_err(|_| bad(&k, v))?,
                "seed" => spec.seed = v.parse().map_err(|_| bad(&k, v))?,
                "signal_columns" => {
                    let (a, b) = v.split_once(',').ok_or_else(|| bad(&k, v))?;
                    spec.signal_columns =
                        Some([a.trim().parse().map_err(|_| bad(&k, v))?, b.trim().parse().map_err(|_| bad(&k, v))?]);
                }
                "boundary" => {
                    let (a, x) = v.split_once(' ').ok_or_else(|| bad(&k, v))?;
                    spec.boundaries.push(XorBoundary {
                        axis: a.parse().map_err(|_| bad(&k, v))?,
                        value: x.trim().parse().map_err(|_| bad(&k, v))?,
                    });
                }
                _ => return Err(Error::format(format!("XOR spec: unknown key '{k}'"))),
            }
        }
        if !format_ok {
            return Err(Error::format(format!("expected a '{XOR_SPEC_FORMAT}' file")));
        }
        if !spec.boundaries.is_empty() {
            spec.validate()?;
        }
        Ok(spec)
    }
}

/// Materializes `spec` and draws an `n`-point block from it.
pub fn gen_xor(spec: &XorSpec, n: usize) -> Result<(Block, XorSpec)> {
    if n < 4 {
        return Err(Error::contract(format!("gen_xor needs n >= 4, got {n}")));
    }
    let spec = if spec.is_materialized() {
        spec.validate()?;
        spec.clone()
    } else {
        spec.materialize()?
    };
    let ds = spec.sample(n, 0)?;
    Ok((Block::from_dataset(&ds)?, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_text_round_trips() {
        let spec = XorSpec::new(2, 0.15, 3, 9).materialize().unwrap();
        assert_eq!(XorSpec::from_text(&spec.to_text()).unwrap(), spec);
        assert!(XorSpec::from_text("level = 1").is_err());
    }

    #[test]
    fn cut_counts_per_level() {
        assert_eq!(XorSpec::new(1, 0.0, 0, 1).materialize().unwrap().boundaries.len(), 3);
        assert_eq!(XorSpec::new(2, 0.0, 0, 1).materialize().unwrap().boundaries.len(), 15);
    }

    #[test]
    fn boundaries_inside_boxes_for_many_seeds() {
        for s in 0..200 {
            for level in [1, 2] {
                XorSpec::new(level, 0.1, 3, s).materialize().unwrap().validate().unwrap();
            }
        }
    }

    #[test]
    fn noiseless_labels_follow_quadrant_parity() {
        let (block, spec) = gen_xor(&XorSpec::new(1, 0.0, 0, 5), 256).unwrap();
        let [sa, sb] = spec.signal_columns.unwrap();
        let root = spec.boundaries[0];
        for i in 0..block.n {
            let p = [block.raw(i, sa), block.raw(i, sb)];
            let right = p[root.axis] > root.value;
            let child = spec.boundaries[if right { 2 } else { 1 }];
            let expected = (right as usize) ^ ((p[child.axis] > child.value) as usize);
            assert_eq!(block.y[i], expected);
        }
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let spec = XorSpec::new(2, 0.0, 4, 77);
        let (a, sa) = gen_xor(&spec, 200).unwrap();
        let (b, sb) = gen_xor(&spec, 200).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(sa, sb);
        assert_eq!(a.raw_x, b.raw_x);
    }

    #[test]
    fn label_noise_rate_is_respected() {
        let spec = XorSpec::new(1, 0.15, 8, 3).materialize().unwrap();
        let ds = spec.sample(20_000, 9).unwrap();
        let [sa, sb] = spec.signal_columns.unwrap();
        let flipped = (0..ds.n_rows())
            .filter(|&i| spec.clean_label([ds.value(i, sa), ds.value(i, sb)]) != ds.y[i])
            .count() as f64
            / ds.n_rows() as f64;
        assert!((flipped - 0.15).abs() < 0.01, "{flipped}");
        assert_eq!(ds.n_features, 10);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(XorSpec::new(3, 0.0, 0, 1).materialize().is_err());
        assert!(XorSpec::new(1, 0.5, 0, 1).materialize().is_err());
        assert!(gen_xor(&XorSpec::new(1, 0.0, 0, 1), 3).is_err());
    }
}
