use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Network shape and capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_max: usize,
    pub m_max: usize,
    pub k_max: usize,
    /// Radius of the smoothed split target.
    pub sigma: f64,
    pub positional_bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperFull,
    Desk,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::PaperFull => "paper-full",
            Preset::Desk => "desk",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-full" => Ok(Preset::PaperFull),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::validation(format!("unknown preset '{s}' (expected paper-full or desk)"))),
        }
    }
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::PaperFull => ModelConfig {
                layers: 12,
                heads: 12,
                d_model: 768,
                d_mlp: 3072,
                n_max: 256,
                m_max: 10,
                k_max: 10,
                sigma: 0.05,
                positional_bias: true,
            },
            Preset::Desk => ModelConfig {
                layers: 4,
                heads: 4,
                d_model: 64,
                d_mlp: 256,
                n_max: 256,
                m_max: 10,
                k_max: 4,
                sigma: 0.05,
                positional_bias: true,
            },
        }
    }

    pub fn desk() -> Self {
        Self::preset(Preset::Desk)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_mlp", self.d_mlp),
            ("n_max", self.n_max),
            ("m_max", self.m_max),
            ("k_max", self.k_max),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::validation(format!("{k} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::validation(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// `key = value` lines, one per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("d_model", self.d_model.to_string()),
            ("d_mlp", self.d_mlp.to_string()),
            ("n_max", self.n_max.to_string()),
            ("m_max", self.m_max.to_string()),
            ("k_max", self.k_max.to_string()),
            ("sigma", format!("{}", self.sigma)),
            ("positional_bias", self.positional_bias.to_string()),
        ]
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::validation(format!("invalid value '{v}' for {k}")))
        }
        match key {
            "preset" => *self = Self::preset(value.parse()?),
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "d_mlp" => self.d_mlp = num(key, value)?,
            "n_max" => self.n_max = num(key, value)?,
            "m_max" => self.m_max = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "positional_bias" => self.positional_bias = num(key, value)?,
            _ => return Err(Error::validation(format!("unknown model key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the desk preset (or the
    /// `preset` line, which must come first when present).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::desk();
        for (k, v) in parse_kv(text)? {
            c.set(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Splits `key = value` lines; blank lines and `#` comments are ignored.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for p in [Preset::PaperFull, Preset::Desk] {
            let c = ModelConfig::preset(p);
            c.validate().unwrap();
            assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        }
        let c = ModelConfig::from_text("preset = paper-full\nsigma = 0.1 # wider\n").unwrap();
        assert_eq!((c.layers, c.sigma), (12, 0.1));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ModelConfig::from_text("heads = 5").is_err());
        assert!(ModelConfig::from_text("sigma = 0").is_err());
        assert!(ModelConfig::from_text("depth = 3").is_err());
        assert!(ModelConfig::from_text("layers 3").is_err());
    }
}
