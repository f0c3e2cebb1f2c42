use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::noisebias::PriorSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Number of MPI layers.
    pub layers: usize,
    /// Defocus size of the nearest layer, in pixels.
    pub front_scale: f64,
    /// Defocus size of the farthest layer, in pixels.
    pub back_scale: f64,
    pub weights: LossWeights,
    pub prior: PriorSpec,
    pub seed: u64,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Differentiate through the edge masks instead of freezing them.
    pub edge_mask_grad: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            lr_start: 0.3,
            lr_end: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            layers: 12,
            front_scale: 1.0,
            back_scale: 59.0,
            weights: LossWeights::default(),
            prior: PriorSpec::default(),
            seed: 0,
            checkpoint_every: 500,
            edge_mask_grad: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return fail("iterations must be >= 1".into());
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return fail(format!(
                "need 0 < lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return fail("Adam betas must lie in [0, 1) and eps be > 0".into());
        }
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if !(self.front_scale >= 0.0) || !(self.back_scale >= 0.0) {
            return fail(format!(
                "defocus scales must be >= 0 (got front {}, back {})",
                self.front_scale, self.back_scale
            ));
        }
        if !self.front_scale.is_finite() || !self.back_scale.is_finite() {
            return fail("defocus scales must be finite".into());
        }
        if self.layers > 1 && !(self.back_scale > self.front_scale) {
            return fail("back_scale must exceed front_scale".into());
        }
        self.weights.validate()?;
        PriorSpec::new(self.prior.sigma2, self.prior.phi2).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Sets one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "lr_start" => self.lr_start = parse(key, value)?,
            "lr_end" => self.lr_end = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "front_scale" => self.front_scale = parse(key, value)?,
            "back_scale" => self.back_scale = parse(key, value)?,
            "lambda1" => self.weights.data = parse(key, value)?,
            "lambda2" => self.weights.aux = parse(key, value)?,
            "lambda3" => self.weights.intensity = parse(key, value)?,
            "lambda4" => self.weights.alpha = parse(key, value)?,
            "lambda5" => self.weights.entropy = parse(key, value)?,
            "sigma2" => self.prior.sigma2 = parse(key, value)?,
            "phi2" => self.prior.phi2 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "edge_mask_grad" => self.edge_mask_grad = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical text form; parsing it back gives an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let entries: [(&str, String); 19] = [
            ("iterations", self.iterations.to_string()),
            ("lr_start", format!("{:?}", self.lr_start)),
            ("lr_end", format!("{:?}", self.lr_end)),
            ("adam_beta1", format!("{:?}", self.adam_beta1)),
            ("adam_beta2", format!("{:?}", self.adam_beta2)),
            ("adam_eps", format!("{:?}", self.adam_eps)),
            ("layers", self.layers.to_string()),
            ("front_scale", format!("{:?}", self.front_scale)),
            ("back_scale", format!("{:?}", self.back_scale)),
            ("lambda1", format!("{:?}", w.data)),
            ("lambda2", format!("{:?}", w.aux)),
            ("lambda3", format!("{:?}", w.intensity)),
            ("lambda4", format!("{:?}", w.alpha)),
            ("lambda5", format!("{:?}", w.entropy)),
            ("sigma2", format!("{:?}", self.prior.sigma2)),
            ("phi2", format!("{:?}", self.prior.phi2)),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("edge_mask_grad", self.edge_mask_grad.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = OptimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.weights.data, 2.5e4);
        assert_eq!(c.layers, 12);
    }

    #[test]
    fn text_round_trip() {
        let mut c = OptimConfig::default();
        c.apply_text("# comment\niterations = 200\nlambda4=1.5e3\n\nsigma2 = 0.0001\nlayers=5\n")
            .unwrap();
        assert_eq!(c.iterations, 200);
        assert_eq!(c.weights.alpha, 1.5e3);
        assert_eq!(c.layers, 5);
        assert_eq!(OptimConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(OptimConfig::from_text("bogus = 1").is_err());
        assert!(OptimConfig::from_text("iterations = many").is_err());
        assert!(OptimConfig::from_text("front_scale = -2").is_err());
        assert!(OptimConfig::from_text("back_scale = -1").is_err());
        assert!(OptimConfig::from_text("lr_end = 0.5").is_err());
        assert!(OptimConfig::from_text("lambda3 = -1").is_err());
        assert!(OptimConfig::from_text("no separator").is_err());
    }
}
