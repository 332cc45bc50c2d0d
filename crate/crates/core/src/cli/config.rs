use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{ModelConfig, StackingPolicy};
use crate::data::SynthParams;
use crate::error::{Error, Result};
use crate::training::LossConfig;

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "PROKAN_SEED";

/// Flat run configuration. Every key is optional in the TOML file; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,

    // data generation
    pub n_cases: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub blob_count_min: usize,
    pub blob_count_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub noise_sigma: f64,
    pub contrast: f64,

    // features and sampling
    pub patch_radius: usize,
    pub samples_per_class: usize,
    pub val_fraction: f64,

    // model and optimiser
    pub hidden_width: usize,
    pub init_scale: f64,
    pub domain_min: f64,
    pub domain_max: f64,
    pub momentum: f64,
    pub batch_size: usize,

    // loss
    pub bce_weight: f64,
    pub dice_weight: f64,
    pub smooth_eps: f64,

    // stacking policy
    pub epsilon: f64,
    pub t_plateau: usize,
    pub decline_window: usize,
    pub cooldown: usize,
    pub max_blocks: usize,
    pub grid_size: usize,
    pub degree: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub delta_grid: usize,
    pub delta_degree: usize,
    pub delta_lambda: f64,
    pub alpha: f64,
    pub max_epochs: usize,

    // cross-validation and gradient audit
    pub folds: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthParams::default();
        let model = ModelConfig::default();
        let loss = LossConfig::default();
        let policy = StackingPolicy::default();
        Self {
            seed: 42,
            output_dir: PathBuf::from("prokan_out"),
            n_cases: synth.n_cases,
            dims: synth.dims,
            spacing: synth.spacing,
            blob_count_min: synth.blob_count_range.0,
            blob_count_max: synth.blob_count_range.1,
            radius_min: synth.radius_range.0,
            radius_max: synth.radius_range.1,
            noise_sigma: synth.noise_sigma,
            contrast: synth.contrast,
            patch_radius: 1,
            samples_per_class: 64,
            val_fraction: 0.2,
            hidden_width: model.hidden_width,
            init_scale: model.init_scale,
            domain_min: model.domain_min,
            domain_max: model.domain_max,
            momentum: model.momentum,
            batch_size: model.batch_size,
            bce_weight: loss.bce_weight,
            dice_weight: loss.dice_weight,
            smooth_eps: loss.smooth_eps,
            epsilon: policy.epsilon,
            t_plateau: policy.t_plateau,
            decline_window: policy.decline_window,
            cooldown: policy.cooldown,
            max_blocks: policy.max_blocks,
            grid_size: policy.grid_size,
            degree: policy.degree,
            learning_rate: policy.learning_rate,
            l2_lambda: policy.l2_lambda,
            delta_grid: policy.delta_grid,
            delta_degree: policy.delta_degree,
            delta_lambda: policy.delta_lambda,
            alpha: policy.alpha,
            max_epochs: policy.max_epochs,
            folds: 10,
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn synth(&self) -> SynthParams {
        SynthParams {
            n_cases: self.n_cases,
            dims: self.dims,
            spacing: self.spacing,
            blob_count_range: (self.blob_count_min, self.blob_count_max),
            radius_range: (self.radius_min, self.radius_max),
            noise_sigma: self.noise_sigma,
            contrast: self.contrast,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            hidden_width: self.hidden_width,
            init_scale: self.init_scale,
            domain_min: self.domain_min,
            domain_max: self.domain_max,
            momentum: self.momentum,
            batch_size: self.batch_size,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            bce_weight: self.bce_weight,
            dice_weight: self.dice_weight,
            smooth_eps: self.smooth_eps,
        }
    }

    pub fn policy(&self) -> StackingPolicy {
        StackingPolicy {
            epsilon: self.epsilon,
            t_plateau: self.t_plateau,
            decline_window: self.decline_window,
            cooldown: self.cooldown,
            max_blocks: self.max_blocks,
            grid_size: self.grid_size,
            degree: self.degree,
            learning_rate: self.learning_rate,
            l2_lambda: self.l2_lambda,
            delta_grid: self.delta_grid,
            delta_degree: self.delta_degree,
            delta_lambda: self.delta_lambda,
            alpha: self.alpha,
            max_epochs: self.max_epochs,
        }
    }

    /// Re-checks every numeric constraint of the underlying types.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.synth()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.loss().validate()?;
        self.policy().validate()?;
        if self.hidden_width == 0 {
            return cfg("hidden_width must be positive".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return cfg("init_scale must be non-negative".into());
        }
        if !(self.domain_min < self.domain_max) || !self.domain_min.is_finite() || !self.domain_max.is_finite() {
            return cfg(format!("domain [{}, {}] invalid", self.domain_min, self.domain_max));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return cfg(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return cfg("batch_size must be positive".into());
        }
        if self.samples_per_class == 0 {
            return cfg("samples_per_class must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return cfg(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        if self.patch_radius > 3 {
            return cfg("patch_radius must be at most 3".into());
        }
        if self.folds < 2 {
            return cfg("folds must be at least 2".into());
        }
        if !(self.gradcheck_step > 0.0 && self.gradcheck_step <= 1e-3) {
            return cfg("gradcheck_step must lie in (0, 1e-3]".into());
        }
        if !(self.gradcheck_tolerance > 0.0) {
            return cfg("gradcheck_tolerance must be positive".into());
        }
        Ok(())
    }

    /// Builds a config from an optional TOML file, `key=value` overrides and
    /// the seed environment variable, in that order of precedence (lowest
    /// first), then validates it.
    pub fn load(path: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            table.insert(key.trim().to_string(), parse_value(raw.trim()));
        }
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
            let seed = i64::try_from(seed).map_err(|_| Error::Config(format!("{SEED_ENV} too large")))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let c = RunConfig::load(None, &[], None).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn overrides_and_env() {
        let c = RunConfig::load(
            None,
            &["max_epochs=3".into(), "output_dir=/tmp/x".into(), "dims=[10,10,10]".into()],
            Some("7"),
        )
        .unwrap();
        assert_eq!(c.max_epochs, 3);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.dims, [10, 10, 10]);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::load(None, &["bogus=1".into()], None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["t_plateau=1".into()], None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["momentum=1.0".into()], None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["dims=[4,16,16]".into()], None), Err(Error::Config(_))));
        assert!(RunConfig::load(None, &[], Some("abc")).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        let mut c = RunConfig::default();
        c.hidden_width = 4;
        std::fs::write(&p, toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(RunConfig::load(Some(&p), &[], None).unwrap(), c);
    }
}
