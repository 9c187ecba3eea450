use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use socnav::eval::digest_json;
use socnav::planners::BaselineConfig;
use socnav::{Error, SamplingConfig, SfmParams, SimConfig, TrainConfig};

/// Held-out evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n: usize,
    pub seed: u64,
    pub points: usize,
    pub sampling: SamplingConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 7,
            points: 200,
            sampling: SamplingConfig::single_static_near_path(),
        }
    }
}

/// Everything a run depends on besides file paths and seeds given as flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sfm: SfmParams,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.sim().validate()?;
        self.train.validate()?;
        self.baseline.validate()?;
        self.eval.sampling.validate(&self.sfm)?;
        if self.eval.n == 0 || self.eval.points < 2 {
            return Err(Error::InvalidConfig(
                "eval.n must be positive and eval.points at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            sfm: self.sfm,
            sampling: self.sampling.clone(),
        }
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }
}
