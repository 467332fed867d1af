//! Run configuration. Files are TOML with flat dotted keys such as
//! `gan.lambda_ver_dis = 0.1`; every key is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::ClassifierConfig;
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::pipeline::TrainConfig;

/// Jitter copies used as the traditional augmentation baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaConfig {
    pub copies: usize,
    pub sigma: f64,
}

impl Default for TaConfig {
    fn default() -> Self {
        Self { copies: 2, sigma: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub classifier: ClassifierConfig,
    pub gan: GanConfig,
    pub train: TrainConfig,
    pub ta: TaConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut collect = |r: Result<()>| {
            if let Err(e) = r {
                problems.push(match e {
                    Error::InvalidConfig(msg) => msg,
                    other => other.to_string(),
                });
            }
        };
        collect(self.dataset.validate().map_err(|e| prefix("dataset", e)));
        collect(self.gan.weights().validate().map_err(|e| prefix("gan", e)));
        collect(self.train.validate());
        let c = &self.classifier;
        if c.warm_epochs > c.epochs {
            collect(Err(Error::InvalidConfig(format!(
                "classifier.warm_epochs {} exceeds classifier.epochs {}",
                c.warm_epochs, c.epochs
            ))));
        }
        if c.epochs == 0 || c.batch_size == 0 || c.hidden == 0 || c.penultimate == 0 {
            collect(Err(Error::InvalidConfig(
                "classifier.epochs, batch_size, hidden and penultimate must be >= 1".into(),
            )));
        }
        if !(c.lr >= 0.0 && c.lr.is_finite() && c.l2 >= 0.0) {
            collect(Err(Error::InvalidConfig("classifier.lr and classifier.l2 must be >= 0".into())));
        }
        if self.gan.generator_hidden.contains(&0) || self.gan.discriminator_hidden.contains(&0) {
            collect(Err(Error::InvalidConfig("gan hidden widths must be >= 1".into())));
        }
        if !(self.ta.sigma >= 0.0 && self.ta.sigma.is_finite()) {
            collect(Err(Error::InvalidConfig(format!("ta.sigma must be >= 0, got {}", self.ta.sigma))));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key on its own `a.b = value` line, sorted.
    pub fn to_flat_toml(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serialises");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// Hex SHA-256 of [`RunConfig::to_flat_toml`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_flat_toml().as_bytes()))
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{section}: {msg}")),
        other => other,
    }
}

fn flatten(path: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{path} = {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn dotted_keys() {
        let cfg = RunConfig::parse("seed = 7\ngan.lambda_ver_dis = 0.05\ntrain.epochs = 3\ntrain.warm_epochs = 1\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.gan.lambda_ver_dis, 0.05);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.gan.lambda_hor_dis, 0.001);
    }

    #[test]
    fn flat_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.dataset.split = [0.5, 0.25, 0.25];
        cfg.train.cprime_mode = crate::pipeline::CPrimeMode::PostHoc;
        let text = cfg.to_flat_toml();
        assert!(text.lines().all(|l| !l.starts_with('[')));
        assert!(text.contains("gan.lambda_ver_dis = 0.1\n"));
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::parse("gan.lambda_typo = 1\n").is_err());
        let cfg = RunConfig::parse("gan.lambda_hor_dis = 0.05\ntrain.warm_epochs = 60\n").unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("lambda_hor_dis"), "{msg}");
        assert!(msg.contains("warm_epochs"), "{msg}");
    }
}
