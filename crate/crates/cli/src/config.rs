//! Flat key = value run configuration shared by all subcommands. Every key
//! is optional; anything unset falls back to the library defaults, and any
//! unknown key is rejected with the accepted list.

use moclip_core::dataset::DatasetConfig;
use moclip_core::encoder::EncoderConfig;
use moclip_core::error::{Error, Result};
use moclip_core::metrics::EvalConfig;
use moclip_core::trainer::TrainConfig;
use std::collections::BTreeMap;
use std::path::Path;

pub const ACCEPTED_KEYS: &[&str] = &[
    // dataset
    "classes",
    "samples_per_class",
    "frames",
    "mirror_augment",
    "split_train",
    "split_val",
    "split_test",
    // encoder
    "dim",
    "feat",
    "heads",
    "spatial_layers",
    "temporal_layers",
    "text_layers",
    "context",
    // training
    "total_epochs",
    "freeze_epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "grad_clip",
    "lambda_distill",
    "positional_encoding",
    "cross_limb",
    "dense_w",
    "naive_mode",
    // evaluation
    "pool_size",
    "trials",
    "runs",
    "variant_groups",
    // shared
    "seed",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{line}'", lineno + 1))
            })?;
            let key = key.trim();
            if !ACCEPTED_KEYS.contains(&key) {
                return Err(Error::Config(format!(
                    "unknown config key '{key}'; accepted keys: {}",
                    ACCEPTED_KEYS.join(", ")
                )));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(RunConfig { entries })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn get<T: std::str::FromStr>(&self, key: &str, into: &mut T) -> Result<()> {
        if let Some(v) = self.entries.get(key) {
            *into = v.parse().map_err(|_| {
                Error::Config(format!("config key '{key}': cannot parse '{v}'"))
            })?;
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<DatasetConfig> {
        let mut cfg = DatasetConfig::default();
        if let Some(v) = self.entries.get("classes") {
            cfg.classes = v.split(',').map(|s| s.trim().to_string()).collect();
        }
        self.get("samples_per_class", &mut cfg.samples_per_class)?;
        self.get("frames", &mut cfg.frames)?;
        self.get("seed", &mut cfg.seed)?;
        self.get("mirror_augment", &mut cfg.mirror_augment)?;
        self.get("split_train", &mut cfg.split_ratios[0])?;
        self.get("split_val", &mut cfg.split_ratios[1])?;
        self.get("split_test", &mut cfg.split_ratios[2])?;
        Ok(cfg)
    }

    pub fn encoder(&self) -> Result<EncoderConfig> {
        let mut cfg = EncoderConfig::default();
        self.get("dim", &mut cfg.dim)?;
        self.get("feat", &mut cfg.feat)?;
        self.get("heads", &mut cfg.heads)?;
        self.get("spatial_layers", &mut cfg.spatial_layers)?;
        self.get("temporal_layers", &mut cfg.temporal_layers)?;
        self.get("text_layers", &mut cfg.text_layers)?;
        self.get("context", &mut cfg.context)?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        self.get("total_epochs", &mut cfg.total_epochs)?;
        self.get("freeze_epochs", &mut cfg.freeze_epochs)?;
        self.get("batch_size", &mut cfg.batch_size)?;
        self.get("lr", &mut cfg.lr)?;
        self.get("beta1", &mut cfg.beta1)?;
        self.get("beta2", &mut cfg.beta2)?;
        self.get("eps", &mut cfg.eps)?;
        self.get("weight_decay", &mut cfg.weight_decay)?;
        self.get("grad_clip", &mut cfg.grad_clip)?;
        self.get("lambda_distill", &mut cfg.lambda_distill)?;
        self.get("seed", &mut cfg.seed)?;
        self.get("positional_encoding", &mut cfg.positional_encoding)?;
        self.get("cross_limb", &mut cfg.cross_limb)?;
        self.get("dense_w", &mut cfg.dense_w)?;
        self.get("naive_mode", &mut cfg.naive_mode)?;
        Ok(cfg)
    }

    pub fn eval(&self) -> Result<EvalConfig> {
        let mut cfg = EvalConfig::default();
        self.get("pool_size", &mut cfg.pool_size)?;
        self.get("trials", &mut cfg.trials)?;
        self.get("runs", &mut cfg.runs)?;
        self.get("seed", &mut cfg.seed)?;
        self.get("variant_groups", &mut cfg.variant_groups)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let cfg = RunConfig::parse(
            "# comment\n total_epochs = 5 \nlambda_distill=0.4\nclasses = walk, jump\n",
        )
        .unwrap();
        assert_eq!(cfg.train().unwrap().total_epochs, 5);
        assert!((cfg.train().unwrap().lambda_distill - 0.4).abs() < 1e-12);
        assert_eq!(cfg.dataset().unwrap().classes, vec!["walk", "jump"]);
    }

    #[test]
    fn rejects_unknown_key_with_accepted_list() {
        let err = RunConfig::parse("bogus = 1").unwrap_err().to_string();
        assert!(err.contains("bogus"));
        assert!(err.contains("lambda_distill"));
    }

    #[test]
    fn rejects_unparseable_value() {
        let cfg = RunConfig::parse("total_epochs = soon").unwrap();
        assert!(cfg.train().is_err());
    }
}
