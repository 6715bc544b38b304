//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{AenError, Result};
use crate::model::AenConfig;
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: AenConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without an eval-accuracy improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub glove_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: AenConfig::default(),
            batch_size: 32,
            max_epochs: 20,
            patience: 5,
            adam: AdamConfig::default(),
            seed: 1,
            train_path: None,
            eval_path: None,
            glove_path: None,
            checkpoint_path: None,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| AenError::Config(format!("bad value {value:?} for {key}")))
}

/// Splits `text` into `(line number, key, value)` triples.
pub(crate) fn kv_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| AenError::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl AenConfig {
    /// Applies one key; returns `false` if the key is not a model setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "d_emb" => self.d_emb = parse_value(key, value)?,
            "d_hid" => self.d_hid = parse_value(key, value)?,
            "n_head" => self.n_head = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "max_context_len" => self.max_context_len = parse_value(key, value)?,
            "max_target_len" => self.max_target_len = parse_value(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "shared_att_weights" => self.shared_att_weights = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key=value` lines that [`AenConfig::set`] reads back exactly.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d_emb={}", self.d_emb);
        let _ = writeln!(s, "d_hid={}", self.d_hid);
        let _ = writeln!(s, "n_head={}", self.n_head);
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        let _ = writeln!(s, "max_context_len={}", self.max_context_len);
        let _ = writeln!(s, "max_target_len={}", self.max_target_len);
        let _ = writeln!(s, "dropout_rate={}", self.dropout_rate);
        let _ = writeln!(s, "epsilon={}", self.epsilon);
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "shared_att_weights={}", self.shared_att_weights);
        s
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (line, key, value) in kv_lines(text)? {
            let known = cfg.set(&key, &value).map_err(|e| AenError::Config(format!("line {line}: {e}")))?;
            if !known {
                return Err(AenError::Config(format!("line {line}: unknown key {key:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| AenError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if self.model.set(key, value)? {
            return Ok(true);
        }
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "lr" => self.adam.lr = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam.eps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "train" => self.train_path = Some(value.into()),
            "eval" => self.eval_path = Some(value.into()),
            "glove" => self.glove_path = Some(value.into()),
            "checkpoint" => self.checkpoint_path = Some(value.into()),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |m: &str| Err(AenError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if !(self.adam.lr > 0.0) {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return fail("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::parse("").unwrap();
        assert_eq!(c, TrainConfig::default());
        assert_eq!(c.model.d_hid, 300);
        assert_eq!(c.model.n_head, 6);
        assert_eq!(c.model.epsilon, 0.2);
        assert_eq!(c.model.lambda, 1e-5);
        assert_eq!(c.model.dropout_rate, 0.1);
        assert_eq!(c.adam.lr, 1e-3);
    }

    #[test]
    fn parses_keys_and_comments() {
        let text = "# tiny\n d_hid = 8\nn_head=2\n\nlr = 0.01\nseed=9\ntrain = data/train.txt\nshared_att_weights=true\n";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.model.d_hid, 8);
        assert_eq!(c.model.n_head, 2);
        assert_eq!(c.adam.lr, 0.01);
        assert_eq!(c.seed, 9);
        assert!(c.model.shared_att_weights);
        assert_eq!(c.train_path.as_deref(), Some(Path::new("data/train.txt")));
    }

    #[test]
    fn rejects_unknown_keys_bad_values_and_invalid_settings() {
        assert!(TrainConfig::parse("learning_rate=1").unwrap_err().to_string().contains("unknown key"));
        assert!(TrainConfig::parse("d_hid=abc").is_err());
        assert!(TrainConfig::parse("no equals sign").is_err());
        assert!(TrainConfig::parse("d_hid=10\nn_head=3").is_err());
        assert!(TrainConfig::parse("epsilon=1").is_err());
        assert!(TrainConfig::parse("patience=0").is_err());
        assert!(TrainConfig::parse("max_epochs=0").is_err());
    }

    #[test]
    fn model_config_round_trips_through_kv() {
        let cfg = AenConfig {
            d_hid: 12,
            n_head: 4,
            dropout_rate: 0.123456789,
            lambda: 3.3e-7,
            shared_att_weights: true,
            ..AenConfig::default()
        };
        let mut back = AenConfig::default();
        for (_, k, v) in kv_lines(&cfg.to_kv()).unwrap() {
            assert!(back.set(&k, &v).unwrap());
        }
        assert_eq!(back, cfg);
    }
}
