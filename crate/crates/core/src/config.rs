//! Line-oriented `key = value` run configuration. `#` starts a comment.
//!
//! ```text
//! # model
//! h_lstm = 95
//! flags.ffl2 = false
//! # training
//! learning_rate = 1e-4
//! clip_norm = inf
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const KEYS: &[&str] = &[
    "d_word",
    "d_tag",
    "h_lstm",
    "h_ffl1",
    "h_ffl2",
    "flags.ctx",
    "flags.aa",
    "flags.tag",
    "flags.cut",
    "flags.ffl1",
    "flags.ffl2",
    "learning_rate",
    "max_batch_size",
    "epochs",
    "clip_norm",
    "l2_lambda",
    "k_input",
    "k_lstm",
    "k_ffl1",
    "k_ffl2",
    "f_w",
    "seed",
    "shuffle",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: bad boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Parses a configuration on top of the defaults. Unknown and repeated
    /// keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: {key} given twice")));
            }
            cfg.set(key, value, line)?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "d_word" => m.d_word = parse_value(key, value, line)?,
            "d_tag" => m.d_tag = parse_value(key, value, line)?,
            "h_lstm" => m.h_lstm = parse_value(key, value, line)?,
            "h_ffl1" => m.h_ffl1 = parse_value(key, value, line)?,
            "h_ffl2" => m.h_ffl2 = parse_value(key, value, line)?,
            "flags.ctx" => m.flags.ctx = parse_bool(key, value, line)?,
            "flags.aa" => m.flags.aa = parse_bool(key, value, line)?,
            "flags.tag" => m.flags.tag = parse_bool(key, value, line)?,
            "flags.cut" => m.flags.cut = parse_bool(key, value, line)?,
            "flags.ffl1" => m.flags.ffl1 = parse_bool(key, value, line)?,
            "flags.ffl2" => m.flags.ffl2 = parse_bool(key, value, line)?,
            "learning_rate" => t.learning_rate = parse_value(key, value, line)?,
            "max_batch_size" => t.max_batch_size = parse_value(key, value, line)?,
            "epochs" => t.epochs = parse_value(key, value, line)?,
            "clip_norm" => t.clip_norm = parse_value(key, value, line)?,
            "l2_lambda" => t.l2_lambda = parse_value(key, value, line)?,
            "k_input" => t.keep.input = parse_value(key, value, line)?,
            "k_lstm" => t.keep.lstm = parse_value(key, value, line)?,
            "k_ffl1" => t.keep.ffl1 = parse_value(key, value, line)?,
            "k_ffl2" => t.keep.ffl2 = parse_value(key, value, line)?,
            "f_w" => t.min_word_freq = parse_value(key, value, line)?,
            "seed" => t.seed = parse_value(key, value, line)?,
            "shuffle" => t.shuffle = parse_bool(key, value, line)?,
            "adam_beta1" => t.adam_beta1 = parse_value(key, value, line)?,
            "adam_beta2" => t.adam_beta2 = parse_value(key, value, line)?,
            "adam_eps" => t.adam_eps = parse_value(key, value, line)?,
            _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its value, in [`KEYS`] order; parses back to `self`.
    pub fn render(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let values: Vec<String> = vec![
            m.d_word.to_string(),
            m.d_tag.to_string(),
            m.h_lstm.to_string(),
            m.h_ffl1.to_string(),
            m.h_ffl2.to_string(),
            m.flags.ctx.to_string(),
            m.flags.aa.to_string(),
            m.flags.tag.to_string(),
            m.flags.cut.to_string(),
            m.flags.ffl1.to_string(),
            m.flags.ffl2.to_string(),
            format!("{:e}", t.learning_rate),
            t.max_batch_size.to_string(),
            t.epochs.to_string(),
            t.clip_norm.to_string(),
            format!("{:e}", t.l2_lambda),
            t.keep.input.to_string(),
            t.keep.lstm.to_string(),
            t.keep.ffl1.to_string(),
            t.keep.ffl2.to_string(),
            t.min_word_freq.to_string(),
            t.seed.to_string(),
            t.shuffle.to_string(),
            t.adam_beta1.to_string(),
            t.adam_beta2.to_string(),
            format!("{:e}", t.adam_eps),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }
}
