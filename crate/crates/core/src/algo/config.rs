//! Training hyperparameters and the `key = value` run-config format.

use serde::{Deserialize, Serialize};

use super::model::{ConvLayer, HeadSpec, ModelConfig};
use super::{AlgoError, Algorithm};
use crate::loader::PadPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub iterations: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    pub tau: f64,
    pub reward_clip: (f64, f64),
    pub cql_alpha: f64,
    pub expectile: f64,
    pub temperature: f64,
    pub advantage_clip: f64,
    pub rem_heads: usize,
    /// Leading steps of each window that only warm up the recurrent state.
    pub burn_in: usize,
    pub pad_policy: PadPolicy,
    pub seed: u64,
    /// Emit metrics every this many iterations (0 disables).
    pub log_every: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Bc,
            iterations: 500_000,
            batch_size: 64,
            seq_len: 16,
            learning_rate: 3e-4,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            gamma: 0.999,
            tau: 5e-3,
            reward_clip: (-10.0, 10.0),
            cql_alpha: 1e-4,
            expectile: 0.8,
            temperature: 1.0,
            advantage_clip: 100.0,
            rem_heads: 200,
            burn_in: 0,
            pad_policy: PadPolicy::RejectShort,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        TrainConfig {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AlgoError> {
        let bad = |m: &str| Err(AlgoError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.seq_len == 0 {
            return bad("batch size and sequence length must be ≥ 1");
        }
        if self.burn_in >= self.seq_len {
            return bad("burn-in must be shorter than the sequence length");
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || !(self.adam_eps > 0.0) {
            return bad("learning rate and epsilon must be positive, weight decay non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if !(self.reward_clip.0 < self.reward_clip.1) {
            return bad("reward clip low must be below high");
        }
        if !(self.expectile > 0.0 && self.expectile < 1.0) {
            return bad("expectile must lie in (0, 1)");
        }
        if !(self.temperature > 0.0) || !(self.advantage_clip > 0.0) || self.cql_alpha < 0.0 {
            return bad("temperature and advantage clip must be positive, alpha non-negative");
        }
        if self.rem_heads == 0 {
            return bad("REM needs at least one head");
        }
        Ok(())
    }
}

/// Everything a training run needs: optimisation settings plus the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    /// Full-scale defaults for `algorithm`.
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        let train = TrainConfig::for_algorithm(algorithm);
        let model = ModelConfig::full_scale(algorithm, train.rem_heads);
        RunConfig { train, model }
    }

    /// Parses a `key = value` file on top of the defaults for its `algorithm`
    /// key (BC when absent).
    pub fn parse(text: &str) -> Result<Self, AlgoError> {
        let pairs = parse_pairs(text)?;
        let algo = pairs
            .iter()
            .find(|(k, _)| k == "algorithm")
            .map(|(_, v)| Algorithm::parse(v).ok_or_else(|| AlgoError::InvalidConfig(format!("unknown algorithm '{v}'"))))
            .transpose()?
            .unwrap_or(Algorithm::Bc);
        let mut cfg = Self::for_algorithm(algo);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AlgoError> {
        self.train.validate()?;
        self.model.validate()?;
        if self.model.heads != HeadSpec::for_algorithm(self.train.algorithm, self.train.rem_heads) {
            return Err(AlgoError::InvalidConfig("model heads do not match the algorithm".into()));
        }
        Ok(())
    }

    /// Applies one setting. Keys follow the hyperparameter tables, with spaces
    /// written as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), AlgoError> {
        let t = &mut self.train;
        let m = &mut self.model;
        let v = value.trim();
        match key.trim() {
            "algorithm" => {
                t.algorithm = Algorithm::parse(v).ok_or_else(|| invalid(key, v))?;
                m.heads = HeadSpec::for_algorithm(t.algorithm, t.rem_heads);
            }
            "optimizer" => {
                if !v.eq_ignore_ascii_case("adamw") {
                    return Err(invalid(key, v));
                }
            }
            "training_iterations" | "iterations" => t.iterations = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "sequence_length" | "seq_len" => t.seq_len = num(key, v)?,
            "learning_rate" => t.learning_rate = num(key, v)?,
            "weight_decay" => t.weight_decay = num(key, v)?,
            "adam_beta1" => t.adam_beta1 = num(key, v)?,
            "adam_beta2" => t.adam_beta2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "state_encoder" => {
                let preset = match v.to_ascii_lowercase().as_str() {
                    "chaotic-dwarven-gpt-5" | "cdgpt5" => ModelConfig::full_scale(t.algorithm, t.rem_heads),
                    "crop" => ModelConfig::desk(t.algorithm, t.rem_heads, m.hidden),
                    _ => return Err(invalid(key, v)),
                };
                m.render = preset.render;
                m.conv = preset.conv;
                m.encoder_dim = preset.encoder_dim;
            }
            "lstm_hidden_dim" | "hidden" => m.hidden = num(key, v)?,
            "lstm_layers" => m.layers = num(key, v)?,
            "lstm_dropout" => m.dropout = num(key, v)?,
            "use_previous_action" => m.prev_action = boolean(key, v)?,
            "encoder_dim" => m.encoder_dim = num(key, v)?,
            "num_actions" => m.num_actions = num(key, v)?,
            "crop_rows" => m.render.crop_rows = num(key, v)?,
            "crop_cols" => m.render.crop_cols = num(key, v)?,
            "glyph_width" => m.render.glyph_width = num(key, v)?,
            "glyph_height" => m.render.glyph_height = num(key, v)?,
            "cursor_highlight" => m.render.cursor_highlight = boolean(key, v)?,
            "conv" => m.conv = parse_conv(v).ok_or_else(|| invalid(key, v))?,
            "tau" => t.tau = num(key, v)?,
            "gamma" => t.gamma = num(key, v)?,
            "reward_clip_range" | "reward_clip" => t.reward_clip = parse_range(v).ok_or_else(|| invalid(key, v))?,
            "alpha" | "cql_alpha" => t.cql_alpha = num(key, v)?,
            "expectile" => t.expectile = num(key, v)?,
            "temperature" => t.temperature = num(key, v)?,
            "advantage_clip_max" | "advantage_clip" => t.advantage_clip = num(key, v)?,
            "ensemble_heads" | "rem_heads" => {
                // The tables print this count as a float ("200.0").
                let f: f64 = num(key, v)?;
                if f.fract() != 0.0 || f < 1.0 {
                    return Err(invalid(key, v));
                }
                t.rem_heads = f as usize;
                m.heads = HeadSpec::for_algorithm(t.algorithm, t.rem_heads);
            }
            "burn_in" => t.burn_in = num(key, v)?,
            "pad_policy" => {
                t.pad_policy = match v {
                    "reject_short" => PadPolicy::RejectShort,
                    "left_clamp" => PadPolicy::LeftClamp,
                    _ => return Err(invalid(key, v)),
                }
            }
            "seed" => t.seed = num(key, v)?,
            "log_every" => t.log_every = num(key, v)?,
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            other => return Err(AlgoError::InvalidConfig(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// The settings as `key = value` lines that [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let conv = if m.conv.is_empty() {
            "none".to_string()
        } else {
            m.conv.iter().map(|c| format!("{}:{}:{}", c.channels, c.kernel, c.stride)).collect::<Vec<_>>().join(",")
        };
        let lines = [
            ("algorithm", t.algorithm.name().to_string()),
            ("optimizer", "AdamW".into()),
            ("training_iterations", t.iterations.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("sequence_length", t.seq_len.to_string()),
            ("learning_rate", format!("{:e}", t.learning_rate)),
            ("weight_decay", t.weight_decay.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", format!("{:e}", t.adam_eps)),
            ("lstm_hidden_dim", m.hidden.to_string()),
            ("lstm_layers", m.layers.to_string()),
            ("lstm_dropout", m.dropout.to_string()),
            ("use_previous_action", m.prev_action.to_string()),
            ("encoder_dim", m.encoder_dim.to_string()),
            ("num_actions", m.num_actions.to_string()),
            ("crop_rows", m.render.crop_rows.to_string()),
            ("crop_cols", m.render.crop_cols.to_string()),
            ("glyph_width", m.render.glyph_width.to_string()),
            ("glyph_height", m.render.glyph_height.to_string()),
            ("cursor_highlight", m.render.cursor_highlight.to_string()),
            ("conv", conv),
            ("tau", t.tau.to_string()),
            ("gamma", t.gamma.to_string()),
            ("reward_clip_range", format!("[{:?}, {:?}]", t.reward_clip.0, t.reward_clip.1)),
            ("alpha", t.cql_alpha.to_string()),
            ("expectile", t.expectile.to_string()),
            ("temperature", t.temperature.to_string()),
            ("advantage_clip_max", t.advantage_clip.to_string()),
            ("ensemble_heads", t.rem_heads.to_string()),
            ("burn_in", t.burn_in.to_string()),
            (
                "pad_policy",
                match t.pad_policy {
                    PadPolicy::RejectShort => "reject_short",
                    PadPolicy::LeftClamp => "left_clamp",
                }
                .into(),
            ),
            ("seed", t.seed.to_string()),
            ("log_every", t.log_every.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn invalid(key: &str, value: &str) -> AlgoError {
    AlgoError::InvalidConfig(format!("bad value '{value}' for '{key}'"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, AlgoError> {
    v.parse().map_err(|_| invalid(key, v))
}

fn boolean(key: &str, v: &str) -> Result<bool, AlgoError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(key, v)),
    }
}

fn parse_range(v: &str) -> Option<(f64, f64)> {
    let inner = v.trim().strip_prefix('[')?.strip_suffix(']')?;
    let (a, b) = inner.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// `channels:kernel:stride` entries separated by commas, or `none`.
fn parse_conv(v: &str) -> Option<Vec<ConvLayer>> {
    if v.eq_ignore_ascii_case("none") {
        return Some(Vec::new());
    }
    v.split(',')
        .map(|part| {
            let mut it = part.trim().split(':').map(|x| x.parse::<usize>().ok());
            let c = ConvLayer {
                channels: it.next()??,
                kernel: it.next()??,
                stride: it.next()??,
            };
            it.next().is_none().then_some(c)
        })
        .collect()
}

/// Splits `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, AlgoError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| AlgoError::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_tables() {
        let t = TrainConfig::default();
        assert_eq!((t.iterations, t.batch_size, t.seq_len), (500_000, 64, 16));
        assert_eq!((t.learning_rate, t.weight_decay, t.gamma, t.tau), (3e-4, 0.0, 0.999, 5e-3));
        assert_eq!(t.reward_clip, (-10.0, 10.0));
        assert_eq!((t.cql_alpha, t.expectile, t.temperature, t.advantage_clip, t.rem_heads), (1e-4, 0.8, 1.0, 100.0, 200));
        let m = RunConfig::for_algorithm(Algorithm::Rem).model;
        assert_eq!((m.hidden, m.layers, m.dropout, m.prev_action), (2048, 2, 0.0, true));
        assert_eq!(m.heads.q_heads, 200);
    }

    #[test]
    fn text_round_trip_and_overrides() {
        let mut cfg = RunConfig::for_algorithm(Algorithm::Iql);
        cfg.set("lstm_hidden_dim", "32").unwrap();
        cfg.set("conv", "4:3:1,8:2:2").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        let parsed = RunConfig::parse("algorithm = REM\nensemble_heads = 200.0 # float form\nreward clip range = x").unwrap_err();
        assert!(parsed.to_string().contains("unknown key"));
        assert!(RunConfig::parse("algorithm = REM\nensemble_heads = 2.5").is_err());
        let r = RunConfig::parse("algorithm = rem\nensemble_heads = 3.0").unwrap();
        assert_eq!(r.model.heads.q_heads, 3);
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for algo in Algorithm::ALL {
            let path = dir.join(format!("{}.conf", algo.name()));
            let text = std::fs::read_to_string(&path).unwrap();
            let cfg = RunConfig::parse(&text).unwrap();
            assert_eq!(cfg.train.algorithm, algo);
            let defaults = RunConfig::for_algorithm(algo);
            assert_eq!(cfg, defaults, "{}", path.display());
        }
    }
}
