//! `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored; unknown and repeated keys are
//! errors. Every key is optional and falls back to its default.

use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::trainer::TrainConfig;

/// Everything a config file can set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

/// Recognized keys with a one-line description, for help output.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("steps", "fine-tuning steps"),
    ("lr", "SGD learning rate"),
    ("tau", "region threshold in pixels"),
    ("lambda", "weight of the pseudo-label loss"),
    ("momentum", "EMA teacher momentum in [0, 1]"),
    ("reinit_step", "step at which the EMA teacher is reset, or `auto` (steps / 10)"),
    ("periodic_reinit", "reset the EMA teacher every reinit_step steps (true/false)"),
    ("seed", "root seed of all training randomness"),
    ("filter_granularity", "image or pixel draws for dropping inconsistent GT"),
    ("blend_granularity", "image or pixel draws for label blending"),
    ("clamp_radius", "maximum deviation of blended GT from GT, pixels"),
    ("eval_interval", "evaluate every N steps, or `auto` (steps / 50)"),
    ("eval_threshold", "bad-pixel threshold of evaluation rows, pixels"),
    ("d_max", "number of candidate disparities"),
    ("width", "generated image width"),
    ("height", "generated image height"),
    ("n_pretrain", "domain A training samples"),
    ("n_finetune", "domain B training samples"),
    ("n_eval", "evaluation samples per domain"),
    ("data_seed", "seed of the generated datasets"),
    ("pretrain_steps", "pre-training steps"),
    ("pretrain_lr", "pre-training learning rate"),
];

fn parse<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config { line, message: format!("bad value {value:?} for `{key}`") })
}

fn parse_auto(line: usize, key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(line, key, value).map(Some)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Config { line, message: format!("expected `key = value`, got {content:?}") })?;
        let (key, value) = (key.trim(), value.trim());
        if seen.iter().any(|k| k == key) {
            return Err(Error::Config { line, message: format!("duplicate key `{key}`") });
        }
        seen.push(key.to_string());
        let (t, e) = (&mut cfg.train, &mut cfg.experiment);
        match key {
            "steps" => t.steps = parse(line, key, value)?,
            "lr" => t.lr = parse(line, key, value)?,
            "tau" => t.tau = parse(line, key, value)?,
            "lambda" => t.lambda = parse(line, key, value)?,
            "momentum" => t.momentum = parse(line, key, value)?,
            "reinit_step" => t.reinit_step = parse_auto(line, key, value)?,
            "periodic_reinit" => t.periodic_reinit = parse(line, key, value)?,
            "seed" => t.seed = parse(line, key, value)?,
            "filter_granularity" => t.filter_granularity = parse(line, key, value)?,
            "blend_granularity" => t.blend_granularity = parse(line, key, value)?,
            "clamp_radius" => t.clamp_radius = parse(line, key, value)?,
            "eval_interval" => t.eval_interval = parse_auto(line, key, value)?,
            "eval_threshold" => t.eval_threshold = parse(line, key, value)?,
            "d_max" => t.d_max = parse(line, key, value)?,
            "width" => e.width = parse(line, key, value)?,
            "height" => e.height = parse(line, key, value)?,
            "n_pretrain" => e.n_pretrain = parse(line, key, value)?,
            "n_finetune" => e.n_finetune = parse(line, key, value)?,
            "n_eval" => e.n_eval = parse(line, key, value)?,
            "data_seed" => e.data_seed = parse(line, key, value)?,
            "pretrain_steps" => e.pretrain_steps = parse(line, key, value)?,
            "pretrain_lr" => e.pretrain_lr = parse(line, key, value)?,
            other => {
                return Err(Error::Config { line, message: format!("unknown key `{other}`") });
            }
        }
    }
    cfg.train.validate().map_err(|e| Error::Config { line: 0, message: e.to_string() })?;
    Ok(cfg)
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |n| n.to_string())
}

/// Serializes every key; `parse_config(&write_config(c)) == c`.
pub fn write_config(cfg: &RunConfig) -> String {
    let (t, e) = (&cfg.train, &cfg.experiment);
    let mut s = String::from("# training\n");
    s += &format!(
        "steps = {}\nlr = {}\ntau = {}\nlambda = {}\nmomentum = {}\n",
        t.steps, t.lr, t.tau, t.lambda, t.momentum
    );
    s +=
        &format!("reinit_step = {}\nperiodic_reinit = {}\nseed = {}\n", auto(t.reinit_step), t.periodic_reinit, t.seed);
    s += &format!(
        "filter_granularity = {}\nblend_granularity = {}\nclamp_radius = {}\n",
        t.filter_granularity, t.blend_granularity, t.clamp_radius
    );
    s += &format!(
        "eval_interval = {}\neval_threshold = {}\nd_max = {}\n",
        auto(t.eval_interval),
        t.eval_threshold,
        t.d_max
    );
    s += "# data and pre-training\n";
    s += &format!("width = {}\nheight = {}\n", e.width, e.height);
    s += &format!("n_pretrain = {}\nn_finetune = {}\nn_eval = {}\n", e.n_pretrain, e.n_finetune, e.n_eval);
    s += &format!(
        "data_seed = {}\npretrain_steps = {}\npretrain_lr = {}\n",
        e.data_seed, e.pretrain_steps, e.pretrain_lr
    );
    s
}

pub fn read_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
