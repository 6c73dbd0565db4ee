//! Flat `key = value` run configuration with `#` comments.

use crate::error::{CliError, CliResult};
use std::fmt::Write as _;
use std::str::FromStr;
use vskd_core::data::SyntheticHarSpec;
use vskd_core::encoding::DEFAULT_SIDE;
use vskd_core::losses::DistanceNorm;
use vskd_core::train::TrainConfig;

/// Samples per window when segmenting CSV input.
pub const DEFAULT_WINDOW: usize = 128;

/// Everything a run depends on. The echo written by [`RunConfig::to_echo`]
/// parses back to an identical value.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Seeds both the synthetic data and training.
    pub seed: u64,
    pub data: SyntheticHarSpec,
    pub side: usize,
    /// CSV segmentation length.
    pub window: usize,
    pub train: TrainConfig,
    /// Teacher checkpoint for `distill` when no flag is given.
    pub teacher_checkpoint: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: SyntheticHarSpec::default(),
            side: DEFAULT_SIDE,
            window: DEFAULT_WINDOW,
            train: TrainConfig::default(),
            teacher_checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| CliError::input(format!("config key '{key}': cannot parse '{value}'")))
}

fn parse_norm(value: &str) -> CliResult<DistanceNorm> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["batch_mean"] => Ok(DistanceNorm::BatchMean),
        ["fixed", t, s] => {
            Ok(DistanceNorm::Fixed { teacher: parse("distance_norm", t)?, student: parse("distance_norm", s)? })
        }
        _ => Err(CliError::input(format!(
            "config key 'distance_norm': expected 'batch_mean' or 'fixed <teacher> <student>', got '{value}'"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::input(format!("config line {}: expected 'key = value'", n + 1)));
            };
            cfg.set(key.trim(), value.trim()).map_err(|e| CliError::input(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        let d = &mut self.train.dask;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "classes" => self.data.classes = parse(key, v)?,
            "window_len" => self.data.window_len = parse(key, v)?,
            "samples_per_class" => self.data.samples_per_class = parse(key, v)?,
            "sample_rate" => self.data.sample_rate = parse(key, v)?,
            "teacher_noise" => self.data.teacher_noise = parse(key, v)?,
            "student_noise" => self.data.student_noise = parse(key, v)?,
            "side" => self.side = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "alpha" => d.alpha = parse(key, v)?,
            "beta" => d.beta = parse(key, v)?,
            "gamma" => d.gamma = parse(key, v)?,
            "temperature" => d.temperature = parse(key, v)?,
            "huber_delta" => d.huber_delta = parse(key, v)?,
            "pair_limit" => d.pair_limit = parse(key, v)?,
            "triplet_limit" => d.triplet_limit = parse(key, v)?,
            "use_distance" => d.use_distance = parse(key, v)?,
            "use_angle" => d.use_angle = parse(key, v)?,
            "distance_norm" => d.distance_norm = parse_norm(v)?,
            "teacher_checkpoint" => self.teacher_checkpoint = Some(v.to_string()),
            other => return Err(CliError::input(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Data spec with the run seed applied.
    pub fn data_spec(&self) -> SyntheticHarSpec {
        SyntheticHarSpec { seed: self.seed, ..self.data.clone() }
    }

    /// Training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.side == 0 {
            return Err(CliError::input("side must be positive"));
        }
        if self.window < 2 {
            return Err(CliError::input("window must be at least 2 samples"));
        }
        self.data_spec().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn to_echo(&self) -> String {
        let d = &self.train.dask;
        let norm = match d.distance_norm {
            DistanceNorm::BatchMean => "batch_mean".to_string(),
            DistanceNorm::Fixed { teacher, student } => format!("fixed {teacher:?} {student:?}"),
        };
        let mut s = String::from("# vskd run configuration\n");
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("seed", self.seed.to_string());
        kv("classes", self.data.classes.to_string());
        kv("window_len", self.data.window_len.to_string());
        kv("samples_per_class", self.data.samples_per_class.to_string());
        // Debug formatting keeps every float round-trippable.
        kv("sample_rate", format!("{:?}", self.data.sample_rate));
        kv("teacher_noise", format!("{:?}", self.data.teacher_noise));
        kv("student_noise", format!("{:?}", self.data.student_noise));
        kv("side", self.side.to_string());
        kv("window", self.window.to_string());
        kv("learning_rate", format!("{:?}", self.train.learning_rate));
        kv("momentum", format!("{:?}", self.train.momentum));
        kv("epochs", self.train.epochs.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("alpha", format!("{:?}", d.alpha));
        kv("beta", format!("{:?}", d.beta));
        kv("gamma", format!("{:?}", d.gamma));
        kv("temperature", format!("{:?}", d.temperature));
        kv("huber_delta", format!("{:?}", d.huber_delta));
        kv("pair_limit", d.pair_limit.to_string());
        kv("triplet_limit", d.triplet_limit.to_string());
        kv("use_distance", d.use_distance.to_string());
        kv("use_angle", d.use_angle.to_string());
        kv("distance_norm", norm);
        if let Some(p) = &self.teacher_checkpoint {
            kv("teacher_checkpoint", p.clone());
        }
        s
    }
}
