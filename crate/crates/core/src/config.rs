//! Run configuration: plain-text sectioned key-value files, override
//! handling, and the canonical serialization that gets frozen into output
//! directories and hashed into checkpoints.
//!
//! Struct defaults carry the full-scale training procedure (200 epochs with
//! the second half linearly decayed, lr 2e-4, β1 0.5, β2 0.999, 256×256
//! images); the shipped example configs scale these down for desk runs.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::{AdamParams, LrSchedule};
use crate::util::fnv1a64;
use crate::volume::Contrast;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Pgan,
    CganReg,
    CganUnreg,
}

impl TrainMode {
    pub fn label(self) -> &'static str {
        match self {
            TrainMode::Pgan => "pgan",
            TrainMode::CganReg => "cgan_reg",
            TrainMode::CganUnreg => "cgan_unreg",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            TrainMode::Pgan => 0,
            TrainMode::CganReg => 1,
            TrainMode::CganUnreg => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TrainMode::Pgan),
            1 => Ok(TrainMode::CganReg),
            2 => Ok(TrainMode::CganUnreg),
            _ => Err(Error::data(format!("unknown mode code {code}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pgan" => Ok(TrainMode::Pgan),
            "cgan_reg" => Ok(TrainMode::CganReg),
            "cgan_unreg" => Ok(TrainMode::CganUnreg),
            _ => Err(Error::config(format!(
                "unknown mode '{s}' (expected pgan|cgan_reg|cgan_unreg)"
            ))),
        }
    }

    pub fn is_cgan(self) -> bool {
        !matches!(self, TrainMode::Pgan)
    }
}

/// Numeric precision escape hatch; double is the default everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    pub fn label(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            _ => Err(Error::config(format!("unknown precision '{s}' (expected f64|f32)"))),
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub precision: Precision,

    pub manifest_dir: PathBuf,
    pub source: Contrast,
    pub target: Contrast,
    /// cgan_unreg only: sample target slices from random subjects/indices
    /// instead of the same-subject same-index misaligned pairing.
    pub unpaired: bool,

    pub k: usize,
    pub image_size: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub d_base_channels: usize,
    pub d_layers: usize,

    pub epochs: usize,
    pub constant_epochs: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_pix: f64,
    pub lambda_cycle: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Pgan,
            seed: 42,
            out_dir: PathBuf::from("runs/out"),
            precision: Precision::F64,
            manifest_dir: PathBuf::from("data/phantom"),
            source: Contrast::T1w,
            target: Contrast::T2w,
            unpaired: false,
            k: 1,
            image_size: 256,
            base_channels: 64,
            depth: 6,
            d_base_channels: 64,
            d_layers: 3,
            epochs: 200,
            constant_epochs: 100,
            base_lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_pix: 100.0,
            lambda_cycle: 10.0,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            total_epochs: self.epochs,
            constant_epochs: self.constant_epochs,
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda_pix: self.lambda_pix, lambda_cycle: self.lambda_cycle }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k % 2 == 0 {
            return Err(Error::config(format!("k = {} must be odd", self.k)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.source == self.target {
            return Err(Error::config("source and target contrasts must differ"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be >= 1"));
        }
        self.schedule().validate()?;
        if self.image_size % (1 << self.depth) != 0 {
            return Err(Error::config(format!(
                "image_size {} not divisible by 2^{}",
                self.image_size, self.depth
            )));
        }
        Ok(())
    }

    /// Canonical serialization: fixed section and key order, shortest
    /// round-trip float formatting. This exact text is frozen into output
    /// directories and hashed into checkpoints.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "mode = {}", self.mode.label());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "precision = {}", self.precision.label());
        let _ = writeln!(s);
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "manifest_dir = {}", self.manifest_dir.display());
        let _ = writeln!(s, "direction = {}->{}", self.source.label(), self.target.label());
        let _ = writeln!(s, "unpaired = {}", self.unpaired);
        let _ = writeln!(s);
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "base_channels = {}", self.base_channels);
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "d_base_channels = {}", self.d_base_channels);
        let _ = writeln!(s, "d_layers = {}", self.d_layers);
        let _ = writeln!(s);
        let _ = writeln!(s, "[train]");
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "constant_epochs = {}", self.constant_epochs);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "adam_eps = {}", self.adam_eps);
        let _ = writeln!(s, "lambda_pix = {}", self.lambda_pix);
        let _ = writeln!(s, "lambda_cycle = {}", self.lambda_cycle);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        s
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.to_text().as_bytes())
    }

    /// Parse a config file body, starting from defaults; sections are
    /// cosmetic (keys are globally unique).
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("config line {} is not 'key = value': {line}", lineno + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one `key=value` assignment (also the CLI override mechanism).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let uint = |v: &str| -> Result<u64> {
            v.parse::<u64>().map_err(|e| Error::config(format!("bad integer '{v}' for {key}: {e}")))
        };
        let real = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|e| Error::config(format!("bad number '{v}' for {key}: {e}")))
        };
        let boolean = |v: &str| -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::config(format!("bad boolean '{v}' for {key}"))),
            }
        };
        match key {
            "mode" => self.mode = TrainMode::parse(value)?,
            "seed" => self.seed = uint(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "precision" => self.precision = Precision::parse(value)?,
            "manifest_dir" => self.manifest_dir = PathBuf::from(value),
            "direction" => {
                let (s, t) = value.split_once("->").ok_or_else(|| {
                    Error::config(format!("direction '{value}' must look like t1w->t2w"))
                })?;
                self.source = Contrast::parse(s.trim())?;
                self.target = Contrast::parse(t.trim())?;
            }
            "unpaired" => self.unpaired = boolean(value)?,
            "k" => self.k = uint(value)? as usize,
            "image_size" => self.image_size = uint(value)? as usize,
            "base_channels" => self.base_channels = uint(value)? as usize,
            "depth" => self.depth = uint(value)? as usize,
            "d_base_channels" => self.d_base_channels = uint(value)? as usize,
            "d_layers" => self.d_layers = uint(value)? as usize,
            "epochs" => self.epochs = uint(value)? as usize,
            "constant_epochs" => self.constant_epochs = uint(value)? as usize,
            "base_lr" => self.base_lr = real(value)?,
            "beta1" => self.beta1 = real(value)?,
            "beta2" => self.beta2 = real(value)?,
            "adam_eps" => self.adam_eps = real(value)?,
            "lambda_pix" => self.lambda_pix = real(value)?,
            "lambda_cycle" => self.lambda_cycle = real(value)?,
            "checkpoint_every" => self.checkpoint_every = uint(value)? as usize,
            _ => return Err(Error::config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }
}
