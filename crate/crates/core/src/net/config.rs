use std::fmt;
use std::path::Path;

use super::loss::Reconstruction;
use super::memory::Pooling;
use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Where the pooled descriptor is concatenated with the view feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolPosition {
    /// Input of down block `D_k`; the feature is the output of `D_{k+1}`.
    Down(usize),
    /// After the innermost down block, followed by a 1×1 fusion conv.
    Code,
}

impl PoolPosition {
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "code" {
            return Ok(Self::Code);
        }
        lower
            .strip_prefix('d')
            .map(|r| r.trim_start_matches('_'))
            .and_then(|r| r.parse().ok())
            .map(Self::Down)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown pooling position `{s}`; expected D2, D1, D0 or code"
                ))
            })
    }
}

impl fmt::Display for PoolPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Down(k) => write!(f, "D{k}"),
            Self::Code => write!(f, "code"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryReset {
    Epoch,
    Never,
}

/// Architecture of the generator and discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub resolution: usize,
    pub levels: usize,
    /// Output channels of the down blocks, outermost first.
    pub channels: Vec<usize>,
    pub disc_channels: usize,
    pub pooling: Pooling,
    pub position: PoolPosition,
    pub views: usize,
    /// `false` replaces the pooled descriptor by the view's own feature.
    pub shape_memory: bool,
    pub dropout: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            levels: 5,
            channels: vec![16, 32, 64, 128, 128],
            disc_channels: 16,
            pooling: Pooling::Max,
            position: PoolPosition::Down(2),
            views: 8,
            shape_memory: true,
            dropout: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.channels.len() != self.levels {
            return bad(format!(
                "{} channel widths given for {} levels",
                self.channels.len(),
                self.levels
            ));
        }
        if self.channels.contains(&0) || self.disc_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        if self.resolution != 1 << self.levels {
            return bad(format!(
                "resolution {} must equal 2^levels = {}",
                self.resolution,
                1usize << self.levels
            ));
        }
        if self.resolution < 8 {
            return bad("resolution must be at least 8 for the discriminator".into());
        }
        if let PoolPosition::Down(k) = self.position {
            if k + 1 >= self.levels {
                return bad(format!(
                    "pooling position D{k} needs at least {} levels",
                    k + 2
                ));
            }
        }
        if !matches!(self.views, 3 | 5 | 8) {
            return bad(format!("views must be 3, 5 or 8, got {}", self.views));
        }
        Ok(())
    }

    /// Output channels of down block `D_k`.
    pub fn down_out(&self, k: usize) -> usize {
        self.channels[self.levels - 1 - k]
    }

    /// Channels of the view feature that enters the memory.
    pub fn feature_channels(&self) -> usize {
        match self.position {
            PoolPosition::Down(k) => self.down_out(k + 1),
            PoolPosition::Code => self.down_out(0),
        }
    }
}

/// Full training configuration: architecture plus optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub lambda: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub seed: u64,
    pub loss: Reconstruction,
    /// `false` drops the adversarial term and skips discriminator updates.
    pub adversarial: bool,
    pub epochs: usize,
    pub memory_reset: MemoryReset,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            lambda: 1.0,
            lr_g: 6e-4,
            lr_d: 6e-6,
            beta1: 0.5,
            beta2: 0.999,
            batch: 8,
            seed: 0,
            loss: Reconstruction::L1,
            adversarial: true,
            epochs: 1,
            memory_reset: MemoryReset::Epoch,
        }
    }
}

const KEYS: &[&str] = &[
    "resolution",
    "levels",
    "channels",
    "disc_channels",
    "lambda",
    "lr_g",
    "lr_d",
    "beta1",
    "beta2",
    "batch",
    "seed",
    "pooling",
    "pooling_position",
    "V",
    "loss",
    "adversarial",
    "shape_memory",
    "dropout",
    "epochs",
    "memory_reset",
];

impl TrainConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(KEYS)?;
        let d = Self::default();
        let levels = kv.get_or("levels", d.net.levels)?;
        let resolution = kv.get_or("resolution", 1usize << levels)?;
        let default_channels = if levels == d.net.levels {
            d.net.channels.clone()
        } else {
            (0..levels).map(|i| (16usize << i).min(128)).collect()
        };
        let net = NetConfig {
            resolution,
            levels,
            channels: kv.get_list_or("channels", default_channels)?,
            disc_channels: kv.get_or("disc_channels", d.net.disc_channels)?,
            pooling: match kv.raw("pooling") {
                Some(s) => Pooling::parse(s)?,
                None => d.net.pooling,
            },
            position: match kv.raw("pooling_position") {
                Some(s) => PoolPosition::parse(s)?,
                None => d.net.position,
            },
            views: kv.get_or("V", d.net.views)?,
            shape_memory: kv.get_or("shape_memory", d.net.shape_memory)?,
            dropout: kv.get_or("dropout", d.net.dropout)?,
        };
        let cfg = Self {
            net,
            lambda: kv.get_or("lambda", d.lambda)?,
            lr_g: kv.get_or("lr_g", d.lr_g)?,
            lr_d: kv.get_or("lr_d", d.lr_d)?,
            beta1: kv.get_or("beta1", d.beta1)?,
            beta2: kv.get_or("beta2", d.beta2)?,
            batch: kv.get_or("batch", d.batch)?,
            seed: kv.get_or("seed", d.seed)?,
            loss: match kv.raw("loss") {
                Some(s) => Reconstruction::parse(s)?,
                None => d.loss,
            },
            adversarial: kv.get_or("adversarial", d.adversarial)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            memory_reset: match kv.raw("memory_reset") {
                None | Some("epoch") => MemoryReset::Epoch,
                Some("never") => MemoryReset::Never,
                Some(other) => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown memory_reset `{other}`; expected epoch or never"
                    )))
                }
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text, source)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        for (name, v) in [("lambda", self.lambda), ("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        Ok(())
    }
}

/// Canonical text form; parsing it back yields the same configuration.
impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = &self.net;
        let channels: Vec<String> = n.channels.iter().map(|c| c.to_string()).collect();
        writeln!(f, "resolution = {}", n.resolution)?;
        writeln!(f, "levels = {}", n.levels)?;
        writeln!(f, "channels = {}", channels.join(","))?;
        writeln!(f, "disc_channels = {}", n.disc_channels)?;
        writeln!(f, "pooling = {}", n.pooling.name())?;
        writeln!(f, "pooling_position = {}", n.position)?;
        writeln!(f, "V = {}", n.views)?;
        writeln!(f, "shape_memory = {}", n.shape_memory)?;
        writeln!(f, "dropout = {}", n.dropout)?;
        writeln!(f, "lambda = {:?}", self.lambda)?;
        writeln!(f, "lr_g = {:?}", self.lr_g)?;
        writeln!(f, "lr_d = {:?}", self.lr_d)?;
        writeln!(f, "beta1 = {:?}", self.beta1)?;
        writeln!(f, "beta2 = {:?}", self.beta2)?;
        writeln!(f, "batch = {}", self.batch)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "loss = {}", self.loss.name())?;
        writeln!(f, "adversarial = {}", self.adversarial)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        let reset = match self.memory_reset {
            MemoryReset::Epoch => "epoch",
            MemoryReset::Never => "never",
        };
        writeln!(f, "memory_reset = {reset}")
    }
}
