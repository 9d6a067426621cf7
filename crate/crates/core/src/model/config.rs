use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Encoder levels `m = 0..4`.
pub const LEVELS: usize = 5;
/// Prediction stages `s = 0..3`.
pub const STAGES: usize = 4;
/// Spatial sizes must be divisible by this (four 2×2 poolings).
pub const SIZE_MULTIPLE: usize = 1 << (LEVELS - 1);

/// How side predictions are combined into the final map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionStrategy {
    /// Per-pixel softmax over stage confidences.
    Softmax,
    /// Per-pixel one-hot of the most confident stage.
    Max,
    /// One softmax weight per stage from globally pooled confidences.
    Global,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [Self::Softmax, Self::Max, Self::Global];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Softmax => "lf_softmax",
            Self::Max => "lf_max",
            Self::Global => "gwf",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lf_softmax" | "softmax" => Ok(Self::Softmax),
            "lf_max" | "max" => Ok(Self::Max),
            "gwf" | "global" => Ok(Self::Global),
            _ => Err(Error::Config(format!(
                "unknown fusion strategy `{s}` (expected lf_softmax, lf_max or gwf)"
            ))),
        }
    }
}

/// Initial hidden state of the cascade at its coarsest stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HiddenInit {
    /// `H = tanh(Ŷ)`, keeping every hidden state inside (−1, 1).
    Tanh,
    /// `H = Ŷ`.
    Verbatim,
}

impl HiddenInit {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Verbatim => "verbatim",
        }
    }
}

impl FromStr for HiddenInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "verbatim" => Ok(Self::Verbatim),
            _ => Err(Error::Config(format!("unknown hidden init `{s}` (expected tanh or verbatim)"))),
        }
    }
}

/// Where the side prediction of one stage comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideSource {
    /// Not produced.
    None,
    /// The stage's own 1×1 head on its attention-refined feature.
    Head,
    /// A cascade cell.
    Cascade,
}

/// Architecture switches. The four rows of the module ablation are
/// `{}`, `{dms}`, `{dms, c2fg}` and `{dms, c2fg, lf}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channels at level 0; level `m` has `base_width · 2^m`.
    pub base_width: usize,
    /// Supervise every stage's side prediction.
    pub dms: bool,
    /// Coarse-to-fine guiding cascade.
    pub c2fg: bool,
    /// Learnable fusion of the four side predictions.
    pub lf: bool,
    pub fusion: FusionStrategy,
    /// Coarsest stage of the cascade; cells run for stages below it.
    /// 0 disables every cell.
    pub c2fg_top: usize,
    pub hidden_init: HiddenInit,
    /// Reduction ratio of the channel-attention perceptrons.
    pub attention_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full(8)
    }
}

impl ModelConfig {
    /// Every module enabled.
    pub fn full(base_width: usize) -> Self {
        ModelConfig {
            base_width,
            dms: true,
            c2fg: true,
            lf: true,
            fusion: FusionStrategy::Softmax,
            c2fg_top: STAGES - 1,
            hidden_init: HiddenInit::Tanh,
            attention_ratio: 4,
        }
    }

    /// Final head only.
    pub fn baseline(base_width: usize) -> Self {
        ModelConfig {
            dms: false,
            c2fg: false,
            lf: false,
            ..Self::full(base_width)
        }
    }

    /// The four cumulative rows of the module ablation, in order.
    pub fn ablation_ladder(base_width: usize) -> [(&'static str, ModelConfig); 4] {
        let base = Self::baseline(base_width);
        let dms = ModelConfig { dms: true, ..base.clone() };
        let c2fg = ModelConfig { c2fg: true, ..dms.clone() };
        let lf = ModelConfig { lf: true, ..c2fg.clone() };
        [("baseline", base), ("+dms", dms), ("+dms+c2fg", c2fg), ("+dms+c2fg+lf", lf)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("model.base_width must be positive".into()));
        }
        if self.c2fg_top >= STAGES {
            return Err(Error::Config(format!("model.c2fg_top must be below {STAGES}")));
        }
        if self.attention_ratio == 0 {
            return Err(Error::Config("model.attention_ratio must be positive".into()));
        }
        if self.lf && !(self.dms || self.c2fg) {
            return Err(Error::Config(
                "model.lf needs side predictions to fuse; enable model.dms or model.c2fg".into(),
            ));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    fn cascade_active(&self) -> bool {
        self.c2fg && self.c2fg_top > 0
    }

    pub fn side_source(&self, stage: usize) -> SideSource {
        if self.cascade_active() && stage < self.c2fg_top {
            SideSource::Cascade
        } else if stage == 0 || self.dms || self.lf || (self.cascade_active() && stage == self.c2fg_top) {
            SideSource::Head
        } else {
            SideSource::None
        }
    }

    /// Whether stage `s` has a cascade cell.
    pub fn has_cell(&self, stage: usize) -> bool {
        self.side_source(stage) == SideSource::Cascade
    }

    /// Whether the attention-refined feature of stage `s` is computed.
    pub fn needs_feature(&self, stage: usize) -> bool {
        self.lf || self.side_source(stage) != SideSource::None
    }

    /// Stages whose side predictions carry a loss term.
    pub fn supervised_stages(&self) -> impl Iterator<Item = usize> + '_ {
        (0..STAGES).filter(move |_| self.dms)
    }

    /// Short human-readable tag like `dms+c2fg+lf(lf_softmax)`.
    pub fn tag(&self) -> String {
        let mut parts = alloc::vec::Vec::new();
        if self.dms {
            parts.push(String::from("dms"));
        }
        if self.c2fg {
            parts.push(format!("c2fg@{}", self.c2fg_top));
        }
        if self.lf {
            parts.push(format!("lf({})", self.fusion));
        }
        if parts.is_empty() {
            String::from("baseline")
        } else {
            parts.join("+")
        }
    }
}
