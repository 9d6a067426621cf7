//! The full change-detection network: backbone, per-stage attention heads,
//! coarse-to-fine cascade and learnable fusion, switched by [`ModelConfig`].

pub mod backbone;
pub mod c2fg;
pub mod config;
pub mod lf;

use alloc::vec;
use alloc::vec::Vec;

pub use backbone::{stage_of, Backbone, ConvBlock, Ecam, NodeGrid};
pub use c2fg::{c2fg_run, C2fgCell, CascadeOutput};
pub use config::{FusionStrategy, HiddenInit, ModelConfig, SideSource, LEVELS, SIZE_MULTIPLE, STAGES};
pub use lf::{fuse, ConfidenceHeads, Fusion};

use crate::error::{Error, Result};
use crate::nn::{kaiming_fill, Conv2d, Mode, Module, Param, ParamRegistry};
use crate::real::Real;
use crate::seed;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Everything one forward pass produces, as tape variables.
#[derive(Clone, Debug)]
pub struct Outputs {
    /// `F^s`, where computed.
    pub features: [Option<Var>; STAGES],
    /// Raw 1×1-head logits at stage resolution.
    pub head_logits: [Option<Var>; STAGES],
    /// Side prediction `Ŷ^s` (head or cascade) at stage resolution.
    pub stage_logits: [Option<Var>; STAGES],
    /// Cascade hidden states at stage resolution.
    pub hidden: [Option<Var>; STAGES],
    /// `Ŷ^s` upsampled to the input resolution.
    pub side_logits: [Option<Var>; STAGES],
    /// `σ(Ŷ^s)` at the input resolution.
    pub side_probs: [Option<Var>; STAGES],
    /// Confidence maps `C^s` at input resolution (fusion only).
    pub confidences: Option<Vec<Var>>,
    pub fusion_weights: Option<Var>,
    /// Final change probability `[N, 1, H, W]`.
    pub fused: Var,
}

/// Parameter and multiply-accumulate totals of one part of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleCost {
    pub name: &'static str,
    pub params: usize,
    pub macs: u64,
}

#[derive(Clone, Debug)]
pub struct RflCdNet<T> {
    config: ModelConfig,
    backbone: Backbone<T>,
    ecam: Vec<Option<Ecam<T>>>,
    heads: Vec<Option<Conv2d<T>>>,
    cells: Vec<Option<C2fgCell<T>>>,
    confidence: Option<ConfidenceHeads<T>>,
}

impl<T: Real> RflCdNet<T> {
    /// Builds the modules the configuration needs, with Kaiming-normal
    /// convolution weights seeded per parameter from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        net.visit_mut(&mut |p| {
            if p.is_trainable() && p.value().rank() == 4 {
                let s = seed::derive(seed, &[p.id().index() as u64]);
                kaiming_fill(p.value_mut(), s);
            }
        });
        Ok(net)
    }

    /// All convolution weights and biases zero, normalizations at identity.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut reg = ParamRegistry::new();
        let cfg = &config;
        let backbone = Backbone::new(&mut reg, cfg);
        let ecam = (0..STAGES)
            .map(|s| cfg.needs_feature(s).then(|| Ecam::new(&mut reg, cfg, s)))
            .collect();
        let heads = (0..STAGES)
            .map(|s| (cfg.side_source(s) == SideSource::Head).then(|| backbone::side_head(&mut reg, cfg, s, "head")))
            .collect();
        let cells = (0..STAGES)
            .map(|s| cfg.has_cell(s).then(|| C2fgCell::new(&mut reg, s, backbone::stage_channels(cfg, s))))
            .collect();
        let confidence = cfg.lf.then(|| ConfidenceHeads::new(&mut reg, cfg));
        Ok(RflCdNet {
            config,
            backbone,
            ecam,
            heads,
            cells,
            confidence,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone<T> {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut Backbone<T> {
        &mut self.backbone
    }

    pub fn ecam(&self, stage: usize) -> Option<&Ecam<T>> {
        self.ecam.get(stage)?.as_ref()
    }

    pub fn ecam_mut(&mut self, stage: usize) -> Option<&mut Ecam<T>> {
        self.ecam.get_mut(stage)?.as_mut()
    }

    pub fn head(&self, stage: usize) -> Option<&Conv2d<T>> {
        self.heads.get(stage)?.as_ref()
    }

    pub fn head_mut(&mut self, stage: usize) -> Option<&mut Conv2d<T>> {
        self.heads.get_mut(stage)?.as_mut()
    }

    pub fn cell(&self, stage: usize) -> Option<&C2fgCell<T>> {
        self.cells.get(stage)?.as_ref()
    }

    pub fn cell_mut(&mut self, stage: usize) -> Option<&mut C2fgCell<T>> {
        self.cells.get_mut(stage)?.as_mut()
    }

    pub fn confidence_heads(&self) -> Option<&ConfidenceHeads<T>> {
        self.confidence.as_ref()
    }

    pub fn confidence_heads_mut(&mut self) -> Option<&mut ConfidenceHeads<T>> {
        self.confidence.as_mut()
    }

    pub fn find_param(&self, name: &str) -> Option<&Param<T>> {
        self.params().into_iter().find(|p| p.name() == name)
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, xa: Var, xb: Var, mode: Mode) -> Result<Outputs> {
        let (enc_a, enc_b) = self.backbone.encode_pair(tape, xa, xb, mode)?;
        let grid = self.backbone.nested_decode(tape, &enc_a, &enc_b, mode)?;
        let mut features = [None; STAGES];
        for (s, ecam) in self.ecam.iter().enumerate() {
            if let Some(ecam) = ecam {
                features[s] = Some(ecam.forward(tape, &grid.levels[s])?);
            }
        }
        let feature = |s: usize| features[s].ok_or_else(|| Error::Invalid(alloc::format!("stage {s} feature missing")));

        let mut head_logits = [None; STAGES];
        for (s, head) in self.heads.iter().enumerate() {
            if let Some(head) = head {
                head_logits[s] = Some(head.forward(tape, feature(s)?)?);
            }
        }
        let mut stage_logits = head_logits;
        let mut hidden = [None; STAGES];
        if self.cells.iter().any(Option::is_some) {
            let top = self.config.c2fg_top;
            let cells: Vec<&C2fgCell<T>> = self.cells[..top]
                .iter()
                .map(|c| c.as_ref().expect("cells exist below the cascade top"))
                .collect();
            let feats = (0..top).map(feature).collect::<Result<Vec<_>>>()?;
            let start = head_logits[top].expect("head at the cascade top");
            let run = c2fg_run(tape, &cells, &feats, top, start, self.config.hidden_init)?;
            for &(s, y) in &run.predictions {
                stage_logits[s] = Some(y);
            }
            for &(s, h) in &run.hidden {
                hidden[s] = Some(h);
            }
        }

        let mut side_logits = [None; STAGES];
        let mut side_probs = [None; STAGES];
        for s in 0..STAGES {
            if let Some(y) = stage_logits[s] {
                let up = tape.upsample_bilinear(y, 1 << s)?;
                side_logits[s] = Some(up);
                side_probs[s] = Some(tape.sigmoid(up)?);
            }
        }

        let (fused, confidences, fusion_weights) = match &self.confidence {
            Some(heads) => {
                let feats = (0..STAGES).map(feature).collect::<Result<Vec<_>>>()?;
                let conf = heads.confidences(tape, &feats)?;
                let logits: Vec<Var> = side_logits.iter().map(|v| v.expect("all side predictions")).collect();
                let fusion = fuse(tape, &logits, &conf, self.config.fusion)?;
                (fusion.fused, Some(conf), Some(fusion.weights))
            }
            None => (side_probs[0].expect("stage-0 prediction"), None, None),
        };
        Ok(Outputs {
            features,
            head_logits,
            stage_logits,
            hidden,
            side_logits,
            side_probs,
            confidences,
            fusion_weights,
            fused,
        })
    }

    /// Eval-mode change probabilities for an image pair, each `[N, 3, H, W]`.
    pub fn predict(&mut self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let a = tape.constant(xa.clone());
        let b = tape.constant(xb.clone());
        let out = self.forward(&mut tape, a, b, Mode::Eval)?;
        Ok(tape.value(out.fused).clone())
    }

    /// Parameter and MAC totals per part: backbone, attention heads, cascade,
    /// fusion. MACs count convolutions only, for an `[N, 3, H, W]` input.
    pub fn cost_report(&self, n: usize, h: usize, w: usize) -> Vec<ModuleCost> {
        let count = |m: &dyn Fn(&mut dyn FnMut(&Param<T>))| {
            let mut total = 0;
            m(&mut |p| {
                if p.is_trainable() {
                    total += p.value().len();
                }
            });
            total
        };
        let mut heads_macs = 0;
        for s in 0..STAGES {
            if let Some(e) = self.ecam(s) {
                heads_macs += e.macs(n);
            }
            if let Some(c) = self.head(s) {
                heads_macs += c.macs(n, h >> s, w >> s);
            }
        }
        let cell_macs = (0..STAGES)
            .filter_map(|s| self.cell(s).map(|c| c.macs(n, h >> s, w >> s)))
            .sum();
        let lf_macs = self.confidence.as_ref().map_or(0, |c| c.macs(n, h, w));
        vec![
            ModuleCost {
                name: "backbone",
                params: count(&|f| self.backbone.visit(f)),
                macs: self.backbone.macs(n, h, w),
            },
            ModuleCost {
                name: "ecam_heads",
                params: count(&|f| {
                    self.ecam.visit(f);
                    self.heads.visit(f);
                }),
                macs: heads_macs,
            },
            ModuleCost {
                name: "c2fg",
                params: count(&|f| self.cells.visit(f)),
                macs: cell_macs,
            },
            ModuleCost {
                name: "lf",
                params: count(&|f| self.confidence.visit(f)),
                macs: lf_macs,
            },
        ]
    }

    /// Convolution multiply-accumulates for an `[N, 3, H, W]` input.
    pub fn flops_estimate(&self, n: usize, h: usize, w: usize) -> u64 {
        self.cost_report(n, h, w).iter().map(|c| c.macs).sum()
    }

    /// Copies every parameter value from `other`, which must have the same
    /// configuration.
    pub fn load_from(&mut self, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Config("parameter transfer between different configurations".into()));
        }
        let src = other.params();
        let mut i = 0;
        self.visit_mut(&mut |p| {
            *p.value_mut() = src[i].value().clone();
            i += 1;
        });
        Ok(())
    }

    /// The same network in another precision.
    pub fn cast<U: Real>(&self) -> RflCdNet<U> {
        let mut out = RflCdNet::<U>::zeroed(self.config.clone()).expect("config already validated");
        let src = self.params();
        let mut i = 0;
        out.visit_mut(&mut |p| {
            *p.value_mut() = src[i].value().cast();
            i += 1;
        });
        out
    }
}

impl<T: Real> Module<T> for RflCdNet<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.backbone.visit(f);
        self.ecam.visit(f);
        self.heads.visit(f);
        self.cells.visit(f);
        self.confidence.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.backbone.visit_mut(f);
        self.ecam.visit_mut(f);
        self.heads.visit_mut(f);
        self.cells.visit_mut(f);
        self.confidence.visit_mut(f);
    }
}
