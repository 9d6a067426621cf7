//! Siamese nested-UNet feature extractor.
//!
//! Both temporal images go through one shared encoder. Decoder node
//! `X^{m,n}` (`n ≥ 1`, `m + n ≤ 4`) convolves the concatenation of both
//! images' encoder features at level `m`, the earlier decoder nodes of that
//! level, and the ×2-upsampled node `X^{m+1,n−1}`; for `n = 1` that upsampled
//! node is the post-event encoder feature.

use alloc::format;
use alloc::vec::Vec;

use super::config::{ModelConfig, LEVELS, SIZE_MULTIPLE, STAGES};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, ChannelAttention, Conv2d, Mode, Module, Param, ParamRegistry};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// `(conv3×3 → batch-norm → ReLU) × 2`.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
}

impl<T: Real> ConvBlock<T> {
    pub fn new(reg: &mut ParamRegistry, name: &str, in_ch: usize, out_ch: usize) -> Self {
        ConvBlock {
            conv1: Conv2d::same(reg, &format!("{name}.conv1"), in_ch, out_ch, 3, true),
            bn1: BatchNorm2d::new(reg, &format!("{name}.bn1"), out_ch),
            conv2: Conv2d::same(reg, &format!("{name}.conv2"), out_ch, out_ch, 3, true),
            bn2: BatchNorm2d::new(reg, &format!("{name}.bn2"), out_ch),
        }
    }

    pub fn convs(&self) -> [&Conv2d<T>; 2] {
        [&self.conv1, &self.conv2]
    }

    pub fn convs_mut(&mut self) -> [&mut Conv2d<T>; 2] {
        [&mut self.conv1, &mut self.conv2]
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(tape, x)?;
        let h = self.bn1.forward(tape, h, mode)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, h)?;
        let h = self.bn2.forward(tape, h, mode)?;
        tape.relu(h)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.conv1.macs(n, h, w) + self.conv2.macs(n, h, w)
    }
}

impl<T: Real> Module<T> for ConvBlock<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.conv1.visit(f);
        self.bn1.visit(f);
        self.conv2.visit(f);
        self.bn2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_mut(f);
        self.bn1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.bn2.visit_mut(f);
    }
}

/// Decoder nodes: `levels[m][n - 1]` holds `X^{m,n}`.
#[derive(Clone, Debug)]
pub struct NodeGrid {
    pub levels: Vec<Vec<Var>>,
}

impl NodeGrid {
    pub fn node(&self, m: usize, n: usize) -> Option<Var> {
        self.levels.get(m)?.get(n.checked_sub(1)?).copied()
    }

    pub fn count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

/// Number of decoder nodes at level `m`.
pub fn decoder_nodes(level: usize) -> usize {
    (LEVELS - 1).saturating_sub(level)
}

/// Input channels of decoder node `X^{m,n}`.
pub fn decoder_in_channels(cfg: &ModelConfig, m: usize, n: usize) -> usize {
    (n + 1) * cfg.width(m) + cfg.width(m + 1)
}

#[derive(Clone, Debug)]
pub struct Backbone<T> {
    encoder: Vec<ConvBlock<T>>,
    decoder: Vec<Vec<ConvBlock<T>>>,
}

impl<T: Real> Backbone<T> {
    pub fn new(reg: &mut ParamRegistry, cfg: &ModelConfig) -> Self {
        let encoder = (0..LEVELS)
            .map(|m| {
                let in_ch = if m == 0 { 3 } else { cfg.width(m - 1) };
                ConvBlock::new(reg, &format!("encoder.{m}"), in_ch, cfg.width(m))
            })
            .collect();
        let decoder = (0..LEVELS - 1)
            .map(|m| {
                (1..=decoder_nodes(m))
                    .map(|n| {
                        ConvBlock::new(reg, &format!("decoder.{m}_{n}"), decoder_in_channels(cfg, m, n), cfg.width(m))
                    })
                    .collect()
            })
            .collect();
        Backbone { encoder, decoder }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ConvBlock<T>> {
        self.encoder.iter().chain(self.decoder.iter().flatten())
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut ConvBlock<T>> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut().flatten())
    }

    /// Encoder features `X^{m,0}` of one image, `m = 0..4`.
    pub fn encode(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(LEVELS);
        let mut h = x;
        for (m, block) in self.encoder.iter_mut().enumerate() {
            if m > 0 {
                h = tape.maxpool2(h)?;
            }
            h = block.forward(tape, h, mode)?;
            feats.push(h);
        }
        Ok(feats)
    }

    /// Shared-weight encoding of both temporal images.
    pub fn encode_pair(&mut self, tape: &mut Tape<T>, xa: Var, xb: Var, mode: Mode) -> Result<(Vec<Var>, Vec<Var>)> {
        check_pair(tape.shape(xa), tape.shape(xb))?;
        let a = self.encode(tape, xa, mode)?;
        let b = self.encode(tape, xb, mode)?;
        Ok((a, b))
    }

    pub fn nested_decode(&mut self, tape: &mut Tape<T>, enc_a: &[Var], enc_b: &[Var], mode: Mode) -> Result<NodeGrid> {
        let mut levels: Vec<Vec<Var>> = (0..LEVELS - 1).map(|m| Vec::with_capacity(decoder_nodes(m))).collect();
        for n in 1..LEVELS {
            for m in 0..LEVELS - n {
                let below = if n == 1 { enc_b[m + 1] } else { levels[m + 1][n - 2] };
                let up = tape.upsample_bilinear2(below)?;
                let mut inputs = Vec::with_capacity(n + 2);
                inputs.push(enc_a[m]);
                inputs.push(enc_b[m]);
                inputs.extend_from_slice(&levels[m]);
                inputs.push(up);
                let z = tape.concat(&inputs, 1)?;
                let node = self.decoder[m][n - 1].forward(tape, z, mode)?;
                levels[m].push(node);
            }
        }
        Ok(NodeGrid { levels })
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let enc: u64 = self
            .encoder
            .iter()
            .enumerate()
            .map(|(m, b)| b.macs(n, h >> m, w >> m))
            .sum();
        let dec: u64 = self
            .decoder
            .iter()
            .enumerate()
            .flat_map(|(m, row)| row.iter().map(move |b| b.macs(n, h >> m, w >> m)))
            .sum();
        // the encoder runs once per temporal image
        2 * enc + dec
    }
}

impl<T: Real> Module<T> for Backbone<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for b in self.blocks() {
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for b in self.blocks_mut() {
            b.visit_mut(f);
        }
    }
}

fn check_pair(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op: "encode_pair",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    match *a {
        [_, 3, h, w] if h % SIZE_MULTIPLE == 0 && w % SIZE_MULTIPLE == 0 && h > 0 && w > 0 => Ok(()),
        [_, 3, h, w] => Err(Error::InvalidShape {
            op: "encode_pair",
            detail: format!(
                "spatial size {h}x{w} is not divisible by {SIZE_MULTIPLE}; pad the images to a multiple of {SIZE_MULTIPLE}"
            ),
        }),
        _ => Err(Error::InvalidShape {
            op: "encode_pair",
            detail: format!("expected [N, 3, H, W] images, got {a:?}"),
        }),
    }
}

/// Channel-attention refinement of the decoder nodes of one stage.
#[derive(Clone, Debug)]
pub struct Ecam<T> {
    nodes: usize,
    whole: ChannelAttention<T>,
    summed: ChannelAttention<T>,
}

impl<T: Real> Ecam<T> {
    pub fn new(reg: &mut ParamRegistry, cfg: &ModelConfig, stage: usize) -> Self {
        let nodes = decoder_nodes(stage);
        let w = cfg.width(stage);
        Ecam {
            nodes,
            whole: ChannelAttention::new(reg, &format!("ecam.{stage}.whole"), nodes * w, cfg.attention_ratio),
            summed: ChannelAttention::new(reg, &format!("ecam.{stage}.summed"), w, cfg.attention_ratio),
        }
    }

    pub fn attentions(&self) -> [&ChannelAttention<T>; 2] {
        [&self.whole, &self.summed]
    }

    pub fn attentions_mut(&mut self) -> [&mut ChannelAttention<T>; 2] {
        [&mut self.whole, &mut self.summed]
    }

    /// `F = X ⊗ (CAM(X) + tile(CAM(ΣX)))` with `X` the channel concatenation
    /// of the stage's nodes.
    pub fn forward(&self, tape: &mut Tape<T>, nodes: &[Var]) -> Result<Var> {
        if nodes.len() != self.nodes {
            return Err(Error::InvalidShape {
                op: "ecam",
                detail: format!("expected {} nodes, got {}", self.nodes, nodes.len()),
            });
        }
        let first = tape.shape(nodes[0]).to_vec();
        for &v in &nodes[1..] {
            if tape.shape(v) != first.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "ecam",
                    lhs: first,
                    rhs: tape.shape(v).to_vec(),
                });
            }
        }
        let x = tape.concat(nodes, 1)?;
        let mut sum = nodes[0];
        for &v in &nodes[1..] {
            sum = tape.add(sum, v)?;
        }
        let att_whole = self.whole.forward(tape, x)?;
        let att_summed = self.summed.forward(tape, sum)?;
        ecam_combine(tape, x, att_whole, att_summed, self.nodes)
    }

    pub fn macs(&self, n: usize) -> u64 {
        // perceptrons run on pooled 1×1 descriptors, twice (avg and max)
        let mlp = |a: &ChannelAttention<T>| -> u64 { a.layers().iter().map(|c| 2 * c.macs(n, 1, 1)).sum() };
        mlp(&self.whole) + mlp(&self.summed)
    }
}

/// `x ⊗ (att_whole + tile(att_summed, copies))`.
pub fn ecam_combine<T: Real>(tape: &mut Tape<T>, x: Var, att_whole: Var, att_summed: Var, copies: usize) -> Result<Var> {
    let tiled = if copies == 1 {
        att_summed
    } else {
        let reps: Vec<Var> = core::iter::repeat_n(att_summed, copies).collect();
        tape.concat(&reps, 1)?
    };
    let att = tape.add(att_whole, tiled)?;
    tape.mul(x, att)
}

impl<T: Real> Module<T> for Ecam<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.whole.visit(f);
        self.summed.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.whole.visit_mut(f);
        self.summed.visit_mut(f);
    }
}

/// 1×1 convolution from a stage feature to one pre-sigmoid logit channel.
pub fn side_head<T: Real>(reg: &mut ParamRegistry, cfg: &ModelConfig, stage: usize, prefix: &str) -> Conv2d<T> {
    Conv2d::new(reg, &format!("{prefix}.{stage}"), stage_channels(cfg, stage), 1, 1, 1, 0, true)
}

/// Channels of the refined feature `F^s`: `(4 − s) · width(s)`.
pub fn stage_channels(cfg: &ModelConfig, stage: usize) -> usize {
    decoder_nodes(stage) * cfg.width(stage)
}

/// `log2(input / feature)` for a dyadic feature size.
pub fn stage_of(input: usize, feature: usize) -> Result<usize> {
    if feature == 0 || !input.is_multiple_of(feature) || !(input / feature).is_power_of_two() {
        return Err(Error::Invalid(format!(
            "{input} / {feature} is not a power-of-two down-sampling ratio"
        )));
    }
    Ok((input / feature).trailing_zeros() as usize)
}

const _: () = assert!(STAGES < LEVELS);
