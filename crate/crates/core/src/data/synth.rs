//! Procedural bi-temporal tiles.
//!
//! A tile has a smooth textured background and a few "persistent" shapes
//! shared by both dates. "Change" shapes are drawn on only one of the two
//! images (added in B or removed from A), and the label is the union of their
//! masks. B then gets a global brightness/contrast jitter, so the two images
//! also differ where nothing changed.
//!
//! Geometry and jitter come from separate RNG streams, so labels depend on
//! geometry alone.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sample::Raster;
use crate::error::{Error, Result};
use crate::model::SIZE_MULTIPLE;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Tile height and width.
    pub size: usize,
    /// Inclusive range of shapes present in both images.
    pub persistent_shapes: (usize, usize),
    /// Inclusive range of change shapes; `(0, 0)` yields change-free tiles.
    pub change_shapes: (usize, usize),
    /// Accepted range of the changed-pixel fraction.
    pub change_fraction: (f64, f64),
    /// Maximum additive brightness shift of B.
    pub brightness: f64,
    /// Maximum relative contrast change of B.
    pub contrast: f64,
    /// Change-shape redraws before giving up on the fraction range.
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            persistent_shapes: (2, 5),
            change_shapes: (1, 3),
            change_fraction: (0.02, 0.30),
            brightness: 0.08,
            contrast: 0.15,
            max_attempts: 1000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Config(format!(
                "size must be divisible by {SIZE_MULTIPLE}, got {}",
                self.size
            )));
        }
        let ordered = |(lo, hi): (usize, usize)| lo <= hi;
        if !ordered(self.persistent_shapes) || !ordered(self.change_shapes) {
            return Err(Error::Config("shape count ranges must have min <= max".into()));
        }
        let (lo, hi) = self.change_fraction;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::Config(format!("invalid change fraction range {lo}..{hi}")));
        }
        Ok(())
    }
}

/// One generated tile. Images are 3-channel, the label 1-channel 0/255.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTile {
    pub a: Raster,
    pub b: Raster,
    pub label: Raster,
    pub change_fraction: f64,
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    kind: Kind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    color: [f64; 3],
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        match self.kind {
            Kind::Rect => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            Kind::Ellipse => dy * dy + dx * dx <= 1.0,
        }
    }
}

type Canvas = Vec<[f64; 3]>;

fn random_shape(rng: &mut ChaCha8Rng, size: usize, radius: (f64, f64), background: &Canvas) -> Shape {
    let s = size as f64;
    let kind = if rng.random::<bool>() { Kind::Rect } else { Kind::Ellipse };
    let ry = rng.random_range(radius.0..radius.1) * s;
    let rx = rng.random_range(radius.0..radius.1) * s;
    let cy = rng.random_range(0.0..s);
    let cx = rng.random_range(0.0..s);
    let under = background[(cy as usize).min(size - 1) * size + (cx as usize).min(size - 1)];
    // keep the shape visibly distinct from what it covers
    let mut color = [0.0; 3];
    for _ in 0..64 {
        color = [0; 3].map(|_| rng.random_range(0.05..0.95));
        let dist: f64 = color.iter().zip(&under).map(|(a, b)| (a - b).abs()).sum();
        if dist >= 0.45 {
            break;
        }
    }
    Shape {
        kind,
        cy,
        cx,
        ry,
        rx,
        color,
    }
}

fn paint(canvas: &mut Canvas, size: usize, shape: &Shape) {
    for y in 0..size {
        for x in 0..size {
            if shape.contains(y, x) {
                canvas[y * size + x] = shape.color;
            }
        }
    }
}

/// Bilinearly interpolated coarse noise plus a fine per-pixel texture.
fn background(rng: &mut ChaCha8Rng, size: usize) -> Canvas {
    const GRID: usize = 5;
    let base: [f64; 3] = [0; 3].map(|_| rng.random_range(0.25..0.55));
    let coarse: Vec<[f64; 3]> = (0..GRID * GRID)
        .map(|_| base.map(|b| b + rng.random_range(-0.12..0.12)))
        .collect();
    let step = (size - 1) as f64 / (GRID - 1) as f64;
    let mut canvas = vec![[0.0; 3]; size * size];
    for y in 0..size {
        let gy = y as f64 / step;
        let (y0, ty) = ((gy as usize).min(GRID - 2), gy - (gy as usize).min(GRID - 2) as f64);
        for x in 0..size {
            let gx = x as f64 / step;
            let (x0, tx) = ((gx as usize).min(GRID - 2), gx - (gx as usize).min(GRID - 2) as f64);
            let at = |r: usize, c: usize| coarse[r * GRID + c];
            let texture = rng.random_range(-0.04..0.04);
            canvas[y * size + x] = [0, 1, 2].map(|k| {
                let top = at(y0, x0)[k] * (1.0 - tx) + at(y0, x0 + 1)[k] * tx;
                let bottom = at(y0 + 1, x0)[k] * (1.0 - tx) + at(y0 + 1, x0 + 1)[k] * tx;
                top * (1.0 - ty) + bottom * ty + texture
            });
        }
    }
    canvas
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8
}

fn to_raster(canvas: &Canvas, size: usize) -> Raster {
    let mut data = vec![0u8; 3 * size * size];
    for (i, px) in canvas.iter().enumerate() {
        for k in 0..3 {
            data[k * size * size + i] = quantize(px[k]);
        }
    }
    Raster::new(3, size, size, data).expect("size checked")
}

/// Tile `index` of the dataset seeded by `base_seed`.
pub fn generate_tile(cfg: &SynthConfig, base_seed: u64, index: u64) -> Result<SynthTile> {
    cfg.validate()?;
    let size = cfg.size;
    let mut geo = ChaCha8Rng::seed_from_u64(seed::derive(base_seed, &[index, 0]));
    let mut photo = ChaCha8Rng::seed_from_u64(seed::derive(base_seed, &[index, 1]));

    let bg = background(&mut geo, size);
    let mut shared = bg.clone();
    let persistent = geo.random_range(cfg.persistent_shapes.0..=cfg.persistent_shapes.1);
    for _ in 0..persistent {
        let shape = random_shape(&mut geo, size, (0.05, 0.16), &shared);
        paint(&mut shared, size, &shape);
    }

    let (mut a, mut b) = (shared.clone(), shared.clone());
    let mut mask = vec![false; size * size];
    let mut fraction = 0.0;
    if cfg.change_shapes.1 > 0 {
        let mut accepted = false;
        for _ in 0..cfg.max_attempts {
            let count = geo.random_range(cfg.change_shapes.0.max(1)..=cfg.change_shapes.1);
            let shapes: Vec<(Shape, bool)> = (0..count)
                .map(|_| (random_shape(&mut geo, size, (0.07, 0.2), &shared), geo.random::<bool>()))
                .collect();
            mask.iter_mut().for_each(|m| *m = false);
            for (s, _) in &shapes {
                for y in 0..size {
                    for x in 0..size {
                        mask[y * size + x] |= s.contains(y, x);
                    }
                }
            }
            fraction = mask.iter().filter(|&&m| m).count() as f64 / (size * size) as f64;
            if (cfg.change_fraction.0..=cfg.change_fraction.1).contains(&fraction) {
                for (s, added) in &shapes {
                    paint(if *added { &mut b } else { &mut a }, size, s);
                }
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Invalid(format!(
                "tile {index}: no change layout within the fraction range after {} attempts",
                cfg.max_attempts
            )));
        }
    }

    let shift = photo.random_range(-1.0..=1.0) * cfg.brightness;
    let gain = 1.0 + photo.random_range(-1.0..=1.0) * cfg.contrast;
    for px in &mut b {
        *px = px.map(|v| (v - 0.5) * gain + 0.5 + shift);
    }

    let label = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    Ok(SynthTile {
        a: to_raster(&a, size),
        b: to_raster(&b, size),
        label: Raster::new(1, size, size, label)?,
        change_fraction: fraction,
    })
}
