//! Writing procedurally generated datasets to disk.

use std::fs;
use std::path::{Path, PathBuf};

use rflcd_core::data::{generate_tile, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::SUBDIRS;
use crate::error::{Error, Result};
use crate::png;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub size: usize,
    pub count: usize,
    pub tiles: Vec<ManifestTile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestTile {
    pub name: String,
    pub change_fraction: f64,
}

pub fn tile_name(index: usize) -> String {
    format!("{index:05}.png")
}

/// Generates `count` tiles into `out` and returns the manifest path.
///
/// A non-empty `out` is refused unless `force` is set, in which case the
/// previous tiles and manifest are removed first.
pub fn write_dataset(out: &Path, cfg: &SynthConfig, seed: u64, count: usize, force: bool) -> Result<PathBuf> {
    cfg.validate()?;
    if out.exists() {
        let non_empty = fs::read_dir(out).map_err(Error::io(out))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        for sub in SUBDIRS {
            let dir = out.join(sub);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(Error::io(&dir))?;
            }
        }
    }
    for sub in SUBDIRS {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    }
    let mut tiles = Vec::with_capacity(count);
    for i in 0..count {
        let tile = generate_tile(cfg, seed, i as u64)?;
        let name = tile_name(i);
        png::write(&out.join("A").join(&name), &tile.a)?;
        png::write(&out.join("B").join(&name), &tile.b)?;
        png::write(&out.join("label").join(&name), &tile.label)?;
        tiles.push(ManifestTile {
            name,
            change_fraction: tile.change_fraction,
        });
    }
    let manifest = Manifest {
        seed,
        size: cfg.size,
        count,
        tiles,
    };
    let path = out.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(Error::io(&path))?;
    Ok(path)
}
