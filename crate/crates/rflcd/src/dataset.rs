//! Tile triples on disk: `<dir>/A/<name>.png`, `<dir>/B/<name>.png` and
//! `<dir>/label/<name>.png`.

use std::fs;
use std::path::{Path, PathBuf};

use rflcd_core::data::BiTemporalSample;
use rflcd_core::Real;

use crate::error::{Error, Result};
use crate::png;

pub const SUBDIRS: [&str; 3] = ["A", "B", "label"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileFiles {
    pub name: String,
    pub a: PathBuf,
    pub b: PathBuf,
    pub label: PathBuf,
}

/// The tiles of one directory, sorted by file name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub tiles: Vec<TileFiles>,
}

impl DatasetIndex {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Data(format!("data directory {} does not exist", dir.display())));
        }
        for sub in SUBDIRS {
            if !dir.join(sub).is_dir() {
                return Err(Error::Data(format!(
                    "{} has no {sub}/ subdirectory (expected A/, B/ and label/)",
                    dir.display()
                )));
            }
        }
        let mut names: Vec<String> = fs::read_dir(dir.join("A"))
            .map_err(Error::io(&dir.join("A")))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
            .collect();
        names.sort();
        let mut tiles = Vec::with_capacity(names.len());
        for name in names {
            let [a, b, label] = SUBDIRS.map(|s| dir.join(s).join(&name));
            for p in [&b, &label] {
                if !p.is_file() {
                    return Err(Error::Data(format!("{} is missing for tile {name}", p.display())));
                }
            }
            tiles.push(TileFiles { name, a, b, label });
        }
        Ok(DatasetIndex {
            root: dir.to_path_buf(),
            tiles,
        })
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Tiles `range` of this index, keeping the root.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        DatasetIndex {
            root: self.root.clone(),
            tiles: self.tiles[range].to_vec(),
        }
    }

    pub fn load<T: Real>(&self, i: usize) -> Result<BiTemporalSample<T>> {
        let t = &self.tiles[i];
        let (a, b, label) = (png::read_rgb(&t.a)?, png::read_rgb(&t.b)?, png::read_gray(&t.label)?);
        BiTemporalSample::from_rasters(&a, &b, &label).map_err(|e| Error::Data(format!("tile {}: {e}", t.name)))
    }

    pub fn load_all<T: Real>(&self) -> Result<Vec<BiTemporalSample<T>>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

/// Training and validation tiles.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: DatasetIndex,
    pub val: Option<DatasetIndex>,
}

/// Resolves the training layout under `root`.
///
/// With a `train/` subdirectory, training reads it and validation reads
/// `val_root` or else `root/val`, if present. Without one, `root` itself
/// holds the tiles; validation then reads `val_root` if given, or else the
/// last `val_fraction` of the sorted tiles, which are removed from training.
pub fn resolve_splits(root: &Path, val_root: Option<&Path>, val_fraction: f64) -> Result<Splits> {
    if !root.exists() {
        return Err(Error::Data(format!("data root {} does not exist", root.display())));
    }
    let explicit_val = val_root.map(DatasetIndex::open).transpose()?;
    if root.join("train").is_dir() {
        let val = match explicit_val {
            Some(v) => Some(v),
            None if root.join("val").is_dir() => Some(DatasetIndex::open(&root.join("val"))?),
            None => None,
        };
        return Ok(Splits {
            train: DatasetIndex::open(&root.join("train"))?,
            val,
        });
    }
    let all = DatasetIndex::open(root)?;
    if explicit_val.is_some() {
        return Ok(Splits {
            train: all,
            val: explicit_val,
        });
    }
    let n_val = (val_fraction * all.len() as f64).round() as usize;
    let cut = all.len() - n_val.min(all.len());
    Ok(Splits {
        train: all.slice(0..cut),
        val: (n_val > 0).then(|| all.slice(cut..all.len())),
    })
}

/// The directory holding evaluation tiles: `dir/test` if it exists, else `dir`.
pub fn evaluation_dir(dir: &Path) -> PathBuf {
    let test = dir.join("test");
    if test.join("A").is_dir() {
        test
    } else {
        dir.to_path_buf()
    }
}
