use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::{chip_grid, save_mask, save_rgb, BinaryMask, DatasetLayout, TileGrid};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRecord {
    pub split: String,
    pub tile: String,
    pub source: String,
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipManifest {
    pub patch: usize,
    pub overlap: usize,
    pub tiles: Vec<TileRecord>,
}

pub const CHIP_MANIFEST: &str = "chips.json";

/// Tiles for every pair of `splits` found under `src`, written to
/// `dst/{split}/{A,B,label}/{id}_{x}_{y}.png`, plus a provenance manifest.
pub fn chip_dataset(src: &Path, dst: &Path, splits: &[&str], patch: usize, overlap: usize) -> Result<ChipManifest> {
    let layout = DatasetLayout::new(src);
    let mut tiles = Vec::new();
    let mut found = false;
    for &split in splits {
        if !src.join(split).is_dir() {
            continue;
        }
        found = true;
        for id in layout.ids(split)? {
            let pair = layout.load(split, &id)?;
            let (w, h) = pair.dims();
            let grid: TileGrid = chip_grid(w, h, patch, overlap)?;
            let a = grid.chips(&pair.image_a)?;
            let b = grid.chips(&pair.image_b)?;
            let l = grid.chips(pair.label.raster())?;
            for (k, &(x, y)) in grid.origins.iter().enumerate() {
                let tile = format!("{id}_{x}_{y}");
                let file = format!("{tile}.png");
                let dir = dst.join(split);
                save_rgb(&a[k], &dir.join("A").join(&file))?;
                save_rgb(&b[k], &dir.join("B").join(&file))?;
                let mask = BinaryMask::from_vec(patch, patch, l[k].data().to_vec())?;
                save_mask(&mask, &dir.join("label").join(&file))?;
                tiles.push(TileRecord {
                    split: split.to_string(),
                    tile,
                    source: id.clone(),
                    x,
                    y,
                });
            }
        }
    }
    if !found {
        return Err(Error::MissingFile(src.to_path_buf()));
    }
    let manifest = ChipManifest { patch, overlap, tiles };
    std::fs::create_dir_all(dst)?;
    std::fs::write(
        dst.join(CHIP_MANIFEST),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}
