//! Raster I/O, chipping and sliding-window arithmetic, augmentation, and
//! error-map rendering.

mod augment;
mod raster;
mod render;
mod synthetic;
mod tiling;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use augment::{augment, photometric_distort, sample_seed, AugmentPolicy, GeometricDraw, PhotometricPolicy};
pub use raster::{load_mask, load_rgb, reflect101, save_mask, save_rgb, BinaryMask, LogitMap, Raster, RgbRaster};
pub use render::{render_error_map, FN_COLOR, FP_COLOR, TN_COLOR, TP_COLOR};
pub use synthetic::{synthetic_dataset, synthetic_pair, write_split};
pub use tiling::{chip_grid, sliding_windows, stitch_logits, TileGrid};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-channel normalization applied when rasters become network input.
pub const PIXEL_MEAN: [f64; 3] = [123.675, 116.28, 103.53];
pub const PIXEL_STD: [f64; 3] = [58.395, 57.12, 57.375];

#[derive(Clone, PartialEq, Debug)]
pub struct SamplePair {
    pub id: String,
    pub image_a: RgbRaster,
    pub image_b: RgbRaster,
    pub label: BinaryMask,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, image_a: RgbRaster, image_b: RgbRaster, label: BinaryMask) -> Result<Self> {
        let id = id.into();
        if image_a.dims() != image_b.dims() || image_a.dims() != label.dims() {
            return Err(Error::Extent(format!(
                "sample {id}: A {:?}, B {:?}, label {:?}",
                image_a.dims(),
                image_b.dims(),
                label.dims()
            )));
        }
        if image_a.channels() != 3 || image_b.channels() != 3 {
            return Err(Error::invalid(format!("sample {id}: images must be RGB")));
        }
        Ok(Self {
            id,
            image_a,
            image_b,
            label,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.label.dims()
    }
}

pub fn load_sample(path_a: &Path, path_b: &Path, path_label: &Path) -> Result<SamplePair> {
    let id = path_a
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SamplePair::new(id, load_rgb(path_a)?, load_rgb(path_b)?, load_mask(path_label)?)
}

/// `{root}/{split}/{A,B,label}/{id}.png`, or a flat `{root}/{A,B,label}`
/// directory partitioned by an explicit split manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub root: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

/// Explicit sample ids per split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    #[serde(flatten)]
    pub splits: BTreeMap<String, Vec<String>>,
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            manifest: None,
        }
    }

    fn split_dir(&self, split: &str) -> PathBuf {
        match self.manifest {
            Some(_) => self.root.clone(),
            None => self.root.join(split),
        }
    }

    /// Sample ids of a split, sorted.
    pub fn ids(&self, split: &str) -> Result<Vec<String>> {
        if let Some(m) = &self.manifest {
            let manifest = SplitManifest::load(m)?;
            return manifest
                .splits
                .get(split)
                .cloned()
                .ok_or_else(|| Error::Config(format!("split '{split}' not in manifest {}", m.display())));
        }
        let dir = self.split_dir(split).join("A");
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir));
        }
        let mut ids: Vec<String> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn paths(&self, split: &str, id: &str) -> [PathBuf; 3] {
        let dir = self.split_dir(split);
        let file = format!("{id}.png");
        ["A", "B", "label"].map(|d| dir.join(d).join(&file))
    }

    pub fn load(&self, split: &str, id: &str) -> Result<SamplePair> {
        let [a, b, l] = self.paths(split, id);
        load_sample(&a, &b, &l)
            .map(|mut s| {
                s.id = id.to_string();
                s
            })
            .map_err(|e| Error::Sample {
                id: id.to_string(),
                source: Box::new(e),
            })
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<SamplePair>> {
        self.ids(split)?.iter().map(|id| self.load(split, id)).collect()
    }
}

/// `[1,3,H,W]` normalized image tensor.
pub fn image_tensor<T: Real>(img: &RgbRaster) -> Result<Tensor<T>> {
    let (w, h) = img.dims();
    let mut data = vec![T::zero(); 3 * h * w];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = T::lit((px[c] as f64 - PIXEL_MEAN[c]) / PIXEL_STD[c]);
        }
    }
    Tensor::from_vec(vec![1, 3, h, w], data)
}

/// `[1,1,H,W]` tensor of 0/1 labels.
pub fn label_tensor<T: Real>(mask: &BinaryMask) -> Result<Tensor<T>> {
    let (w, h) = mask.dims();
    let data = mask.data().iter().map(|&v| T::lit(v as f64)).collect();
    Tensor::from_vec(vec![1, 1, h, w], data)
}

/// Stacks samples of equal extent into `(A, B, label)` batch tensors.
pub fn batch_tensors<T: Real>(samples: &[SamplePair]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let a = samples
        .iter()
        .map(|s| image_tensor(&s.image_a))
        .collect::<Result<Vec<_>>>()?;
    let b = samples
        .iter()
        .map(|s| image_tensor(&s.image_b))
        .collect::<Result<Vec<_>>>()?;
    let l = samples
        .iter()
        .map(|s| label_tensor(&s.label))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Tensor::stack_batch(&a)?,
        Tensor::stack_batch(&b)?,
        Tensor::stack_batch(&l)?,
    ))
}

/// Extracts sample `n`, channel 0 of a `[N,C,H,W]` tensor as a logit map.
pub fn logit_map<T: Real>(t: &Tensor<T>, n: usize) -> Result<LogitMap> {
    let (_, _, h, w) = t.dims4()?;
    let s = t.sample(n)?;
    let data = s.data()[..h * w]
        .iter()
        .map(|v| v.to_f32().unwrap_or(f32::NAN))
        .collect();
    Raster::from_vec(w, h, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::confusion_matrix;

    #[test]
    fn error_map_colors_match_confusion_counts() {
        let a = synthetic_pair("a", 32, 0).label;
        let b = synthetic_pair("b", 32, 0).label;
        let cm = confusion_matrix(&a, &b).unwrap();
        let map = render_error_map(&a, &b).unwrap();
        let count = |c: [u8; 3]| map.data().chunks(3).filter(|p| *p == c).count() as u64;
        assert_eq!(
            [count(TP_COLOR), count(FP_COLOR), count(FN_COLOR), count(TN_COLOR)],
            [cm.tp, cm.fp, cm.fn_, cm.tn]
        );
    }

    #[test]
    fn dataset_layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = synthetic_dataset(3, 32, 4);
        write_split(dir.path(), "train", &pairs).unwrap();
        let layout = DatasetLayout::new(dir.path());
        assert_eq!(layout.load_split("train").unwrap(), pairs);
        assert!(matches!(layout.ids("val"), Err(Error::MissingFile(_))));
        std::fs::remove_file(dir.path().join("train/B/syn0001.png")).unwrap();
        match layout.load_split("train") {
            Err(Error::Sample { id, .. }) => assert_eq!(id, "syn0001"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_selects_ids() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = synthetic_dataset(3, 32, 4);
        write_split(dir.path(), ".", &pairs).unwrap();
        let m = dir.path().join("split.json");
        std::fs::write(&m, r#"{"train": ["syn0002", "syn0000"], "test": ["syn0001"]}"#).unwrap();
        let layout = DatasetLayout {
            root: dir.path().to_path_buf(),
            manifest: Some(m),
        };
        let train = layout.load_split("train").unwrap();
        assert_eq!(train[0], pairs[2]);
        assert!(layout.ids("val").is_err());
    }

    #[test]
    fn extent_mismatch_rejected() {
        let p = synthetic_pair("a", 32, 0);
        let small = synthetic_pair("b", 16, 0);
        assert!(matches!(
            SamplePair::new("x", p.image_a, small.image_b, p.label),
            Err(Error::Extent(_))
        ));
    }
}
