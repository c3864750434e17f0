use serde::{Deserialize, Serialize};

use super::raster::{LogitMap, Raster};
use crate::error::{Error, Result};

/// Overlapping square tiles over a mirror-padded canvas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    /// `(x, y)` tile offsets, row-major.
    pub origins: Vec<(usize, usize)>,
    pub patch: usize,
    pub stride: usize,
    pub padded_w: usize,
    pub padded_h: usize,
    pub original_w: usize,
    pub original_h: usize,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Pads `img` to the grid canvas and cuts every tile, in origin order.
    pub fn chips<T: Copy>(&self, img: &Raster<T>) -> Result<Vec<Raster<T>>> {
        if img.dims() != (self.original_w, self.original_h) {
            return Err(Error::Extent(format!(
                "raster {:?} does not match grid {}×{}",
                img.dims(),
                self.original_w,
                self.original_h
            )));
        }
        let canvas = img.pad_reflect(self.padded_w, self.padded_h)?;
        self.origins
            .iter()
            .map(|&(x, y)| canvas.crop(x, y, self.patch, self.patch))
            .collect()
    }
}

fn tiles_per_axis(axis: usize, patch: usize, stride: usize) -> usize {
    if axis <= patch {
        1
    } else {
        axis.div_ceil(stride)
    }
}

/// Chipping layout: `stride = patch − overlap`, `n = ceil(axis / stride)` tiles
/// per axis (one when the axis fits in a single patch), canvas
/// `(n − 1)·stride + patch`.
pub fn chip_grid(w: usize, h: usize, patch: usize, overlap: usize) -> Result<TileGrid> {
    if patch == 0 || overlap >= patch {
        return Err(Error::invalid(format!(
            "overlap {overlap} must be smaller than patch {patch}"
        )));
    }
    if w == 0 || h == 0 {
        return Err(Error::Extent(format!("empty image {w}×{h}")));
    }
    let stride = patch - overlap;
    let nx = tiles_per_axis(w, patch, stride);
    let ny = tiles_per_axis(h, patch, stride);
    let origins = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i * stride, j * stride)))
        .collect();
    Ok(TileGrid {
        origins,
        patch,
        stride,
        padded_w: (nx - 1) * stride + patch,
        padded_h: (ny - 1) * stride + patch,
        original_w: w,
        original_h: h,
    })
}

fn axis_origins(axis: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = axis - window;
    let mut v: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o <= last).collect();
    if v.last() != Some(&last) {
        v.push(last);
    }
    v
}

/// Window origins at multiples of `stride`, with the last origin per axis
/// clamped to `axis − window`. Row-major, no duplicates. A stride longer
/// than the window would leave gaps and is rejected.
pub fn sliding_windows(w: usize, h: usize, window: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if stride == 0 || window == 0 {
        return Err(Error::invalid("window and stride must be positive"));
    }
    if stride > window {
        return Err(Error::invalid(format!(
            "stride {stride} exceeds window {window}; windows would leave gaps"
        )));
    }
    if window > w || window > h {
        return Err(Error::Extent(format!(
            "window {window} exceeds image {w}×{h}; pad the image first"
        )));
    }
    let xs = axis_origins(w, window, stride);
    let ys = axis_origins(h, window, stride);
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
}

/// Averages overlapping square tiles into an `out_w × out_h` map. Tile pixels
/// beyond the output extent are dropped.
pub fn stitch_logits(
    tiles: &[((usize, usize), LogitMap)],
    tile: usize,
    out_w: usize,
    out_h: usize,
) -> Result<LogitMap> {
    let mut sum = vec![0f64; out_w * out_h];
    let mut count = vec![0u32; out_w * out_h];
    for ((x0, y0), t) in tiles {
        if t.dims() != (tile, tile) || t.channels() != 1 {
            return Err(Error::Extent(format!(
                "tile at ({x0},{y0}) is {:?}×{}, expected {tile}×{tile}×1",
                t.dims(),
                t.channels()
            )));
        }
        for ty in 0..tile {
            let y = y0 + ty;
            if y >= out_h {
                break;
            }
            for tx in 0..tile {
                let x = x0 + tx;
                if x >= out_w {
                    break;
                }
                sum[y * out_w + x] += t.data()[ty * tile + tx] as f64;
                count[y * out_w + x] += 1;
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::Extent(format!(
            "pixel ({}, {}) is not covered by any tile",
            i % out_w,
            i / out_w
        )));
    }
    let data = sum.iter().zip(&count).map(|(&s, &c)| (s / c as f64) as f32).collect();
    Raster::from_vec(out_w, out_h, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covered(w: usize, h: usize, origins: &[(usize, usize)], size: usize) -> bool {
        let mut hit = vec![false; w * h];
        for &(x0, y0) in origins {
            for y in y0..(y0 + size).min(h) {
                for x in x0..(x0 + size).min(w) {
                    hit[y * w + x] = true;
                }
            }
        }
        hit.into_iter().all(|b| b)
    }

    #[test]
    fn levir_chipping_counts() {
        let g = chip_grid(1024, 1024, 256, 64).unwrap();
        assert_eq!((g.stride, g.padded_w, g.padded_h, g.len()), (192, 1216, 1216, 36));
        assert_eq!([445, 64, 128].map(|n| n * g.len()), [16020, 2304, 4608]);
    }

    #[test]
    fn single_patch_image() {
        let g = chip_grid(256, 256, 256, 64).unwrap();
        assert_eq!(g.origins, vec![(0, 0)]);
        assert_eq!((g.padded_w, g.padded_h), (256, 256));
    }

    #[test]
    fn wide_image_coverage() {
        let g = chip_grid(300, 256, 256, 64).unwrap();
        assert_eq!(g.origins, vec![(0, 0), (192, 0)]);
        assert_eq!((g.padded_w, g.padded_h), (448, 256));
        assert!(covered(300, 256, &g.origins, 256));
    }

    #[test]
    fn overlap_must_be_below_patch() {
        assert!(chip_grid(100, 100, 64, 64).is_err());
    }

    #[test]
    fn clamped_windows() {
        let o = sliding_windows(512, 512, 256, 170).unwrap();
        assert_eq!(o.len(), 9);
        assert_eq!(o[..3], [(0, 0), (170, 0), (256, 0)]);
        assert!(covered(512, 512, &o, 256));
        assert_eq!(axis_origins(300, 256, 100), vec![0, 44]);
        assert_eq!(axis_origins(256, 256, 7), vec![0]);
        assert!(sliding_windows(200, 300, 256, 10).is_err());
    }

    #[test]
    fn stitch_constant_and_uncovered() {
        let t = Raster::filled(4, 4, 1, 2.5f32);
        let tiles: Vec<_> = [(0, 0), (2, 0), (0, 2), (2, 2)].map(|o| (o, t.clone())).into();
        let s = stitch_logits(&tiles, 4, 5, 5).unwrap();
        assert!(s.data().iter().all(|&v| v == 2.5));
        assert!(stitch_logits(&tiles[..1], 4, 5, 5).is_err());
    }

    #[test]
    fn stitch_of_chips_is_identity() {
        let data: Vec<f32> = (0..70 * 45).map(|i| (i as f32 * 0.37).sin()).collect();
        let img = Raster::from_vec(70, 45, 1, data).unwrap();
        let g = chip_grid(70, 45, 32, 8).unwrap();
        let tiles: Vec<_> = g.origins.iter().copied().zip(g.chips(&img).unwrap()).collect();
        let s = stitch_logits(&tiles, 32, 70, 45).unwrap();
        assert_eq!(s, img);
    }
}
