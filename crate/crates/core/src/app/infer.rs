use crate::datapipe::{image_tensor, logit_map, sliding_windows, stitch_logits, LogitMap, Raster, RgbRaster};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

/// Stitched main-head logits for a pair of any extent.
pub struct Inference {
    pub logits: LogitMap,
    pub windows: usize,
}

/// Sliding-window prediction: images smaller than `window` are mirror-padded
/// up to it, overlaps are averaged, and the result is cropped back.
pub fn sliding_window_logits(
    net: &mut Network<f32>,
    img_a: &RgbRaster,
    img_b: &RgbRaster,
    window: usize,
    stride: usize,
) -> Result<Inference> {
    if img_a.dims() != img_b.dims() {
        return Err(Error::Extent(format!(
            "temporal images differ: {:?} vs {:?}",
            img_a.dims(),
            img_b.dims()
        )));
    }
    let (w, h) = img_a.dims();
    let (pw, ph) = (w.max(window), h.max(window));
    let a = img_a.pad_reflect(pw, ph)?;
    let b = img_b.pad_reflect(pw, ph)?;
    let origins = sliding_windows(pw, ph, window, stride)?;
    let mut tiles = Vec::with_capacity(origins.len());
    for &(x, y) in &origins {
        let ta: Tensor<f32> = image_tensor(&a.crop(x, y, window, window)?)?;
        let tb: Tensor<f32> = image_tensor(&b.crop(x, y, window, window)?)?;
        let z = net.predict(&ta, &tb)?;
        tiles.push(((x, y), logit_map(&z, 0)?));
    }
    let stitched = stitch_logits(&tiles, window, pw, ph)?;
    let logits = if (pw, ph) == (w, h) {
        stitched
    } else {
        stitched.crop(0, 0, w, h)?
    };
    Ok(Inference {
        logits,
        windows: origins.len(),
    })
}

/// Per-pixel probability map.
pub fn probabilities(logits: &LogitMap) -> LogitMap {
    let data = logits.data().iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect();
    Raster::from_vec(logits.width(), logits.height(), 1, data).expect("same extent")
}
