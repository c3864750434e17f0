use super::raster::{BinaryMask, Raster, RgbRaster};
use crate::error::{Error, Result};

pub const TP_COLOR: [u8; 3] = [255, 255, 255];
pub const TN_COLOR: [u8; 3] = [0, 0, 0];
pub const FP_COLOR: [u8; 3] = [0, 255, 0];
pub const FN_COLOR: [u8; 3] = [255, 0, 0];

/// TP white, TN black, FP green, FN red.
pub fn render_error_map(pred: &BinaryMask, label: &BinaryMask) -> Result<RgbRaster> {
    if pred.dims() != label.dims() {
        return Err(Error::Extent(format!(
            "prediction {:?} vs label {:?}",
            pred.dims(),
            label.dims()
        )));
    }
    let data = pred
        .data()
        .iter()
        .zip(label.data())
        .flat_map(|(&p, &l)| match (p, l) {
            (1, 1) => TP_COLOR,
            (1, 0) => FP_COLOR,
            (0, 1) => FN_COLOR,
            _ => TN_COLOR,
        })
        .collect();
    let (w, h) = pred.dims();
    Raster::from_vec(w, h, 3, data)
}
