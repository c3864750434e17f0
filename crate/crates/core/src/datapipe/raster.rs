use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved raster.
#[derive(Clone, PartialEq, Debug)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// 8-bit RGB raster.
pub type RgbRaster = Raster<u8>;
/// Single-channel real-valued map (logits, probabilities).
pub type LogitMap = Raster<f32>;

impl<T: Copy> Raster<T> {
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Extent(format!("empty raster {width}×{height}×{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Extent(format!(
                "{} values for a {width}×{height}×{channels} raster",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty raster");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(width, height)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    fn remap(&self, width: usize, height: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = src(x, y);
                data.extend_from_slice(self.pixel(sx, sy));
            }
        }
        Self {
            width,
            height,
            channels: c,
            data,
        }
    }

    /// Counter-clockwise rotation by `quarter_turns · 90°`.
    pub fn rot90(&self, quarter_turns: u8) -> Self {
        let (w, h) = (self.width, self.height);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => self.remap(h, w, |x, y| (w - 1 - y, x)),
            2 => self.remap(w, h, |x, y| (w - 1 - x, h - 1 - y)),
            _ => self.remap(h, w, |x, y| (y, h - 1 - x)),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        self.remap(w, self.height, |x, y| (w - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Self {
        let h = self.height;
        self.remap(self.width, h, |x, y| (x, h - 1 - y))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Extent(format!(
                "crop {width}×{height} at ({x0},{y0}) outside {}×{}",
                self.width, self.height
            )));
        }
        Ok(self.remap(width, height, |x, y| (x0 + x, y0 + y)))
    }

    /// Mirror-pads on the right and bottom to `width × height`, reflecting
    /// about the edge pixel without repeating it (`…, 2, 1, 0, 1, 2, …`).
    pub fn pad_reflect(&self, width: usize, height: usize) -> Result<Self> {
        if width < self.width || height < self.height {
            return Err(Error::Extent(format!(
                "cannot pad {}×{} down to {width}×{height}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width, self.height);
        Ok(self.remap(width, height, |x, y| (reflect101(x, w), reflect101(y, h))))
    }
}

/// Reflect-101 index into `0..n`, periodic for offsets beyond one mirror.
pub fn reflect101(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

impl<T: Eq> Eq for Raster<T> {}

/// Change label: 1 = changed, 0 = unchanged.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BinaryMask(Raster<u8>);

impl BinaryMask {
    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask value {v} is not binary")));
        }
        Ok(Self(Raster::from_vec(width, height, 1, data)?))
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self(Raster::filled(width, height, 1, value as u8))
    }

    /// Thresholds at 0.5 probability (logit 0).
    pub fn from_logits(logits: &LogitMap) -> Self {
        Self(Raster {
            width: logits.width,
            height: logits.height,
            channels: 1,
            data: logits.data.iter().map(|&z| (z > 0.0) as u8).collect(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn data(&self) -> &[u8] {
        self.0.data()
    }

    pub fn raster(&self) -> &Raster<u8> {
        &self.0
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.0.pixel(x, y)[0] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.0.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn map_raster(&self, f: impl FnOnce(&Raster<u8>) -> Result<Raster<u8>>) -> Result<Self> {
        Ok(Self(f(&self.0)?))
    }
}

fn read_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

pub fn load_rgb(path: &Path) -> Result<RgbRaster> {
    let img = read_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Raster::from_vec(w as usize, h as usize, 3, img.into_raw())
}

/// Loads a label raster, binarizing its luminance at 128.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = read_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| (v >= 128) as u8).collect();
    BinaryMask::from_vec(w as usize, h as usize, data)
}

fn write_png(path: &Path, w: usize, h: usize, color: image::ExtendedColorType, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    image::save_buffer_with_format(path, bytes, w as u32, h as u32, color, image::ImageFormat::Png).map_err(|e| {
        Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })
}

pub fn save_rgb(img: &RgbRaster, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::invalid(format!("expected 3 channels, got {}", img.channels)));
    }
    write_png(path, img.width, img.height, image::ExtendedColorType::Rgb8, &img.data)
}

/// Writes a mask as an 8-bit PNG with values {0, 255}.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    let (w, h) = mask.dims();
    write_png(path, w, h, image::ExtendedColorType::L8, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Raster<u8> {
        Raster::from_vec(w, h, 1, (0..w * h).map(|i| i as u8).collect()).unwrap()
    }

    #[test]
    fn reflect101_on_a_ramp() {
        let r = Raster::from_vec(4, 1, 1, vec![0u8, 1, 2, 3]).unwrap();
        let p = r.pad_reflect(11, 1).unwrap();
        assert_eq!(p.data(), &[0, 1, 2, 3, 2, 1, 0, 1, 2, 3, 2]);
        let one = Raster::from_vec(1, 1, 1, vec![7u8]).unwrap();
        assert_eq!(one.pad_reflect(3, 2).unwrap().data(), &[7; 6]);
    }

    #[test]
    fn rotations_compose() {
        let r = ramp(3, 2);
        assert_eq!(r.rot90(1).dims(), (2, 3));
        assert_eq!(r.rot90(1).rot90(3), r);
        assert_eq!(r.rot90(2), r.flip_horizontal().flip_vertical());
        assert_eq!(r.rot90(4), r);
        // counter-clockwise: the top-right corner moves to the top-left
        assert_eq!(r.rot90(1).pixel(0, 0), r.pixel(2, 0));
    }

    #[test]
    fn crop_bounds() {
        let r = ramp(4, 4);
        assert_eq!(r.crop(1, 2, 2, 2).unwrap().data(), &[9, 10, 13, 14]);
        assert!(r.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(BinaryMask::from_vec(2, 1, vec![0, 2]).is_err());
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Raster::from_vec(3, 2, 3, (0..18u8).map(|v| v * 13).collect()).unwrap();
        let p = dir.path().join("rgb.png");
        save_rgb(&rgb, &p).unwrap();
        assert_eq!(load_rgb(&p).unwrap(), rgb);

        let mask = BinaryMask::from_vec(4, 3, (0..12).map(|i| (i * 7 % 3 == 0) as u8).collect()).unwrap();
        let p = dir.path().join("mask.png");
        save_mask(&mask, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), mask);
    }

    #[test]
    fn label_values_binarize() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        image::save_buffer(&p, &[0, 255, 127, 128], 4, 1, image::ExtendedColorType::L8).unwrap();
        assert_eq!(load_mask(&p).unwrap().data(), &[0, 1, 0, 1]);
    }

    #[test]
    fn distinct_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.png");
        assert!(matches!(load_rgb(&missing), Err(Error::MissingFile(_))));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image").unwrap();
        assert!(matches!(load_rgb(&junk), Err(Error::Format { .. })));
    }
}
