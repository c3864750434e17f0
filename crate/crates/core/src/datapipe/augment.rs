use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::raster::RgbRaster;
use super::SamplePair;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotometricPolicy {
    pub p_brightness: f64,
    /// Additive delta bound in 8-bit units.
    pub brightness_delta: f64,
    pub p_contrast: f64,
    pub contrast_range: (f64, f64),
    pub p_saturation: f64,
    pub saturation_range: (f64, f64),
    pub p_hue: f64,
    /// Hue shift bound in degrees.
    pub hue_delta: f64,
}

impl Default for PhotometricPolicy {
    fn default() -> Self {
        Self {
            p_brightness: 0.5,
            brightness_delta: 32.0,
            p_contrast: 0.5,
            contrast_range: (0.5, 1.5),
            p_saturation: 0.5,
            saturation_range: (0.5, 1.5),
            p_hue: 0.5,
            hue_delta: 18.0,
        }
    }
}

impl PhotometricPolicy {
    pub fn disabled() -> Self {
        Self {
            p_brightness: 0.0,
            p_contrast: 0.0,
            p_saturation: 0.0,
            p_hue: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Probability of rotating by a uniformly chosen multiple of 90°.
    pub p_rotate: f64,
    pub p_hflip: f64,
    pub p_vflip: f64,
    /// Random square crop size; `None` keeps the full extent.
    pub crop: Option<usize>,
    pub photometric: PhotometricPolicy,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            p_rotate: 1.0,
            p_hflip: 0.5,
            p_vflip: 0.5,
            crop: None,
            photometric: PhotometricPolicy::default(),
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            p_rotate: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            crop: None,
            photometric: PhotometricPolicy::disabled(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ph = &self.photometric;
        let probs = [
            self.p_rotate,
            self.p_hflip,
            self.p_vflip,
            ph.p_brightness,
            ph.p_contrast,
            ph.p_saturation,
            ph.p_hue,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        for (lo, hi) in [ph.contrast_range, ph.saturation_range] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("bad factor range ({lo}, {hi})")));
            }
        }
        if self.crop == Some(0) {
            return Err(Error::Config("crop size must be positive".into()));
        }
        Ok(())
    }
}

/// Child seed for one sample, independent of iteration order.
pub fn sample_seed(seed: u64, epoch: u64, id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(epoch.to_le_bytes())
        .chain_update(id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Geometric parameters drawn once per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeometricDraw {
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
    pub crop: Option<(usize, usize, usize)>,
}

impl GeometricDraw {
    pub fn sample(policy: &AugmentPolicy, w: usize, h: usize, rng: &mut impl Rng) -> Self {
        let quarter_turns = if rng.random_bool(policy.p_rotate) {
            rng.random_range(0..4u8)
        } else {
            0
        };
        let hflip = rng.random_bool(policy.p_hflip);
        let vflip = rng.random_bool(policy.p_vflip);
        let (rw, rh) = if quarter_turns % 2 == 1 { (h, w) } else { (w, h) };
        let crop = policy
            .crop
            .filter(|&c| c <= rw && c <= rh && (c, c) != (rw, rh))
            .map(|c| (rng.random_range(0..=rw - c), rng.random_range(0..=rh - c), c));
        Self {
            quarter_turns,
            hflip,
            vflip,
            crop,
        }
    }

    pub fn apply<T: Copy>(&self, r: &super::Raster<T>) -> Result<super::Raster<T>> {
        let mut out = r.rot90(self.quarter_turns);
        if self.hflip {
            out = out.flip_horizontal();
        }
        if self.vflip {
            out = out.flip_vertical();
        }
        if let Some((x, y, c)) = self.crop {
            out = out.crop(x, y, c, c)?;
        }
        Ok(out)
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Brightness, contrast, saturation and hue jitter, each applied with its
/// own probability.
pub fn photometric_distort(img: &RgbRaster, policy: &PhotometricPolicy, rng: &mut impl Rng) -> RgbRaster {
    let brightness = rng
        .random_bool(policy.p_brightness)
        .then(|| rng.random_range(-policy.brightness_delta..=policy.brightness_delta));
    let contrast = rng
        .random_bool(policy.p_contrast)
        .then(|| rng.random_range(policy.contrast_range.0..=policy.contrast_range.1));
    let saturation = rng
        .random_bool(policy.p_saturation)
        .then(|| rng.random_range(policy.saturation_range.0..=policy.saturation_range.1));
    let hue = rng
        .random_bool(policy.p_hue)
        .then(|| rng.random_range(-policy.hue_delta..=policy.hue_delta));
    if brightness.is_none() && contrast.is_none() && saturation.is_none() && hue.is_none() {
        return img.clone();
    }

    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let mut rgb = [px[0] as f64, px[1] as f64, px[2] as f64];
        if let Some(d) = brightness {
            rgb = rgb.map(|v| (v + d).clamp(0.0, 255.0));
        }
        if let Some(a) = contrast {
            rgb = rgb.map(|v| (v * a).clamp(0.0, 255.0));
        }
        if saturation.is_some() || hue.is_some() {
            let (mut h, mut s, v) = rgb_to_hsv(rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0);
            if let Some(f) = saturation {
                s = (s * f).clamp(0.0, 1.0);
            }
            if let Some(dh) = hue {
                h += dh;
            }
            let (r, g, b) = hsv_to_rgb(h, s, v);
            rgb = [r * 255.0, g * 255.0, b * 255.0];
        }
        for (dst, v) in px.iter_mut().zip(rgb) {
            *dst = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Geometric transforms shared by both images and the label; photometric
/// jitter drawn independently per temporal image. Fully determined by `seed`.
pub fn augment(sample: &SamplePair, seed: u64, policy: &AugmentPolicy) -> Result<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = sample.label.dims();
    let geo = GeometricDraw::sample(policy, w, h, &mut rng);
    let mut rng_a = ChaCha8Rng::seed_from_u64(rng.random());
    let mut rng_b = ChaCha8Rng::seed_from_u64(rng.random());
    let image_a = geo.apply(&sample.image_a)?;
    let image_b = geo.apply(&sample.image_b)?;
    Ok(SamplePair {
        id: sample.id.clone(),
        image_a: photometric_distort(&image_a, &policy.photometric, &mut rng_a),
        image_b: photometric_distort(&image_b, &policy.photometric, &mut rng_b),
        label: sample.label.map_raster(|r| geo.apply(r))?,
    })
}
