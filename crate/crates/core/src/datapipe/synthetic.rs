//! Procedural change pairs: a shared textured background with a few solid
//! squares that appear only in the second image.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::sample_seed;
use super::raster::{save_mask, save_rgb, BinaryMask, Raster};
use super::SamplePair;
use crate::error::Result;

/// Square sides and offsets are multiples of this.
const GRID: usize = 4;

const PALETTE: [[u8; 3]; 4] = [[235, 70, 60], [240, 240, 235], [60, 110, 230], [245, 200, 40]];

pub fn synthetic_pair(id: &str, size: usize, seed: u64) -> SamplePair {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, 0, id));
    let base: [f64; 3] = [
        rng.random_range(60.0..110.0),
        rng.random_range(80.0..130.0),
        rng.random_range(50.0..90.0),
    ];
    let mut background = Vec::with_capacity(size * size * 3);
    for _ in 0..size * size {
        let t: f64 = rng.random_range(-18.0..18.0);
        background.extend(base.iter().map(|&c| (c + t).round() as u8));
    }
    let noisy = |rng: &mut ChaCha8Rng| -> Vec<u8> {
        background
            .iter()
            .map(|&v| (v as f64 + rng.random_range(-4.0..4.0)).round().clamp(0.0, 255.0) as u8)
            .collect()
    };
    let a = noisy(&mut rng);
    let mut b = noisy(&mut rng);
    let mut label = vec![0u8; size * size];

    let squares = rng.random_range(1..=3);
    for _ in 0..squares {
        let cells = size / GRID;
        let side = GRID * rng.random_range((cells / 5).max(1)..=(2 * cells / 5).max(1));
        let x0 = GRID * rng.random_range(0..=(size - side) / GRID);
        let y0 = GRID * rng.random_range(0..=(size - side) / GRID);
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                let i = y * size + x;
                b[3 * i..3 * i + 3].copy_from_slice(&color);
                label[i] = 1;
            }
        }
    }
    SamplePair {
        id: id.to_string(),
        image_a: Raster::from_vec(size, size, 3, a).expect("consistent extents"),
        image_b: Raster::from_vec(size, size, 3, b).expect("consistent extents"),
        label: BinaryMask::from_vec(size, size, label).expect("binary by construction"),
    }
}

/// `count` pairs with ids `syn0000`, `syn0001`, ….
pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Vec<SamplePair> {
    (0..count)
        .map(|i| synthetic_pair(&format!("syn{i:04}"), size, seed))
        .collect()
}

/// Writes pairs as `{root}/{split}/{A,B,label}/{id}.png`.
pub fn write_split(root: &Path, split: &str, pairs: &[SamplePair]) -> Result<()> {
    let dir = root.join(split);
    for p in pairs {
        let file = format!("{}.png", p.id);
        save_rgb(&p.image_a, &dir.join("A").join(&file))?;
        save_rgb(&p.image_b, &dir.join("B").join(&file))?;
        save_mask(&p.label, &dir.join("label").join(&file))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_with_changes_only_in_b() {
        let p = synthetic_pair("s", 64, 1);
        assert_eq!(p, synthetic_pair("s", 64, 1));
        assert_ne!(p, synthetic_pair("t", 64, 1));
        assert!(p.label.count_ones() > 0);
        for y in 0..64 {
            for x in 0..64 {
                let diff = p
                    .image_a
                    .pixel(x, y)
                    .iter()
                    .zip(p.image_b.pixel(x, y))
                    .map(|(&u, &v)| (u as i32 - v as i32).abs())
                    .max()
                    .unwrap();
                if !p.label.get(x, y) {
                    assert!(diff <= 8);
                }
            }
        }
    }
}
