//! Declarative model configuration and the named presets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    StemConv,
    Mbconv,
}

/// One backbone stage: `layers` repeated blocks, the first of which applies
/// `stride` and the channel change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub operator: Operator,
    pub expansion: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub layers: usize,
}

impl StageSpec {
    pub const fn mbconv(expansion: usize, kernel: usize, stride: usize, out_channels: usize, layers: usize) -> Self {
        Self {
            operator: Operator::Mbconv,
            expansion,
            kernel,
            stride,
            out_channels,
            layers,
        }
    }
}

/// Stage indices (1-based, stem = 1) whose outputs form the feature pyramid.
pub const PYRAMID_STAGES: [usize; 6] = [3, 4, 5, 6, 7, 8];
/// Strides of the pyramid levels relative to the input.
pub const PYRAMID_STRIDES: [usize; 6] = [4, 8, 16, 16, 32, 32];
/// Per-stage strides, stem first.
pub const STAGE_STRIDES: [usize; 8] = [2, 1, 2, 2, 2, 1, 2, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stem_channels: usize,
    /// Stages 2–8 (seven entries).
    pub stages: Vec<StageSpec>,
    pub neck_channels: usize,
    pub decoder_channels: usize,
    pub se_ratio: f64,
    pub use_changefpn: bool,
    pub use_distance_decoder: bool,
    pub input_size: usize,
}

/// EfficientNet-B0 stage table (stages 2–8) that the compound scaling starts from.
const B0_STAGES: [StageSpec; 7] = [
    StageSpec::mbconv(1, 3, 1, 16, 1),
    StageSpec::mbconv(6, 3, 2, 24, 2),
    StageSpec::mbconv(6, 5, 2, 40, 2),
    StageSpec::mbconv(6, 3, 2, 80, 3),
    StageSpec::mbconv(6, 5, 1, 112, 3),
    StageSpec::mbconv(6, 5, 2, 192, 4),
    StageSpec::mbconv(6, 3, 1, 320, 1),
];

/// Width/depth multipliers for B0..B5.
const COMPOUND: [(f64, f64); 6] = [(1.0, 1.0), (1.0, 1.1), (1.1, 1.2), (1.2, 1.4), (1.4, 1.8), (1.6, 2.2)];

/// Channel rounding used by EfficientNet: nearest multiple of 8, never
/// dropping more than 10%.
pub fn round_filters(channels: usize, width: f64) -> usize {
    let scaled = channels as f64 * width;
    let divisor = 8.0;
    let mut rounded = ((scaled + divisor / 2.0) / divisor).floor() * divisor;
    rounded = rounded.max(divisor);
    if rounded < 0.9 * scaled {
        rounded += divisor;
    }
    rounded as usize
}

pub fn round_repeats(layers: usize, depth: f64) -> usize {
    (layers as f64 * depth).ceil() as usize
}

impl ModelConfig {
    /// Table-exact EfficientNet-B5 geometry, neck/decoder width 128.
    pub fn b5() -> Self {
        Self {
            stem_channels: 48,
            stages: vec![
                StageSpec::mbconv(1, 3, 1, 24, 3),
                StageSpec::mbconv(6, 3, 2, 40, 5),
                StageSpec::mbconv(6, 5, 2, 64, 5),
                StageSpec::mbconv(6, 3, 2, 128, 7),
                StageSpec::mbconv(6, 5, 1, 176, 7),
                StageSpec::mbconv(6, 5, 2, 304, 9),
                StageSpec::mbconv(6, 3, 1, 512, 3),
            ],
            neck_channels: 128,
            decoder_channels: 128,
            se_ratio: 0.25,
            use_changefpn: true,
            use_distance_decoder: true,
            input_size: 256,
        }
    }

    /// Tiny configuration used by tests and desk-scale experiments.
    pub fn nano() -> Self {
        let widths = [4, 8, 8, 16, 16, 24, 32];
        let stages = B0_STAGES
            .iter()
            .zip(widths)
            .map(|(s, w)| StageSpec {
                out_channels: w,
                layers: 1,
                ..*s
            })
            .collect();
        Self {
            stem_channels: 8,
            stages,
            neck_channels: 16,
            decoder_channels: 16,
            se_ratio: 0.25,
            use_changefpn: true,
            use_distance_decoder: true,
            input_size: 64,
        }
    }

    /// EfficientNet-Bn by compound scaling of the B0 table. The neck width
    /// stays at 128 for every variant.
    pub fn scaled(variant: usize) -> Result<Self> {
        let &(width, depth) = COMPOUND
            .get(variant)
            .ok_or_else(|| Error::Config(format!("no EfficientNet-B{variant} preset")))?;
        let stages = B0_STAGES
            .iter()
            .map(|s| StageSpec {
                out_channels: round_filters(s.out_channels, width),
                layers: round_repeats(s.layers, depth),
                ..*s
            })
            .collect();
        Ok(Self {
            stem_channels: round_filters(32, width),
            stages,
            ..Self::b5()
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "b5" => Ok(Self::b5()),
            "nano" => Ok(Self::nano()),
            other => match other.strip_prefix('b').and_then(|d| d.parse::<usize>().ok()) {
                Some(v) if v < 5 => Self::scaled(v),
                _ => Err(Error::Config(format!(
                    "unknown preset `{other}` (expected b0..b5 or nano)"
                ))),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 7 {
            return Err(Error::Config(format!(
                "expected 7 MBConv stages after the stem, got {}",
                self.stages.len()
            )));
        }
        if self.stem_channels == 0 {
            return Err(Error::Config("stem_channels must be positive".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let stage = i + 2;
            if s.operator != Operator::Mbconv {
                return Err(Error::Config(format!("stage {stage} must be an MBConv stage")));
            }
            if ![1, 6].contains(&s.expansion) {
                return Err(Error::Config(format!("stage {stage}: expansion must be 1 or 6")));
            }
            if ![3, 5].contains(&s.kernel) {
                return Err(Error::Config(format!("stage {stage}: kernel must be 3 or 5")));
            }
            if s.stride != STAGE_STRIDES[i + 1] {
                return Err(Error::Config(format!(
                    "stage {stage}: stride {} breaks the {:?} stride schedule",
                    s.stride, STAGE_STRIDES
                )));
            }
            if s.out_channels == 0 || s.layers == 0 {
                return Err(Error::Config(format!(
                    "stage {stage}: channels and layers must be positive"
                )));
            }
        }
        if self.neck_channels == 0 || self.decoder_channels != self.neck_channels {
            return Err(Error::Config(format!(
                "decoder_channels ({}) must equal a positive neck_channels ({})",
                self.decoder_channels, self.neck_channels
            )));
        }
        if !(self.se_ratio > 0.0 && self.se_ratio <= 1.0) {
            return Err(Error::Config("se_ratio must lie in (0, 1]".into()));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Channel counts of the six pyramid levels.
    pub fn pyramid_channels(&self) -> [usize; 6] {
        let mut out = [0; 6];
        for (o, &stage) in out.iter_mut().zip(&PYRAMID_STAGES) {
            *o = self.stages[stage - 2].out_channels;
        }
        out
    }

    /// Hex SHA-256 of the canonical JSON of everything that determines
    /// parameter shapes and wiring (`input_size` excluded).
    pub fn architecture_hash(&self) -> String {
        let canonical = serde_json::json!({
            "stem_channels": self.stem_channels,
            "stages": self.stages,
            "neck_channels": self.neck_channels,
            "decoder_channels": self.decoder_channels,
            "se_ratio": self.se_ratio,
            "use_changefpn": self.use_changefpn,
            "use_distance_decoder": self.use_distance_decoder,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b5_preset_is_table_exact() {
        let c = ModelConfig::b5();
        c.validate().unwrap();
        assert_eq!(c.stages[6].out_channels, 512);
        assert_eq!(c.stages[5].layers, 9);
        assert_eq!(c.pyramid_channels(), [40, 64, 128, 176, 304, 512]);
    }

    #[test]
    fn compound_scaling_reproduces_b5() {
        let scaled = ModelConfig::scaled(5).unwrap();
        assert_eq!(scaled, ModelConfig::b5());
    }

    #[test]
    fn presets_validate() {
        for name in ["nano", "b0", "b1", "b2", "b3", "b4", "b5"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("b9").is_err());
        assert_eq!(ModelConfig::nano().pyramid_channels(), [8, 8, 16, 16, 24, 32]);
    }

    #[test]
    fn inconsistent_stage_lists_rejected() {
        let mut c = ModelConfig::nano();
        c.stages.pop();
        assert!(c.validate().is_err());
        let mut c = ModelConfig::nano();
        c.stages[2].stride = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::nano();
        c.stages[0].expansion = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::nano();
        c.decoder_channels = 8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_architecture_only() {
        let a = ModelConfig::nano();
        let mut b = a.clone();
        b.input_size = 128;
        assert_eq!(a.architecture_hash(), b.architecture_hash());
        b.use_changefpn = false;
        assert_ne!(a.architecture_hash(), b.architecture_hash());
    }
}
