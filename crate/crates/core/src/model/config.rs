use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolutional image encoder: `conv3x3 (pad 1) -> ReLU -> maxpool 2x2`
/// per entry of `conv_channels`, then fully-connected layers (`fc_hidden`
/// with ReLU) and a linear map to `latent_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv_channels: Vec<usize>,
    #[serde(default)]
    pub fc_hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl EncoderConfig {
    /// Square input of side `res` with enough pooling stages to bring the
    /// feature map down to at most 4x4 (at least two stages).
    pub fn for_resolution(res: usize, channels: usize, latent_dim: usize) -> Self {
        let widths = [16, 32, 64, 64, 64, 64];
        let mut stages = 0;
        let mut side = res;
        while side > 4 && stages < widths.len() {
            side /= 2;
            stages += 1;
        }
        EncoderConfig {
            height: res,
            width: res,
            channels,
            conv_channels: widths[..stages.max(2)].to_vec(),
            fc_hidden: Vec::new(),
            latent_dim,
        }
    }

    /// Spatial size after the conv stack.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let (mut h, mut w) = (self.height, self.width);
        for _ in &self.conv_channels {
            h /= 2;
            w /= 2;
        }
        (*self.conv_channels.last().unwrap_or(&self.channels), h, w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        if self.conv_channels.contains(&0) || self.fc_hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let (c, h, w) = self.feature_shape();
        if c * h * w == 0 {
            return Err(Error::invalid(format!(
                "{}x{} input is too small for {} pooling stages",
                self.height,
                self.width,
                self.conv_channels.len()
            )));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::for_resolution(32, 3, 512)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderVariant {
    /// `f([g, c])` on the concatenated grid point and code
    Original,
    /// `f(l(g) + c)` with a learned per-point bias
    Improved,
}

impl std::str::FromStr for DecoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(DecoderVariant::Original),
            "improved" => Ok(DecoderVariant::Improved),
            _ => Err(Error::invalid(format!("unknown decoder variant {s:?}"))),
        }
    }
}

/// Layer widths are output widths; `f_widths` must end in 3 and, for the
/// improved variant, `l_widths` must end in the latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub variant: DecoderVariant,
    pub grid_dim: usize,
    pub f_widths: Vec<usize>,
    #[serde(default)]
    pub l_widths: Vec<usize>,
}

impl DecoderConfig {
    pub fn improved(latent_dim: usize) -> Self {
        DecoderConfig {
            variant: DecoderVariant::Improved,
            grid_dim: 3,
            f_widths: vec![512, 512, 512, 3],
            l_widths: vec![256, latent_dim],
        }
    }

    /// Single folding stage, widened so that the improved default stays
    /// under 60% of its size.
    pub fn original() -> Self {
        DecoderConfig {
            variant: DecoderVariant::Original,
            grid_dim: 2,
            f_widths: vec![768, 768, 768, 3],
            l_widths: Vec::new(),
        }
    }

    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        if !(self.grid_dim == 2 || self.grid_dim == 3) {
            return Err(Error::invalid(format!("grid dimension must be 2 or 3, got {}", self.grid_dim)));
        }
        if self.f_widths.last() != Some(&3) || self.f_widths.contains(&0) {
            return Err(Error::invalid("f widths must be positive and end in 3"));
        }
        match self.variant {
            DecoderVariant::Improved => {
                if self.l_widths.last() != Some(&latent_dim) || self.l_widths.contains(&0) {
                    return Err(Error::invalid(format!(
                        "l widths must be positive and end in the latent dimension {latent_dim}"
                    )));
                }
            }
            DecoderVariant::Original => {
                if !self.l_widths.is_empty() {
                    return Err(Error::invalid("the original decoder has no bias network"));
                }
            }
        }
        Ok(())
    }

    /// Number of scalars in one decoder.
    pub fn param_count(&self, latent_dim: usize) -> usize {
        let mlp = |input: usize, widths: &[usize]| {
            let mut n = 0;
            let mut i = input;
            for &w in widths {
                n += i * w + w;
                i = w;
            }
            n
        };
        match self.variant {
            DecoderVariant::Improved => mlp(latent_dim, &self.f_widths) + mlp(self.grid_dim, &self.l_widths),
            DecoderVariant::Original => mlp(self.grid_dim + latent_dim, &self.f_widths),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// number of views, one decoder each
    pub views: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(Error::invalid("a model needs at least one view"));
        }
        self.encoder.validate()?;
        self.decoder.validate(self.latent_dim())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::improved(512),
            views: 1,
            init_seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_decoder_sizes() {
        let imp = DecoderConfig::improved(512).param_count(512);
        let orig = DecoderConfig::original().param_count(512);
        // f: 3 * (512*512 + 512) + 512*3 + 3, l: 3*256 + 256 + 256*512 + 512
        assert_eq!(imp, 789_507 + 132_608);
        // (514*768 + 768) + 2 * (768*768 + 768) + 768*3 + 3
        assert_eq!(orig, 1_579_011);
        assert!(imp as f64 <= 0.6 * orig as f64);
    }

    #[test]
    fn encoder_stages_follow_resolution() {
        assert_eq!(EncoderConfig::for_resolution(16, 3, 8).conv_channels.len(), 2);
        assert_eq!(EncoderConfig::for_resolution(32, 3, 8).conv_channels.len(), 3);
        assert_eq!(EncoderConfig::for_resolution(224, 3, 8).feature_shape(), (64, 3, 3));
    }

    #[test]
    fn bias_network_must_end_in_latent_dim() {
        let mut d = DecoderConfig::improved(64);
        assert!(d.validate(64).is_ok());
        d.l_widths = vec![32, 63];
        assert!(d.validate(64).is_err());
    }
}
