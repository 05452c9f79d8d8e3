use std::path::Path;

use serde::{Deserialize, Serialize};
use softprop::model::{DecoderConfig, DecoderVariant, EncoderConfig, ModelConfig};
use softprop::prototype::GridConfig;
use softprop::synthdata::Dataset;
use softprop::training::TrainConfig;

use crate::error::{usage, CliError};

pub const RUN_CONFIG_VERSION: u32 = 1;

/// Versioned run configuration: model architecture plus training
/// hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Defaults sized to a dataset's images and views.
    pub fn for_dataset(data: &Dataset) -> Self {
        let s = &data.config.scene;
        let mut encoder = EncoderConfig::for_resolution(s.image_height, s.channels(), 512);
        encoder.width = s.image_width;
        RunConfig {
            version: RUN_CONFIG_VERSION,
            model: ModelConfig {
                encoder,
                decoder: DecoderConfig::improved(512),
                views: s.views,
                init_seed: 0,
            },
            train: TrainConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| softprop::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| softprop::Error::Parse {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })?;
        if cfg.version != RUN_CONFIG_VERSION {
            return Err(usage(format!(
                "{}: run config version {} is not supported (expected {RUN_CONFIG_VERSION})",
                origin.display(),
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Errors when the architecture cannot consume the dataset.
    pub fn check_against(&self, data: &Dataset) -> Result<(), CliError> {
        let s = &data.config.scene;
        let e = &self.model.encoder;
        let img = &data.samples[0].image;
        if e.channels != s.channels() || (e.height, e.width) != (img.height(), img.width()) {
            return Err(usage(format!(
                "config expects {}x{}x{} images, dataset has {}x{}x{}",
                e.channels,
                e.height,
                e.width,
                s.channels(),
                img.height(),
                img.width()
            )));
        }
        if self.model.views != s.views {
            return Err(usage(format!(
                "config has {} view(s), dataset has {}",
                self.model.views, s.views
            )));
        }
        if self.train.grid.dim != self.model.decoder.grid_dim {
            return Err(usage(format!(
                "training grid has dimension {}, decoder expects {}",
                self.train.grid.dim, self.model.decoder.grid_dim
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Command-line overrides applied on top of a run config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub decoder: Option<DecoderVariant>,
    pub grid_side: Option<usize>,
    pub image_res: Option<usize>,
    pub latent_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let m = &mut cfg.model;
        if let Some(res) = self.image_res {
            let (c, k) = (m.encoder.channels, m.encoder.latent_dim);
            let hidden = m.encoder.fc_hidden.clone();
            m.encoder = EncoderConfig::for_resolution(res, c, k);
            m.encoder.fc_hidden = hidden;
        }
        if let Some(k) = self.latent_dim {
            m.encoder.latent_dim = k;
            if m.decoder.variant == DecoderVariant::Improved {
                if let Some(last) = m.decoder.l_widths.last_mut() {
                    *last = k;
                }
            }
        }
        if let Some(v) = self.decoder {
            if v != m.decoder.variant {
                m.decoder = match v {
                    DecoderVariant::Improved => DecoderConfig::improved(m.encoder.latent_dim),
                    DecoderVariant::Original => DecoderConfig::original(),
                };
            }
        }
        let dim = m.decoder.grid_dim;
        if let Some(side) = self.grid_side {
            cfg.train.grid = GridConfig::square(side, dim);
        }
        cfg.train.grid.dim = dim;
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.model.init_seed = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use softprop::model::ModelConfig;

    fn base() -> RunConfig {
        RunConfig {
            version: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut c = base();
        c.train.patience = Some(3);
        let back = RunConfig::parse(&c.to_toml(), Path::new("run.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut c = base();
        c.version = 2;
        assert!(matches!(
            RunConfig::parse(&c.to_toml(), Path::new("run.toml")),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn overrides_keep_decoder_consistent() {
        let mut c = base();
        Overrides {
            latent_dim: Some(32),
            grid_side: Some(10),
            ..Default::default()
        }
        .apply(&mut c);
        assert_eq!(c.model.decoder.l_widths.last(), Some(&32));
        assert_eq!(c.train.grid.side, 10);
        Overrides {
            decoder: Some(DecoderVariant::Original),
            ..Default::default()
        }
        .apply(&mut c);
        assert_eq!((c.model.decoder.grid_dim, c.train.grid.dim), (2, 2));
        c.model.validate().unwrap();
    }
}
