//! Image encoder, folding decoders and the multi-view model.

mod config;
mod layers;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{DecoderConfig, DecoderVariant, EncoderConfig, ModelConfig};
pub use layers::{ConvStage, Linear, Mlp};

use crate::error::{Error, Result};
use crate::geometry::{Frame, PointCloud};
use crate::image::Image;
use crate::numcore::{config_hash, load_checkpoint, save_checkpoint, Adam, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::prototype::PrototypeGrid;

/// Rows of `[B*M, K]` activations per inference chunk.
const DECODE_CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: Vec<ConvStage>,
    pub head: Mlp,
}

impl Encoder {
    fn new<T: Real>(store: &mut ParamStore<T>, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::new();
        let mut c = cfg.channels;
        for (i, &o) in cfg.conv_channels.iter().enumerate() {
            stages.push(ConvStage::new(store, &format!("encoder.conv{i}"), c, o, rng));
            c = o;
        }
        let (fc, fh, fw) = cfg.feature_shape();
        let mut widths = cfg.fc_hidden.clone();
        widths.push(cfg.latent_dim);
        let head = Mlp::new(store, "encoder.fc", fc * fh * fw, &widths, rng);
        Encoder { stages, head }
    }

    /// `[B, C, H, W] -> [B, K]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for s in &self.stages {
            x = s.forward(g, store, x)?;
        }
        let x = g.flatten(x)?;
        self.head.forward(g, store, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.stages.iter().flat_map(|s| [s.weight, s.bias]).collect();
        p.extend(self.head.params());
        p
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub variant: DecoderVariant,
    pub grid_dim: usize,
    pub f: Mlp,
    /// bias network, improved variant only
    pub l: Option<Mlp>,
}

impl Decoder {
    fn new<T: Real>(store: &mut ParamStore<T>, cfg: &DecoderConfig, k: usize, view: usize, rng: &mut ChaCha8Rng) -> Self {
        let name = format!("decoder{view}");
        match cfg.variant {
            DecoderVariant::Improved => {
                let f = Mlp::new(store, &format!("{name}.f"), k, &cfg.f_widths, rng);
                let l = Mlp::new(store, &format!("{name}.l"), cfg.grid_dim, &cfg.l_widths, rng);
                Decoder {
                    variant: cfg.variant,
                    grid_dim: cfg.grid_dim,
                    f,
                    l: Some(l),
                }
            }
            DecoderVariant::Original => Decoder {
                variant: cfg.variant,
                grid_dim: cfg.grid_dim,
                f: Mlp::new(store, &format!("{name}.f"), cfg.grid_dim + k, &cfg.f_widths, rng),
                l: None,
            },
        }
    }

    /// Grid `[M, D]` and codes `[B, K]` to points `[B*M, 3]`; row `b*M + j`
    /// decodes grid point `j` under code `b`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, grid: Var, codes: Var) -> Result<Var> {
        let gs = g.shape(grid);
        if gs.len() != 2 || gs[1] != self.grid_dim {
            return Err(Error::shape("decoder grid", gs, &[gs.first().copied().unwrap_or(0), self.grid_dim]));
        }
        let x = match &self.l {
            Some(l) => {
                let bias = l.forward(g, store, grid)?;
                g.tile_add(bias, codes)?
            }
            None => g.tile_concat(grid, codes)?,
        };
        self.f.forward(g, store, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.f.params();
        if let Some(l) = &self.l {
            p.extend(l.params());
        }
        p
    }
}

/// Encoder plus one decoder per view over a single parameter store.
#[derive(Debug, Clone)]
pub struct ProprioModel<T: Real> {
    config: ModelConfig,
    store: ParamStore<T>,
    encoder: Encoder,
    decoders: Vec<Decoder>,
}

#[derive(Serialize)]
struct Architecture<'a> {
    encoder: &'a EncoderConfig,
    decoder: &'a DecoderConfig,
    views: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A model restored from disk with the optimizer state and caller metadata
/// stored next to it.
pub struct LoadedModel<T: Real> {
    pub model: ProprioModel<T>,
    pub optimizer: Option<Adam<T>>,
    pub extra: serde_json::Value,
}

impl<T: Real> ProprioModel<T> {
    /// Fresh model. The encoder and each decoder draw their initial weights
    /// from separate streams of `init_seed`, so the encoder does not depend
    /// on the decoder configuration.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(config.init_seed);
            r.set_stream(s);
            r
        };
        let encoder = Encoder::new(&mut store, &config.encoder, &mut stream(0));
        let k = config.latent_dim();
        let decoders = (0..config.views)
            .map(|v| Decoder::new(&mut store, &config.decoder, k, v, &mut stream(1 + v as u64)))
            .collect();
        Ok(ProprioModel {
            config,
            store,
            encoder,
            decoders,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self, view: usize) -> Result<&Decoder> {
        self.decoders.get(view).ok_or(Error::UnknownView {
            view,
            views: self.decoders.len(),
        })
    }

    pub fn views(&self) -> usize {
        self.decoders.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    pub fn grid_dim(&self) -> usize {
        self.config.decoder.grid_dim
    }

    /// Hash of the architecture (not of the initial seed).
    pub fn architecture_hash(&self) -> String {
        config_hash(&Architecture {
            encoder: &self.config.encoder,
            decoder: &self.config.decoder,
            views: self.config.views,
        })
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.encoder.params()
    }

    pub fn decoder_params(&self, view: usize) -> Result<Vec<ParamId>> {
        Ok(self.decoder(view)?.params())
    }

    fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.store.value(id).len()).sum()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.count(&self.encoder_params())
    }

    pub fn decoder_param_count(&self, view: usize) -> Result<usize> {
        Ok(self.count(&self.decoder_params(view)?))
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    /// Stacks images into an `[B, C, H, W]` tensor, checking them against
    /// the encoder input size.
    pub fn image_batch(&self, images: &[&Image]) -> Result<Tensor<T>> {
        let e = &self.config.encoder;
        let mut data = Vec::with_capacity(images.len() * e.channels * e.height * e.width);
        for im in images {
            if (im.channels(), im.height(), im.width()) != (e.channels, e.height, e.width) {
                return Err(Error::shape(
                    "encoder input",
                    &[im.channels(), im.height(), im.width()],
                    &[e.channels, e.height, e.width],
                ));
            }
            data.extend(im.data().iter().map(|&v| T::of(v as f64)));
        }
        Tensor::new(vec![images.len(), e.channels, e.height, e.width], data)
    }

    pub fn encode_graph(&self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        self.encoder.forward(g, &self.store, images)
    }

    pub fn decode_graph(&self, g: &mut Graph<T>, view: usize, grid: Var, codes: Var) -> Result<Var> {
        self.decoder(view)?.forward(g, &self.store, grid, codes)
    }

    /// Latent codes `[B, K]`.
    pub fn encode(&self, images: &[&Image]) -> Result<Tensor<T>> {
        let mut g = Graph::inference().checked(true);
        let x = g.input(self.image_batch(images)?)?;
        let c = self.encode_graph(&mut g, x)?;
        Ok(g.value(c).clone())
    }

    /// Decodes every code in `codes` over `grid`, one point list per code.
    /// Work is split into grid-row chunks; since decoding is pointwise the
    /// result does not depend on the chunking.
    pub fn decode(&self, view: usize, grid: &PrototypeGrid, codes: &Tensor<T>) -> Result<Vec<Vec<[T; 3]>>> {
        let dec = self.decoder(view)?;
        if grid.dim() != dec.grid_dim {
            return Err(Error::shape("decoder grid", &[grid.len(), grid.dim()], &[grid.len(), dec.grid_dim]));
        }
        let cs = codes.shape();
        if cs.len() != 2 || cs[1] != self.latent_dim() {
            return Err(Error::shape("latent codes", cs, &[cs.first().copied().unwrap_or(0), self.latent_dim()]));
        }
        let (b, m) = (cs[0], grid.len());
        let mut out = vec![Vec::with_capacity(m); b];
        let chunk = (DECODE_CHUNK_ROWS / b.max(1)).max(1);
        let mut start = 0;
        while start < m {
            let end = (start + chunk).min(m);
            let mut g = Graph::inference().checked(true);
            let gv = g.input(grid.rows(start, end).to_tensor())?;
            let cv = g.input(codes.clone())?;
            let p = dec.forward(&mut g, &self.store, gv, cv)?;
            let pts = crate::numcore::as_points(g.value(p).data());
            for (bi, o) in out.iter_mut().enumerate() {
                o.extend_from_slice(&pts[bi * (end - start)..(bi + 1) * (end - start)]);
            }
            start = end;
        }
        Ok(out)
    }

    /// Encodes once and decodes the requested views from the shared code.
    /// Clouds are in the normalized frame.
    pub fn predict(&self, image: &Image, grid: &PrototypeGrid, views: &[usize]) -> Result<Vec<PointCloud>> {
        let code = self.encode(&[image])?;
        views
            .iter()
            .map(|&v| {
                let pts = self.decode(v, grid, &code)?.pop().expect("one code");
                let pts = pts.iter().map(|p| p.map(|c| c.as_f64())).collect();
                PointCloud::new(pts, Frame::Normalized)
            })
            .collect()
    }

    pub fn save(&self, path: &Path, optimizer: Option<&Adam<T>>, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::to_value(CheckpointMeta {
            model: self.config.clone(),
            extra,
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        save_checkpoint(path, &self.architecture_hash(), &meta, &self.store, optimizer)
    }

    pub fn load(path: &Path) -> Result<LoadedModel<T>> {
        let ck = load_checkpoint::<T>(path)?;
        let meta: CheckpointMeta =
            serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut model = ProprioModel::new(meta.model)?;
        ck.restore_into(&model.architecture_hash(), &mut model.store)?;
        Ok(LoadedModel {
            model,
            optimizer: ck.optimizer,
            extra: meta.extra,
        })
    }

    /// Loads weights from `path` into this model; the stored architecture
    /// must match.
    pub fn load_weights(&mut self, path: &Path) -> Result<Option<Adam<T>>> {
        let ck = load_checkpoint::<T>(path)?;
        ck.restore_into(&self.architecture_hash(), &mut self.store)?;
        Ok(ck.optimizer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototype::square_grid;

    fn tiny(variant: DecoderVariant, views: usize) -> ModelConfig {
        let k = 8;
        ModelConfig {
            encoder: EncoderConfig {
                height: 8,
                width: 8,
                channels: 3,
                conv_channels: vec![4, 4],
                fc_hidden: vec![],
                latent_dim: k,
            },
            decoder: DecoderConfig {
                variant,
                grid_dim: if variant == DecoderVariant::Improved { 3 } else { 2 },
                f_widths: vec![16, 16, 3],
                l_widths: if variant == DecoderVariant::Improved { vec![8, k] } else { vec![] },
            },
            views,
            init_seed: 1,
        }
    }

    fn img(seed: u32) -> Image {
        Image::new(8, 8, 3, (0..192).map(|i| ((i as u32 * 31 + seed * 17) % 97) as f32 / 97.0).collect()).unwrap()
    }

    #[test]
    fn encoder_output_has_latent_width() {
        let m = ProprioModel::<f32>::new(tiny(DecoderVariant::Improved, 1)).unwrap();
        let c = m.encode(&[&img(0), &img(1)]).unwrap();
        assert_eq!(c.shape(), &[2, 8]);
        assert_eq!(m.encode(&[&img(0)]).unwrap().data(), &c.data()[..8]);
        assert!(m.encode(&[&Image::zeros(9, 8, 3)]).is_err());
    }

    #[test]
    fn param_counts_match_config() {
        for v in [DecoderVariant::Improved, DecoderVariant::Original] {
            let cfg = tiny(v, 2);
            let m = ProprioModel::<f32>::new(cfg.clone()).unwrap();
            assert_eq!(m.decoder_param_count(1).unwrap(), cfg.decoder.param_count(8));
            assert_eq!(m.param_count(), m.encoder_param_count() + 2 * cfg.decoder.param_count(8));
        }
    }

    #[test]
    fn encoder_does_not_depend_on_decoder() {
        let a = ProprioModel::<f32>::new(tiny(DecoderVariant::Improved, 1)).unwrap();
        let b = ProprioModel::<f32>::new(tiny(DecoderVariant::Original, 2)).unwrap();
        for (x, y) in a.encoder_params().iter().zip(b.encoder_params()) {
            assert_eq!(a.store().value(*x), b.store().value(y));
        }
    }

    #[test]
    fn wrong_grid_dim_and_view_are_errors() {
        let m = ProprioModel::<f32>::new(tiny(DecoderVariant::Improved, 1)).unwrap();
        let c = m.encode(&[&img(0)]).unwrap();
        assert!(m.decode(0, &square_grid(3, 2).unwrap(), &c).is_err());
        assert!(matches!(
            m.decode(1, &square_grid(3, 3).unwrap(), &c),
            Err(Error::UnknownView { view: 1, views: 1 })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ProprioModel::<f32>::new(tiny(DecoderVariant::Improved, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path, None, serde_json::json!({"epoch": 3})).unwrap();
        let back = ProprioModel::<f32>::load(&path).unwrap();
        assert_eq!(back.extra["epoch"], 3);
        let grid = square_grid(4, 3).unwrap();
        let c = m.encode(&[&img(2)]).unwrap();
        assert_eq!(m.decode(1, &grid, &c).unwrap(), back.model.decode(1, &grid, &c).unwrap());
        let mut other = ProprioModel::<f32>::new(tiny(DecoderVariant::Original, 2)).unwrap();
        assert!(matches!(other.load_weights(&path), Err(Error::Checkpoint(_))));
    }
}
