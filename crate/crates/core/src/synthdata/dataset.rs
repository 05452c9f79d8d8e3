use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::render::{ground_truth, render_internal, DotPattern};
use super::scene::{DeformationParams, SceneConfig};
use crate::error::{Error, Result};
use crate::geometry::{read_ply, write_ply, Frame, NormalizationTransform, PointCloud};
use crate::image::Image;
use crate::numcore::mix_seed;

pub const MANIFEST: &str = "manifest.csv";
pub const DATASET_INFO: &str = "dataset.toml";
pub const PARAMS: &str = "params.json";

const SPLIT_TAG: u64 = 0x5B1E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    /// train : test
    pub split_ratio: [usize; 2],
    pub sessions: usize,
}

impl GenConfig {
    pub fn new(n: usize, scene: SceneConfig, seed: u64) -> Self {
        GenConfig {
            n,
            seed,
            scene,
            split_ratio: [5, 1],
            sessions: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.n < self.scene.views {
            return Err(Error::invalid(format!(
                "need at least one sample per view: n = {} < {} views",
                self.n, self.scene.views
            )));
        }
        if self.sessions == 0 || self.split_ratio[0] == 0 {
            return Err(Error::invalid("sessions and the train share of the split must be positive"));
        }
        Ok(())
    }

    /// Number of test samples.
    pub fn test_count(&self) -> usize {
        let [a, b] = self.split_ratio;
        ((self.n * b) as f64 / (a + b) as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub id: usize,
    pub view: usize,
    pub session: usize,
    pub split: Split,
    pub image: Image,
    /// ground truth in world meters
    pub cloud: PointCloud,
    /// generating parameters, when known
    pub params: Option<DeformationParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub samples: Vec<DatasetSample>,
    pub transform: NormalizationTransform,
}

/// Generates `n` samples. Sample `i` belongs to session `i % sessions`,
/// observes view `i % views`, and draws its deformation from its own
/// stream of the session seed, so samples are independent of each other.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let scene = &cfg.scene;
    let dots = DotPattern::new(scene);
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SPLIT_TAG)));
    let mut split = vec![Split::Train; cfg.n];
    for &i in &order[..cfg.test_count()] {
        split[i] = Split::Test;
    }
    let mut samples = Vec::with_capacity(cfg.n);
    for (i, &sp) in split.iter().enumerate() {
        let session = i % cfg.sessions;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, session as u64));
        rng.set_stream(i as u64);
        let params = DeformationParams::sample(scene.body, &mut rng);
        let view = i % scene.views;
        samples.push(DatasetSample {
            id: i,
            view,
            session,
            split: sp,
            image: render_internal(&params, scene, &dots),
            cloud: PointCloud::new(ground_truth(&params, scene, view), Frame::World)?,
            params: Some(params),
        });
    }
    let transform = NormalizationTransform::fit(samples.iter().map(|s| &s.cloud))?;
    Ok(Dataset {
        config: cfg.clone(),
        samples,
        transform,
    })
}

pub fn sample_dataset(n: usize, scene: &SceneConfig, seed: u64) -> Result<Dataset> {
    generate(&GenConfig::new(n, scene.clone(), seed))
}

#[derive(Serialize, Deserialize)]
struct DatasetInfo {
    generator: GenConfig,
    transform: NormalizationTransform,
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: usize,
    view: usize,
    session: usize,
    split: Split,
    /// `;`-separated, one PPM per camera
    images: String,
    cloud: String,
}

fn image_paths(id: usize, cameras: usize) -> Vec<String> {
    (0..cameras).map(|c| format!("images/{id:06}_cam{c}.ppm")).collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn views(&self) -> usize {
        self.config.scene.views
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    /// Samples per view among `indices`.
    pub fn view_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.views()];
        for &i in indices {
            c[self.samples[i].view] += 1;
        }
        c
    }

    pub fn normalized_cloud(&self, i: usize) -> Result<PointCloud> {
        self.transform.normalize(&self.samples[i].cloud)
    }

    /// Writes the manifest, generator record, per-camera PPM images and
    /// PLY clouds (world meters) under `dir`. Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["images", "clouds"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let info = toml::to_string(&DatasetInfo {
            generator: self.config.clone(),
            transform: self.transform,
        })
        .map_err(|e| Error::invalid(e.to_string()))?;
        let info_path = dir.join(DATASET_INFO);
        std::fs::write(&info_path, info).map_err(|e| Error::io(&info_path, e))?;

        let manifest = dir.join(MANIFEST);
        let mut w = csv::Writer::from_path(&manifest).map_err(|e| csv_err(&manifest, e))?;
        for s in &self.samples {
            let images = image_paths(s.id, s.image.channels() / 3);
            let cloud = format!("clouds/{:06}.ply", s.id);
            s.image.write_ppm_cameras(&images.iter().map(|p| dir.join(p)).collect::<Vec<_>>())?;
            write_ply(&dir.join(&cloud), &s.cloud)?;
            w.serialize(ManifestRow {
                id: s.id,
                view: s.view,
                session: s.session,
                split: s.split,
                images: images.join(";"),
                cloud,
            })
            .map_err(|e| csv_err(&manifest, e))?;
        }
        w.flush().map_err(|e| Error::io(&manifest, e))?;

        if self.samples.iter().all(|s| s.params.is_some()) {
            let params: Vec<_> = self.samples.iter().map(|s| s.params.clone()).collect();
            let p = dir.join(PARAMS);
            let json = serde_json::to_string(&params).map_err(|e| Error::invalid(e.to_string()))?;
            std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
        }
        Ok(manifest)
    }

    pub fn read(dir: &Path) -> Result<Dataset> {
        let info_path = dir.join(DATASET_INFO);
        let text = std::fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        let info: DatasetInfo = toml::from_str(&text).map_err(|e| Error::parse(&info_path, e.to_string()))?;
        info.generator.scene.validate()?;
        let params: Option<Vec<Option<DeformationParams>>> = match std::fs::read_to_string(dir.join(PARAMS)) {
            Ok(t) => Some(serde_json::from_str(&t).map_err(|e| Error::parse(&dir.join(PARAMS), e.to_string()))?),
            Err(_) => None,
        };
        let manifest = dir.join(MANIFEST);
        let mut r = csv::Reader::from_path(&manifest).map_err(|e| csv_err(&manifest, e))?;
        let mut samples = Vec::new();
        for row in r.deserialize::<ManifestRow>() {
            let row = row.map_err(|e| csv_err(&manifest, e))?;
            if row.view >= info.generator.scene.views {
                return Err(Error::UnknownView {
                    view: row.view,
                    views: info.generator.scene.views,
                });
            }
            let cams = row
                .images
                .split(';')
                .map(|p| Image::read_ppm(&dir.join(p)))
                .collect::<Result<Vec<_>>>()?;
            let idx = samples.len();
            samples.push(DatasetSample {
                id: row.id,
                view: row.view,
                session: row.session,
                split: row.split,
                image: Image::stack(&cams)?,
                cloud: read_ply(&dir.join(&row.cloud), Frame::World)?,
                params: params.as_ref().and_then(|p| p.get(idx).cloned().flatten()),
            });
        }
        if samples.is_empty() {
            return Err(Error::parse(&manifest, "manifest lists no samples"));
        }
        Ok(Dataset {
            config: info.generator,
            samples,
            transform: info.transform,
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

/// SHA-256 over every file below `dir` (relative path and contents, in
/// sorted path order), hex encoded.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = e.map_err(|e| Error::io(dir, e))?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                out.push(p.strip_prefix(root).expect("below root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        let full = dir.join(&f);
        h.update(std::fs::read(&full).map_err(|e| Error::io(&full, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
