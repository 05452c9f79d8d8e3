//! Nearest-neighbour baseline: images are box-filtered to 14x14, flattened,
//! embedded with PCA, and a query returns the ground-truth cloud of its
//! nearest training embedding.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::image::Image;
use crate::synthdata::{Dataset, Split};

pub const BASELINE_SIDE: usize = 14;

/// Area-downsampled, flattened (channel-major) image.
pub fn image_features(image: &Image) -> Result<Vec<f64>> {
    Ok(image
        .resize_area(BASELINE_SIDE, BASELINE_SIDE)?
        .data()
        .iter()
        .map(|&v| v as f64)
        .collect())
}

/// Mean and top-K principal axes (rows, orthonormal, by decreasing
/// variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if n == 0 || dim == 0 {
            return Err(Error::invalid("PCA needs at least one non-empty sample"));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("PCA samples differ in length"));
        }
        if k == 0 || k > n.min(dim) {
            return Err(Error::invalid(format!(
                "PCA dimension {k} exceeds min(samples, features) = {}",
                n.min(dim)
            )));
        }
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let x = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
        let denom = n.saturating_sub(1).max(1) as f64;
        let (axes, variances) = if n >= dim {
            let cov = (x.transpose() * &x) / denom;
            top_k(SymmetricEigen::new(cov), k, |v| v.iter().copied().collect())
        } else {
            // Gram form: axes are X^T u / |X^T u|
            let gram = (&x * x.transpose()) / denom;
            top_k(SymmetricEigen::new(gram), k, |u| {
                let a = x.transpose() * u;
                let norm = a.norm();
                a.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect()
            })
        };
        let mut pca = PcaModel { mean, axes, variances };
        pca.complete_basis();
        Ok(pca)
    }

    /// Replaces degenerate (zero) axes from the Gram path by an orthonormal
    /// completion so that the axes stay orthonormal.
    fn complete_basis(&mut self) {
        let dim = self.mean.len();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.axes.len());
        let mut candidate = 0;
        for a in std::mem::take(&mut self.axes) {
            let mut v = a;
            loop {
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    v.iter_mut().for_each(|x| *x /= norm);
                    break;
                }
                v = (0..dim).map(|j| if j == candidate { 1.0 } else { 0.0 }).collect();
                candidate += 1;
            }
            basis.push(v);
        }
        self.axes = basis;
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Coordinates along the axes.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| a.iter().zip(x).zip(&self.mean).map(|((w, v), m)| w * (v - m)).sum())
            .collect()
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (a, &c) in self.axes.iter().zip(z) {
            out.iter_mut().zip(a).for_each(|(o, w)| *o += c * w);
        }
        out
    }

    /// Orthogonal projection onto the affine PCA subspace.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.decode(&self.encode(x))
    }
}

fn top_k(
    eig: SymmetricEigen<f64, nalgebra::Dyn>,
    k: usize,
    axis: impl Fn(&nalgebra::DVector<f64>) -> Vec<f64>,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .map(|i| (axis(&eig.eigenvectors.column(i).into_owned()), eig.eigenvalues[i].max(0.0)))
        .unzip()
}

/// Embeddings of every training sample with the dataset index and view of
/// the sample each came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnStore {
    pub latents: Vec<Vec<f64>>,
    pub sample_index: Vec<usize>,
    pub views: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub pca: PcaModel,
    pub store: KnnStore,
}

/// Fits PCA on the training split and stores every training embedding.
pub fn build_baseline(data: &Dataset, k: usize) -> Result<Baseline> {
    let train = data.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("baseline needs a non-empty training split"));
    }
    let feats: Vec<Vec<f64>> = train
        .iter()
        .map(|&i| image_features(&data.samples[i].image))
        .collect::<Result<_>>()?;
    let pca = PcaModel::fit(&feats, k)?;
    let latents = feats.iter().map(|f| pca.encode(f)).collect();
    Ok(Baseline {
        pca,
        store: KnnStore {
            latents,
            sample_index: train.clone(),
            views: train.iter().map(|&i| data.samples[i].view).collect(),
        },
    })
}

impl Baseline {
    /// Position in the store of the nearest training embedding (lowest
    /// position on ties), optionally among samples of one view only.
    pub fn nearest(&self, image: &Image, view: Option<usize>) -> Result<usize> {
        let f = image_features(image)?;
        if f.len() != self.pca.mean.len() {
            return Err(Error::invalid(format!(
                "query has {} features, baseline expects {}",
                f.len(),
                self.pca.mean.len()
            )));
        }
        let z = self.pca.encode(&f);
        let mut best: Option<(f64, usize)> = None;
        for (j, l) in self.store.latents.iter().enumerate() {
            if view.is_some_and(|v| self.store.views[j] != v) {
                continue;
            }
            let d: f64 = l.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        best.map(|(_, j)| j).ok_or_else(|| Error::invalid("no stored sample for the requested view"))
    }

    /// Ground-truth cloud (world frame) of the nearest training sample.
    pub fn knn_predict<'d>(&self, image: &Image, view: Option<usize>, data: &'d Dataset) -> Result<&'d PointCloud> {
        let j = self.nearest(image, view)?;
        Ok(&data.samples[self.store.sample_index[j]].cloud)
    }

    /// Stored scalars: PCA axes and mean plus training embeddings.
    pub fn stored_floats(&self) -> usize {
        self.pca.mean.len() * (1 + self.pca.dim()) + self.store.latents.iter().map(Vec::len).sum::<usize>()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Baseline> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e.to_string()))
    }
}
