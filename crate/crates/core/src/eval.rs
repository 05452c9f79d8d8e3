//! Hausdorff evaluation in world units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{hausdorff_points, nearest_distances, Backend, PointCloud};
use crate::model::ProprioModel;
use crate::numcore::Real;
use crate::prototype::PrototypeGrid;
use crate::synthdata::Dataset;

/// World meters to report units.
pub const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: usize,
    pub view: usize,
    pub hausdorff: f64,
}

/// Per-sample Hausdorff distances and their aggregates, in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub unit: String,
    pub samples: Vec<SampleEval>,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleEval>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty evaluation"));
        }
        let mut v: Vec<f64> = samples.iter().map(|s| s.hausdorff).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Ok(EvalReport {
            unit: "mm".into(),
            samples,
            mean,
            median,
            max: v[n - 1],
        })
    }

    /// Per-sample rows as CSV (`id,view,hausdorff_mm`).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,view,hausdorff_mm\n");
        for e in &self.samples {
            s.push_str(&format!("{},{},{}\n", e.id, e.view, e.hausdorff));
        }
        s
    }
}

/// A prediction in world meters with its per-point distance (mm) to the
/// nearest ground-truth point attached as the scalar attribute.
pub fn error_colored(pred_world: &PointCloud, gt_world: &PointCloud, backend: Backend) -> Result<PointCloud> {
    let d = nearest_distances(pred_world.points(), gt_world.points(), backend);
    pred_world.clone().with_scalar(d.into_iter().map(|v| v * MM_PER_M).collect())
}

/// Runs `f` over `0..n` on up to `threads` scoped threads; results come
/// back in index order whatever the scheduling.
pub fn parallel_map<R: Send>(n: usize, threads: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Predicts every sample in `indices` with its own view's decoder and
/// returns the report and the world-frame predictions.
pub fn evaluate_model<T: Real>(
    model: &ProprioModel<T>,
    data: &Dataset,
    indices: &[usize],
    grid: &PrototypeGrid,
    backend: Backend,
    threads: usize,
) -> Result<(EvalReport, Vec<PointCloud>)> {
    if indices.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let results = parallel_map(indices.len(), threads, |k| -> Result<(SampleEval, PointCloud)> {
        let s = &data.samples[indices[k]];
        let pred = model.predict(&s.image, grid, &[s.view])?.remove(0);
        let world = data.transform.denormalize(&pred)?;
        let h = hausdorff_points(world.points(), s.cloud.points(), backend) * MM_PER_M;
        Ok((
            SampleEval {
                id: s.id,
                view: s.view,
                hausdorff: h,
            },
            world,
        ))
    });
    let (evals, clouds): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok((EvalReport::from_samples(evals)?, clouds))
}

/// Scores world-frame predictions (one per index) against ground truth.
pub fn evaluate_predictions(
    data: &Dataset,
    indices: &[usize],
    preds: &[PointCloud],
    backend: Backend,
    threads: usize,
) -> Result<EvalReport> {
    if indices.len() != preds.len() {
        return Err(Error::invalid("one prediction per evaluated sample is required"));
    }
    let evals = parallel_map(indices.len(), threads, |k| {
        let s = &data.samples[indices[k]];
        SampleEval {
            id: s.id,
            view: s.view,
            hausdorff: hausdorff_points(preds[k].points(), s.cloud.points(), backend) * MM_PER_M,
        }
    });
    EvalReport::from_samples(evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates() {
        let s = |h| SampleEval { id: 0, view: 0, hausdorff: h };
        let r = EvalReport::from_samples(vec![s(3.0), s(1.0), s(2.0), s(10.0)]).unwrap();
        assert_eq!((r.mean, r.median, r.max), (4.0, 2.5, 10.0));
        assert!(EvalReport::from_samples(vec![]).is_err());
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v = parallel_map(37, 4, |i| i * i);
        assert_eq!(v, (0..37).map(|i| i * i).collect::<Vec<_>>());
    }
}
