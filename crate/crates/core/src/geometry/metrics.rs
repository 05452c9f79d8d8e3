use serde::{Deserialize, Serialize};

use super::kdtree::{brute_nearest2, dist2, KdTree, Neighbor};
use super::PointCloud;
use crate::error::{Error, Result};
use crate::numcore::Real;

/// Nearest-neighbour search strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Brute,
    #[default]
    Indexed,
}

/// For every point of `queries`, its nearest and second-nearest point in
/// `targets`.
pub fn nearest_pairs<T: Real>(queries: &[[T; 3]], targets: &[[T; 3]], backend: Backend) -> Vec<[Neighbor<T>; 2]> {
    match backend {
        Backend::Brute => queries.iter().map(|q| brute_nearest2(targets, q)).collect(),
        Backend::Indexed => {
            let tree = KdTree::build(targets);
            queries.iter().map(|q| tree.nearest2(q)).collect()
        }
    }
}

/// Chamfer value with its gradient w.r.t. the first cloud.
#[derive(Debug, Clone)]
pub struct ChamferResult<T> {
    pub value: T,
    /// d value / d pred, one 3-vector per predicted point
    pub grad: Vec<[T; 3]>,
    /// index of the nearest target point for each predicted point
    pub pred_to_gt: Vec<usize>,
    /// index of the nearest predicted point for each target point
    pub gt_to_pred: Vec<usize>,
    /// smallest gap between first and second neighbour distance, or the
    /// smallest matched distance, whichever is lower
    pub pairing_margin: f64,
}

/// Symmetric Chamfer distance with unsquared Euclidean norms,
/// `1/(2Na) sum_a min_b |a-b| + 1/(2Nb) sum_b min_a |b-a|`, and its
/// gradient w.r.t. `pred` with the nearest-neighbour pairing held fixed.
/// Points that coincide with their match contribute zero gradient.
pub fn chamfer_value_grad<T: Real>(pred: &[[T; 3]], gt: &[[T; 3]], backend: Backend) -> Result<ChamferResult<T>> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let fwd = nearest_pairs(pred, gt, backend);
    let bwd = nearest_pairs(gt, pred, backend);
    let wa = T::one() / T::of(2.0 * pred.len() as f64);
    let wb = T::one() / T::of(2.0 * gt.len() as f64);
    let mut grad = vec![[T::zero(); 3]; pred.len()];
    let mut margin = f64::INFINITY;
    let mut sum_a = T::zero();
    for (i, nn) in fwd.iter().enumerate() {
        let d = nn[0].dist2.sqrt();
        sum_a += d;
        margin = margin.min(pair_margin(nn));
        if d > T::zero() {
            let b = &gt[nn[0].index];
            for k in 0..3 {
                grad[i][k] += (pred[i][k] - b[k]) / d * wa;
            }
        }
    }
    let mut sum_b = T::zero();
    for (j, nn) in bwd.iter().enumerate() {
        let d = nn[0].dist2.sqrt();
        sum_b += d;
        margin = margin.min(pair_margin(nn));
        if d > T::zero() {
            let a = nn[0].index;
            for k in 0..3 {
                grad[a][k] += (pred[a][k] - gt[j][k]) / d * wb;
            }
        }
    }
    Ok(ChamferResult {
        value: sum_a * wa + sum_b * wb,
        grad,
        pred_to_gt: fwd.iter().map(|n| n[0].index).collect(),
        gt_to_pred: bwd.iter().map(|n| n[0].index).collect(),
        pairing_margin: margin,
    })
}

fn pair_margin<T: Real>(nn: &[Neighbor<T>; 2]) -> f64 {
    let d0 = nn[0].dist2.as_f64().sqrt();
    let gap = if nn[1].index == usize::MAX {
        f64::INFINITY
    } else {
        nn[1].dist2.as_f64().sqrt() - d0
    };
    gap.min(d0)
}

fn check_pair(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if a.frame() != b.frame() {
        return Err(Error::FrameMismatch(a.frame(), b.frame()));
    }
    Ok(())
}

/// Chamfer distance between two clouds of the same frame.
pub fn chamfer(a: &PointCloud, b: &PointCloud, backend: Backend) -> Result<f64> {
    check_pair(a, b)?;
    Ok(chamfer_value_grad(a.points(), b.points(), backend)?.value)
}

/// Per-point gradient of `chamfer(pred, gt)` w.r.t. `pred`.
pub fn chamfer_grad(pred: &PointCloud, gt: &PointCloud, backend: Backend) -> Result<Vec<[f64; 3]>> {
    check_pair(pred, gt)?;
    Ok(chamfer_value_grad(pred.points(), gt.points(), backend)?.grad)
}

/// Distance from each point of `from` to its nearest point in `to`.
pub fn nearest_distances<T: Real>(from: &[[T; 3]], to: &[[T; 3]], backend: Backend) -> Vec<T> {
    match backend {
        Backend::Brute => from
            .iter()
            .map(|q| to.iter().map(|p| dist2(q, p)).fold(T::infinity(), T::min).sqrt())
            .collect(),
        Backend::Indexed => {
            let tree = KdTree::build(to);
            from.iter().map(|q| tree.nearest(q).dist2.sqrt()).collect()
        }
    }
}

/// Symmetric Hausdorff distance: the larger of the two directed max-min
/// distances.
pub fn hausdorff(a: &PointCloud, b: &PointCloud, backend: Backend) -> Result<f64> {
    check_pair(a, b)?;
    Ok(hausdorff_points(a.points(), b.points(), backend))
}

pub fn hausdorff_points<T: Real>(a: &[[T; 3]], b: &[[T; 3]], backend: Backend) -> T {
    let ab = nearest_distances(a, b, backend).into_iter().fold(T::zero(), T::max);
    let ba = nearest_distances(b, a, backend).into_iter().fold(T::zero(), T::max);
    ab.max(ba)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;

    fn cloud(p: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(p.to_vec(), Frame::World).unwrap()
    }

    #[test]
    fn chamfer_closed_forms() {
        for be in [Backend::Brute, Backend::Indexed] {
            let a = cloud(&[[0.0, 0.0, 0.0]]);
            let b = cloud(&[[3.0, 4.0, 0.0]]);
            assert_eq!(chamfer(&a, &b, be).unwrap(), 5.0);
            let a2 = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
            // (1/4)(0 + 1) + (1/2)0
            assert_eq!(chamfer(&a2, &a, be).unwrap(), 0.25);
            assert_eq!(chamfer(&a2, &a2, be).unwrap(), 0.0);
        }
    }

    #[test]
    fn chamfer_grad_closed_forms() {
        let p = cloud(&[[1.0, 0.0, 0.0]]);
        let g = cloud(&[[0.0, 0.0, 0.0]]);
        assert_eq!(chamfer_grad(&p, &g, Backend::Brute).unwrap(), vec![[1.0, 0.0, 0.0]]);
        let same = cloud(&[[0.2, 0.1, 0.0], [1.0, 1.0, 1.0]]);
        for gr in chamfer_grad(&same, &same, Backend::Indexed).unwrap() {
            assert_eq!(gr, [0.0; 3]);
        }
    }

    #[test]
    fn hausdorff_closed_forms() {
        let a = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0]]);
        assert_eq!(hausdorff(&a, &b, Backend::Brute).unwrap(), 2.0);
        assert_eq!(hausdorff(&a, &b, Backend::Indexed).unwrap(), 2.0);
        assert_eq!(hausdorff(&a, &a, Backend::Indexed).unwrap(), 0.0);
    }

    #[test]
    fn frame_mismatch_is_an_error() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = PointCloud::new(vec![[0.0, 0.0, 0.0]], Frame::Normalized).unwrap();
        assert!(matches!(chamfer(&a, &b, Backend::Brute), Err(Error::FrameMismatch(..))));
        assert!(matches!(hausdorff(&a, &b, Backend::Brute), Err(Error::FrameMismatch(..))));
    }

    #[test]
    fn empty_slices_are_rejected() {
        let e: Vec<[f64; 3]> = Vec::new();
        assert!(matches!(
            chamfer_value_grad(&e, &[[0.0; 3]], Backend::Brute),
            Err(Error::EmptyCloud)
        ));
    }
}
