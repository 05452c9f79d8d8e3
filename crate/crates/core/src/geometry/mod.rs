//! Point clouds, normalization, nearest-neighbour search and the Chamfer /
//! Hausdorff distances.

mod cloud;
mod kdtree;
mod metrics;
mod normalize;
mod ply;

pub use cloud::{Frame, PointCloud};
pub use kdtree::{brute_nearest2, KdTree, Neighbor};
pub use metrics::{
    chamfer, chamfer_grad, chamfer_value_grad, hausdorff, hausdorff_points, nearest_distances, nearest_pairs, Backend,
    ChamferResult,
};
pub use normalize::NormalizationTransform;
pub use ply::{read_ply, write_ply};
