use serde::{Deserialize, Serialize};

use super::{Frame, PointCloud};
use crate::error::{Error, Result};

/// Per-axis affine map `normalized = world * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl NormalizationTransform {
    pub fn new(scale: [f64; 3], offset: [f64; 3]) -> Result<Self> {
        if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid(format!("normalization scales must be positive, got {scale:?}")));
        }
        Ok(NormalizationTransform { scale, offset })
    }

    pub fn identity() -> Self {
        NormalizationTransform {
            scale: [1.0; 3],
            offset: [0.0; 3],
        }
    }

    /// Fits the transform mapping the axis-wise bounds of all clouds onto
    /// `[-1, 1]`. One transform is shared by the whole dataset.
    pub fn fit<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>) -> Result<Self> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for c in clouds {
            let (l, h) = c.bounds();
            for a in 0..3 {
                lo[a] = lo[a].min(l[a]);
                hi[a] = hi[a].max(h[a]);
            }
            any = true;
        }
        if !any {
            return Err(Error::EmptyCloud);
        }
        let mut scale = [0.0; 3];
        let mut offset = [0.0; 3];
        for a in 0..3 {
            if hi[a] <= lo[a] {
                return Err(Error::DegenerateAxis { axis: ['x', 'y', 'z'][a] });
            }
            scale[a] = 2.0 / (hi[a] - lo[a]);
            offset[a] = -1.0 - lo[a] * scale[a];
        }
        Self::new(scale, offset)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| snap_unit(p[a] * self.scale[a] + self.offset[a]))
    }

    pub fn invert(&self, q: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (q[a] - self.offset[a]) / self.scale[a])
    }

    pub fn normalize(&self, cloud: &PointCloud) -> Result<PointCloud> {
        if cloud.frame() != Frame::World {
            return Err(Error::FrameMismatch(cloud.frame(), Frame::World));
        }
        PointCloud::new(cloud.points().iter().map(|&p| self.apply(p)).collect(), Frame::Normalized)
    }

    pub fn denormalize(&self, cloud: &PointCloud) -> Result<PointCloud> {
        if cloud.frame() != Frame::Normalized {
            return Err(Error::FrameMismatch(cloud.frame(), Frame::Normalized));
        }
        PointCloud::new(cloud.points().iter().map(|&q| self.invert(q)).collect(), Frame::World)
    }

    /// Converts raw normalized-frame coordinates (e.g. network output) to a
    /// world-frame cloud.
    pub fn denormalize_points<T: Copy + Into<f64>>(&self, pts: &[[T; 3]]) -> Result<PointCloud> {
        PointCloud::new(
            pts.iter().map(|p| self.invert(p.map(Into::into))).collect(),
            Frame::World,
        )
    }
}

// Rounding can leave the fitted extremes a few ulps outside [-1, 1].
fn snap_unit(v: f64) -> f64 {
    let over = v.abs() - 1.0;
    if over > 0.0 && over < 1e-12 {
        v.signum()
    } else {
        v
    }
}
