use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Meters in the body frame.
    World,
    /// Unitless, after the dataset-wide normalization transform.
    Normalized,
}

/// Ordered list of 3D points with an optional per-point scalar attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    frame: Frame,
    scalar: Option<Vec<f64>>,
}

impl PointCloud {
    /// Non-empty, finite points.
    pub fn new(points: Vec<[f64; 3]>, frame: Frame) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud coordinates".into()));
        }
        Ok(PointCloud {
            points,
            frame,
            scalar: None,
        })
    }

    pub fn from_f32(points: &[[f32; 3]], frame: Frame) -> Result<Self> {
        Self::new(points.iter().map(|p| p.map(f64::from)).collect(), frame)
    }

    /// Attach a per-point scalar (exported as the PLY `error` property).
    pub fn with_scalar(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.points.len() {
            return Err(Error::shape("with_scalar", &[self.points.len()], &[values.len()]));
        }
        self.scalar = Some(values);
        Ok(self)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn scalar(&self) -> Option<&[f64]> {
        self.scalar.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_f32(&self) -> Vec<[f32; 3]> {
        self.points.iter().map(|p| p.map(|v| v as f32)).collect()
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        bounds(&self.points)
    }

    /// True when every coordinate lies in `[-1-eps, 1+eps]`.
    pub fn within_unit_cube(&self, eps: f64) -> bool {
        self.points.iter().flatten().all(|v| v.abs() <= 1.0 + eps)
    }

    /// Applies `p -> R p + t` to every point.
    pub fn transformed(&self, rot: &[[f64; 3]; 3], t: [f64; 3]) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = t;
                for (r, qi) in q.iter_mut().enumerate() {
                    *qi += rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2];
                }
                q
            })
            .collect();
        PointCloud {
            points,
            frame: self.frame,
            scalar: self.scalar.clone(),
        }
    }
}

pub(crate) fn bounds(points: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}
