//! Decoder parameter grids: the flat square grid, sphere and hemisphere
//! samples, and area-weighted samples of a triangle mesh.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{write_ply, Frame, PointCloud};
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Square,
    Sphere,
    /// Fibonacci samples on the `z >= 0` half of the unit sphere.
    Hemisphere,
    MeshSamples,
}

/// Recipe for a grid; `side` applies to square grids, `count`, `seed` and
/// `mesh` to the sampled kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub kind: GridKind,
    pub dim: usize,
    #[serde(default)]
    pub side: usize,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mesh: Option<std::path::PathBuf>,
}

impl GridConfig {
    pub fn square(side: usize, dim: usize) -> Self {
        GridConfig {
            kind: GridKind::Square,
            dim,
            side,
            count: 0,
            seed: 0,
            mesh: None,
        }
    }

    /// Seeded Fibonacci sphere of `count` points.
    pub fn sphere(count: usize, seed: u64) -> Self {
        GridConfig {
            kind: GridKind::Sphere,
            dim: 3,
            side: 0,
            count,
            seed,
            mesh: None,
        }
    }

    pub fn hemisphere(count: usize) -> Self {
        GridConfig {
            kind: GridKind::Hemisphere,
            ..Self::sphere(count, 0)
        }
    }

    pub fn build(&self) -> Result<PrototypeGrid> {
        match self.kind {
            GridKind::Square => square_grid(self.side, self.dim),
            _ if self.dim != 3 => Err(Error::invalid("sphere and mesh prototypes are three-dimensional")),
            GridKind::Sphere => sphere_samples(self.count, self.seed),
            GridKind::Hemisphere => hemisphere_samples(self.count),
            GridKind::MeshSamples => {
                let path = self.mesh.as_ref().ok_or_else(|| Error::invalid("mesh prototype needs a mesh path"))?;
                mesh_samples(path, self.count, self.seed)
            }
        }
    }

    /// Same recipe at a different resolution (side or count).
    pub fn with_resolution(&self, r: usize) -> Self {
        let mut c = self.clone();
        match c.kind {
            GridKind::Square => c.side = r,
            _ => c.count = r,
        }
        c
    }
}

/// `M x D` grid of parameter points, all within `[-1, 1]^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeGrid {
    points: Vec<f64>,
    dim: usize,
    kind: GridKind,
    /// side count for square grids, sample count otherwise
    resolution: usize,
}

impl PrototypeGrid {
    pub fn new(points: Vec<f64>, dim: usize, kind: GridKind, resolution: usize) -> Result<Self> {
        if !(dim == 2 || dim == 3) || points.len() % dim != 0 {
            return Err(Error::invalid(format!("grid dimension must be 2 or 3, got {dim}")));
        }
        if points.len() / dim < 4 {
            return Err(Error::invalid("a grid needs at least 4 points"));
        }
        if points.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
            return Err(Error::invalid("grid points must lie in [-1, 1]"));
        }
        Ok(PrototypeGrid {
            points,
            dim,
            kind,
            resolution,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    /// Grid as an `[M, D]` tensor.
    pub fn to_tensor<T: crate::numcore::Real>(&self) -> Tensor<T> {
        Tensor::new(vec![self.len(), self.dim], self.points.iter().map(|&v| T::of(v)).collect())
            .expect("grid shape")
    }

    /// Rows `[start, end)` as a sub-grid (used for chunked decoding).
    pub fn rows(&self, start: usize, end: usize) -> PrototypeGrid {
        PrototypeGrid {
            points: self.points[start * self.dim..end * self.dim].to_vec(),
            dim: self.dim,
            kind: self.kind,
            resolution: self.resolution,
        }
    }

    /// First `m` points.
    pub fn truncated(&self, m: usize) -> Result<PrototypeGrid> {
        if m < 4 || m > self.len() {
            return Err(Error::invalid(format!("cannot truncate a {}-point grid to {m}", self.len())));
        }
        Ok(self.rows(0, m))
    }

    /// Exports the grid as a PLY (z = 0 for 2D grids).
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let pts = (0..self.len())
            .map(|j| {
                let p = self.point(j);
                [p[0], p[1], if self.dim == 3 { p[2] } else { 0.0 }]
            })
            .collect();
        write_ply(path, &PointCloud::new(pts, Frame::Normalized)?)
    }
}

/// `side x side` points equally spaced on `[-1, 1]^2`, x fastest, emitted
/// with `dim` 2 or 3 (z = 0).
pub fn square_grid(side: usize, dim: usize) -> Result<PrototypeGrid> {
    if side < 2 {
        return Err(Error::invalid(format!("square grid side must be >= 2, got {side}")));
    }
    let step = 2.0 / (side - 1) as f64;
    let coord = |i: usize| if i == side - 1 { 1.0 } else { -1.0 + i as f64 * step };
    let mut pts = Vec::with_capacity(side * side * dim);
    for iy in 0..side {
        for ix in 0..side {
            pts.push(coord(ix));
            pts.push(coord(iy));
            if dim == 3 {
                pts.push(0.0);
            }
        }
    }
    PrototypeGrid::new(pts, dim, GridKind::Square, side)
}

/// Fibonacci-spiral samples on the unit sphere, rotated by a seeded random
/// rotation.
pub fn sphere_samples(count: usize, seed: u64) -> Result<PrototypeGrid> {
    if count < 4 {
        return Err(Error::invalid(format!("sphere prototype needs >= 4 samples, got {count}")));
    }
    let rot = random_rotation(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut pts = Vec::with_capacity(count * 3);
    for u in fibonacci_sphere(count) {
        let mut q = [0.0; 3];
        for (r, qr) in q.iter_mut().enumerate() {
            *qr = rot[r][0] * u[0] + rot[r][1] * u[1] + rot[r][2] * u[2];
        }
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        pts.extend(q.iter().map(|v| (v / n).clamp(-1.0, 1.0)));
    }
    PrototypeGrid::new(pts, 3, GridKind::Sphere, count)
}

/// Fibonacci-spiral samples on the upper unit hemisphere, pole first.
pub fn hemisphere_samples(count: usize) -> Result<PrototypeGrid> {
    if count < 4 {
        return Err(Error::invalid(format!("hemisphere prototype needs >= 4 samples, got {count}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut pts = Vec::with_capacity(count * 3);
    for i in 0..count {
        let z = 1.0 - (i as f64 + 0.5) / count as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden * i as f64;
        pts.extend([r * phi.cos(), r * phi.sin(), z]);
    }
    PrototypeGrid::new(pts, 3, GridKind::Hemisphere, count)
}

/// Unit vectors on a Fibonacci spiral; `z` runs from near +1 to near -1.
pub fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Uniformly random rotation matrix (from a random unit quaternion).
pub fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }
}

/// Parses an OFF mesh. Polygons with more than three vertices are
/// fan-triangulated.
pub fn parse_off(text: &str, origin: &Path) -> Result<TriMesh> {
    let perr = |m: String| Error::parse(origin, m);
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    match tokens.next() {
        Some("OFF") => {}
        other => return Err(perr(format!("expected OFF header, got {other:?}"))),
    }
    let mut next_num = |what: &str| -> Result<f64> {
        let t = tokens.next().ok_or_else(|| perr(format!("unexpected end of file reading {what}")))?;
        t.parse::<f64>().map_err(|_| perr(format!("bad number {t:?} for {what}")))
    };
    let nv = next_num("vertex count")? as usize;
    let nf = next_num("face count")? as usize;
    let _ne = next_num("edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push([next_num("x")?, next_num("y")?, next_num("z")?]);
    }
    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let k = next_num("face size")? as usize;
        if k < 3 {
            return Err(perr(format!("face {f} has {k} vertices")));
        }
        let idx: Vec<usize> = (0..k).map(|_| next_num("face index").map(|v| v as usize)).collect::<Result<_>>()?;
        if idx.iter().any(|&i| i >= nv) {
            return Err(perr(format!("face {f} references a missing vertex")));
        }
        for t in 1..k - 1 {
            triangles.push([idx[0], idx[t], idx[t + 1]]);
        }
    }
    Ok(TriMesh { vertices, triangles })
}

pub fn read_off(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_off(&text, path)
}

/// Area-weighted uniform surface samples, rescaled (uniformly, about the
/// bounding-box center) into `[-1, 1]^3`.
pub fn sample_mesh(mesh: &TriMesh, count: usize, seed: u64) -> Result<PrototypeGrid> {
    if count < 4 {
        return Err(Error::invalid(format!("mesh prototype needs >= 4 samples, got {count}")));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has zero total area"));
    }
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a / total;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Vec::with_capacity(count);
    for _ in 0..count {
        let r: f64 = rng.gen();
        let t = cdf.partition_point(|&c| c < r).min(areas.len() - 1);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        raw.push([0, 1, 2].map(|k| a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k])));
    }
    let (lo, hi) = crate::geometry::PointCloud::new(raw.clone(), Frame::World)?.bounds();
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let s = if extent > 0.0 { 2.0 / extent } else { 1.0 };
    let pts = raw
        .iter()
        .flat_map(|p| [0, 1, 2].map(|k| ((p[k] - center[k]) * s).clamp(-1.0, 1.0)))
        .collect();
    PrototypeGrid::new(pts, 3, GridKind::MeshSamples, count)
}

pub fn mesh_samples(path: &Path, count: usize, seed: u64) -> Result<PrototypeGrid> {
    sample_mesh(&read_off(path)?, count, seed)
}
