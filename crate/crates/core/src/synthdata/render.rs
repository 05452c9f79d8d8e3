use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{deform, random_unit, Body, DeformationParams, SceneConfig};
use crate::image::Image;
use crate::prototype::fibonacci_sphere;

/// Points closer than this to a camera plane are not drawn.
const NEAR_PLANE: f64 = 0.05;

/// Painted surface dots: body-frame positions and RGB colors.
#[derive(Debug, Clone, PartialEq)]
pub struct DotPattern {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl DotPattern {
    pub fn new(scene: &SceneConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.dot_seed);
        let mut positions = Vec::with_capacity(scene.dots);
        let mut colors = Vec::with_capacity(scene.dots);
        for _ in 0..scene.dots {
            positions.push(match scene.body {
                Body::Sphere => random_unit(&mut rng),
                Body::Sheet => [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), 0.0],
            });
            colors.push([0; 3].map(|_| rng.gen_range(40..=255u8)));
        }
        DotPattern { positions, colors }
    }
}

/// Camera-frame coordinates `(x, y, depth)` of a body-frame point for the
/// camera of `view`: view 0 sits below the center looking along +z, view 1
/// above it looking along -z (rotated half a turn about x).
pub fn camera_coords(scene: &SceneConfig, view: usize, p: [f64; 3]) -> [f64; 3] {
    let d = scene.camera_offset;
    if view == 0 {
        [p[0], p[1], p[2] + d]
    } else {
        [p[0], -p[1], d - p[2]]
    }
}

/// Pinhole projection to continuous pixel coordinates `(col, row)`; pixel
/// `(r, c)` has its center at `(c, r)`, so the optical axis hits pixel
/// `(H/2, W/2)`. `None` behind the near plane.
pub fn project(scene: &SceneConfig, view: usize, p: [f64; 3]) -> Option<(f64, f64, f64)> {
    let [x, y, z] = camera_coords(scene, view, p);
    if z <= NEAR_PLANE {
        return None;
    }
    let f = scene.focal();
    let cx = (scene.image_width / 2) as f64;
    let cy = (scene.image_height / 2) as f64;
    Some((cx + f * x / z, cy + f * y / z, z))
}

/// Renders every camera and stacks them channel-wise (RGB per camera).
/// Each deformed dot is splatted as a disc; the nearest dot wins, earlier
/// dots win exact depth ties.
pub fn render_internal(params: &DeformationParams, scene: &SceneConfig, dots: &DotPattern) -> Image {
    let (h, w) = (scene.image_height, scene.image_width);
    let mut img = Image::zeros(h, w, scene.channels());
    let deformed: Vec<[f64; 3]> = dots.positions.iter().map(|&u| deform(scene.body, u, params)).collect();
    let r = scene.splat_radius;
    for view in 0..scene.views {
        let mut depth = vec![f64::INFINITY; h * w];
        for (p, color) in deformed.iter().zip(&dots.colors) {
            let Some((col, row, z)) = project(scene, view, *p) else { continue };
            let r0 = (row - r).ceil().max(0.0);
            let r1 = (row + r).floor().min(h as f64 - 1.0);
            let c0 = (col - r).ceil().max(0.0);
            let c1 = (col + r).floor().min(w as f64 - 1.0);
            if r0 > r1 || c0 > c1 {
                continue;
            }
            for py in r0 as usize..=r1 as usize {
                for px in c0 as usize..=c1 as usize {
                    let (dy, dx) = (py as f64 - row, px as f64 - col);
                    if dx * dx + dy * dy > r * r || z >= depth[py * w + px] {
                        continue;
                    }
                    depth[py * w + px] = z;
                    for (ch, &cv) in color.iter().enumerate() {
                        img.set(3 * view + ch, py, px, cv as f32 / 255.0);
                    }
                }
            }
        }
    }
    img
}

/// Undeformed body points whose deformations form the ground-truth cloud
/// of `view`: a Fibonacci set split by hemisphere for the sphere, a
/// low-discrepancy set for the sheet.
pub fn view_prototype(scene: &SceneConfig, view: usize) -> Vec<[f64; 3]> {
    let n = scene.points_per_view;
    match scene.body {
        Body::Sphere if scene.views == 1 => fibonacci_sphere(n),
        Body::Sphere => {
            // points 0..n have z > 0, n..2n have z < 0
            let all = fibonacci_sphere(2 * n);
            all[view * n..(view + 1) * n].to_vec()
        }
        Body::Sheet => {
            // R2 sequence
            let g = 1.324_717_957_244_746f64;
            let (a1, a2) = (1.0 / g, 1.0 / (g * g));
            (0..n)
                .map(|i| {
                    let x = (0.5 + a1 * i as f64).fract();
                    let y = (0.5 + a2 * i as f64).fract();
                    [2.0 * x - 1.0, 2.0 * y - 1.0, 0.0]
                })
                .collect()
        }
    }
}

/// Ground-truth cloud of `view` in world meters, rounded to single
/// precision so that in-memory and on-disk datasets agree exactly.
pub fn ground_truth(params: &DeformationParams, scene: &SceneConfig, view: usize) -> Vec<[f64; 3]> {
    let radius = scene.radius();
    view_prototype(scene, view)
        .into_iter()
        .map(|u| deform(scene.body, u, params).map(|c| (c * radius) as f32 as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_axis_hits_center_pixel() {
        let scene = SceneConfig::default();
        let (col, row, _) = project(&scene, 0, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!((col, row), (16.0, 16.0));
        let (col, row, _) = project(&SceneConfig { views: 2, ..scene }, 1, [0.0, 0.0, -1.0]).unwrap();
        assert_eq!((col, row), (16.0, 16.0));
    }

    #[test]
    fn single_dot_lights_its_disc() {
        let scene = SceneConfig::default();
        let dots = DotPattern {
            positions: vec![[0.0, 0.0, 1.0]],
            colors: vec![[255, 128, 40]],
        };
        let img = render_internal(&DeformationParams::identity(), &scene, &dots);
        assert_eq!(img.get(0, 16, 16), 1.0);
        assert_eq!(img.get(1, 18, 16), 128.0 / 255.0);
        assert_eq!(img.get(0, 18, 18), 0.0);
        let lit = img.data()[..32 * 32].iter().filter(|&&v| v > 0.0).count();
        assert_eq!(lit, 13);
    }

    #[test]
    fn hemisphere_split() {
        let scene = SceneConfig {
            views: 2,
            points_per_view: 100,
            ..Default::default()
        };
        assert!(view_prototype(&scene, 0).iter().all(|p| p[2] >= 0.0));
        assert!(view_prototype(&scene, 1).iter().all(|p| p[2] < 0.0));
    }
}
