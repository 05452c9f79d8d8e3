use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softprop::synthdata::{
    dataset_checksum, deform, ground_truth, project, render_internal, sample_dataset, Body, Bump, DeformationParams,
    DotPattern, SceneConfig, Split, AMPLITUDE_RANGE,
};

fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = norm(v);
    v.map(|c| c / n)
}

#[test]
fn identity_and_peak() {
    let u = unit([0.3, -0.4, 0.5]);
    assert_eq!(deform(Body::Sphere, u, &DeformationParams::identity()), u);
    let params = DeformationParams {
        bumps: vec![Bump {
            center: u,
            amplitude: 0.2,
            sigma: 0.35,
        }],
        scale: [1.0; 3],
    };
    let p = deform(Body::Sphere, u, &params);
    assert!((norm(p) - 1.2).abs() < 1e-12);
    assert!((0..3).all(|k| (p[k] / 1.2 - u[k]).abs() < 1e-12));
}

#[test]
fn stacked_dents_reach_a_tenth_of_the_radius() {
    let u = [0.0, 0.0, 1.0];
    let dent = Bump {
        center: u,
        amplitude: AMPLITUDE_RANGE.0,
        sigma: 0.2,
    };
    let params = DeformationParams {
        bumps: vec![dent.clone(), dent.clone(), dent],
        scale: [0.9; 3],
    };
    params.validate().unwrap();
    let r = norm(deform(Body::Sphere, u, &params));
    assert!((r - 0.09).abs() < 1e-12);
    assert!(r < 0.4 * 0.9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn deformed_radius_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = DeformationParams::sample(Body::Sphere, &mut rng);
        params.validate().unwrap();
        // three bumps of |a| <= 0.3 and scales in [0.9, 1.1]
        let (lo, hi) = (0.1 * 0.9, 1.9 * 1.1);
        for _ in 0..200 {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let u = [r * phi.cos(), r * phi.sin(), z];
            let d = norm(deform(Body::Sphere, u, &params));
            prop_assert!(d >= lo - 1e-12 && d <= hi + 1e-12);
        }
    }
}

#[test]
fn dots_inside_a_growing_bump_move_outward() {
    let scene = SceneConfig::default();
    let (cx, cy) = ((scene.image_width / 2) as f64, (scene.image_height / 2) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        // direction inside camera 0's field of view
        let u = unit([rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), 1.0]);
        let center = unit([u[0] + rng.gen_range(-0.1..0.1), u[1] + rng.gen_range(-0.1..0.1), u[2]]);
        let mut last = -1.0;
        for step in 0..=60 {
            let a = AMPLITUDE_RANGE.0 + step as f64 * 0.01;
            let params = DeformationParams {
                bumps: vec![Bump {
                    center,
                    amplitude: a,
                    sigma: 0.3,
                }],
                scale: [1.0; 3],
            };
            let (col, row, _) = project(&scene, 0, deform(Body::Sphere, u, &params)).unwrap();
            let r = ((col - cx).powi(2) + (row - cy).powi(2)).sqrt();
            assert!(r > last, "radius {r} after {last} at amplitude {a}");
            last = r;
        }
    }
}

#[test]
fn rendering_is_deterministic() {
    let scene = SceneConfig {
        views: 2,
        ..Default::default()
    };
    let dots = DotPattern::new(&scene);
    let params = DeformationParams::identity();
    assert_eq!(render_internal(&params, &scene, &dots), render_internal(&params, &scene, &dots));
}

#[test]
fn amplitude_changes_are_visible() {
    let scene = SceneConfig {
        views: 2,
        ..Default::default()
    };
    let dots = DotPattern::new(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut pairs = 0;
    while pairs < 100 {
        let p = DeformationParams::sample(Body::Sphere, &mut rng);
        if p.bumps.is_empty() {
            continue;
        }
        let mut q = p.clone();
        let k = rng.gen_range(0..q.bumps.len());
        let b = &mut q.bumps[k];
        let delta: f64 = rng.gen_range(0.05..0.15);
        b.amplitude = if b.amplitude + delta <= AMPLITUDE_RANGE.1 {
            b.amplitude + delta
        } else {
            b.amplitude - delta
        };
        q.validate().unwrap();
        let (a, b) = (render_internal(&p, &scene, &dots), render_internal(&q, &scene, &dots));
        let differing = a.to_u8().iter().zip(b.to_u8()).filter(|(x, y)| *x != y).count();
        assert!(differing >= 1, "pair {pairs} renders identically: {p:?} vs {q:?}");
        pairs += 1;
    }
}

#[test]
fn hemisphere_split_and_counts() {
    let scene = SceneConfig {
        views: 2,
        points_per_view: 128,
        ..Default::default()
    };
    let data = sample_dataset(2400, &scene, 7).unwrap();
    assert_eq!(data.view_counts(&(0..data.len()).collect::<Vec<_>>()), vec![1200, 1200]);
    assert_eq!(data.indices(Split::Train).len(), 2000);
    assert_eq!(data.indices(Split::Test).len(), 400);
    let params = DeformationParams::identity();
    assert!(ground_truth(&params, &scene, 0).iter().all(|p| p[2] > 0.0));
    assert!(ground_truth(&params, &scene, 1).iter().all(|p| p[2] < 0.0));
    for i in 0..data.len() {
        let c = data.normalized_cloud(i).unwrap();
        assert!(c.points().iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn single_view_covers_the_whole_body() {
    let scene = SceneConfig {
        points_per_view: 256,
        ..Default::default()
    };
    let data = sample_dataset(12, &scene, 1).unwrap();
    assert!(data.samples.iter().all(|s| s.view == 0));
    let s = &data.samples[0];
    assert!(s.cloud.points().iter().any(|p| p[2] > 0.0));
    assert!(s.cloud.points().iter().any(|p| p[2] < 0.0));
}

#[test]
fn same_seed_same_dataset_on_disk() {
    let scene = SceneConfig {
        views: 2,
        points_per_view: 64,
        ..Default::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let d1 = sample_dataset(30, &scene, 5).unwrap();
    let d2 = sample_dataset(30, &scene, 5).unwrap();
    assert_eq!(d1, d2);
    d1.write(a.path()).unwrap();
    d2.write(b.path()).unwrap();
    assert_eq!(dataset_checksum(a.path()).unwrap(), dataset_checksum(b.path()).unwrap());
    let d3 = sample_dataset(30, &scene, 6).unwrap();
    assert_ne!(d1, d3);
}

#[test]
fn invalid_generation_requests() {
    let scene = SceneConfig {
        views: 2,
        ..Default::default()
    };
    assert!(sample_dataset(1, &scene, 0).is_err());
    let sheet = SceneConfig {
        body: Body::Sheet,
        views: 2,
        ..Default::default()
    };
    assert!(sample_dataset(10, &sheet, 0).is_err());
}
