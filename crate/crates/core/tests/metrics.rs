mod support;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use softprop::geometry::{
    brute_nearest2, chamfer, chamfer_grad, hausdorff, nearest_pairs, Backend, Frame, KdTree, PointCloud,
};
use support::oracles::{self, chamfer_oracle, cloud, hausdorff_oracle, metric_pairs, rel};

#[test]
fn seeded_pairs_and_triples() {
    assert!(metric_pairs(100) <= 1e-6);
    assert_eq!(oracles::metric_axioms(100), 0);
}

#[test]
fn backends_match_definition_on_fixed_sizes() {
    for (n, m) in [(1, 1), (1, 2048), (2048, 1), (2048, 2048), (100, 7)] {
        let a = cloud(n as u64, n);
        let b = cloud(m as u64 + 99, m);
        let c = chamfer_oracle(a.points(), b.points());
        let h = hausdorff_oracle(a.points(), b.points());
        for backend in [Backend::Brute, Backend::Indexed] {
            assert!(rel(chamfer(&a, &b, backend).unwrap(), c) <= 1e-6);
            assert!(rel(hausdorff(&a, &b, backend).unwrap(), h) <= 1e-6);
        }
    }
}

#[test]
fn unit_square_example() {
    let a = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], Frame::World).unwrap();
    let b = PointCloud::new(vec![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]], Frame::World).unwrap();
    assert!((chamfer(&a, &b, Backend::Indexed).unwrap() - 0.5).abs() < 1e-12);
    assert!((hausdorff(&a, &b, Backend::Indexed).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn frames_must_agree() {
    let a = cloud(1, 4);
    let b = PointCloud::new(a.points().to_vec(), Frame::World).unwrap();
    assert!(chamfer(&a, &b, Backend::Brute).is_err());
}

#[test]
fn ties_go_to_lowest_index() {
    let targets = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let q = [0.0, 0.0, 0.0];
    let tree = KdTree::build(&targets);
    assert_eq!(tree.nearest2(&q)[0].index, 0);
    assert_eq!(brute_nearest2(&targets, &q)[0].index, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn indexed_equals_brute(seed in any::<u64>(), n in 1usize..=2048, m in 1usize..=2048) {
        let a = cloud(seed, n);
        let b = cloud(seed.wrapping_add(1), m);
        let cb = chamfer(&a, &b, Backend::Brute).unwrap();
        let ci = chamfer(&a, &b, Backend::Indexed).unwrap();
        prop_assert!(rel(cb, ci) <= 1e-6);
        let hb = hausdorff(&a, &b, Backend::Brute).unwrap();
        let hi = hausdorff(&a, &b, Backend::Indexed).unwrap();
        prop_assert!(rel(hb, hi) <= 1e-6);
        let pb = nearest_pairs(a.points(), b.points(), Backend::Brute);
        let pi = nearest_pairs(a.points(), b.points(), Backend::Indexed);
        for (x, y) in pb.iter().zip(&pi) {
            prop_assert_eq!(x[0].index, y[0].index);
        }
    }

    #[test]
    fn metric_axioms(seed in any::<u64>(), n in 1usize..300, m in 1usize..300, k in 1usize..300) {
        let a = cloud(seed, n);
        let b = cloud(seed ^ 0x55, m);
        let c = cloud(seed ^ 0xAA, k);
        let be = Backend::Indexed;
        prop_assert_eq!(chamfer(&a, &a, be).unwrap(), 0.0);
        prop_assert_eq!(hausdorff(&a, &a, be).unwrap(), 0.0);
        prop_assert!((chamfer(&a, &b, be).unwrap() - chamfer(&b, &a, be).unwrap()).abs() <= 1e-9);
        prop_assert!(chamfer(&a, &b, be).unwrap() <= hausdorff(&a, &b, be).unwrap());
        let ac = hausdorff(&a, &c, be).unwrap();
        let ab = hausdorff(&a, &b, be).unwrap();
        let bc = hausdorff(&b, &c, be).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn rigid_motion_invariance(seed in any::<u64>(), axis in prop::array::uniform3(-1.0f64..1.0),
                               angle in -3.0f64..3.0, shift in prop::array::uniform3(-5.0f64..5.0)) {
        prop_assume!(axis.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle);
        let t = Vector3::from(shift);
        let moved = |c: &PointCloud| {
            let pts = c.points().iter().map(|p| {
                let q = rot * Vector3::from(*p) + t;
                [q.x, q.y, q.z]
            }).collect();
            PointCloud::new(pts, Frame::Normalized).unwrap()
        };
        let a = cloud(seed, 150);
        let b = cloud(seed ^ 1, 170);
        let (ma, mb) = (moved(&a), moved(&b));
        let be = Backend::Indexed;
        prop_assert!(rel(chamfer(&a, &b, be).unwrap(), chamfer(&ma, &mb, be).unwrap()) <= 1e-5);
        prop_assert!(rel(hausdorff(&a, &b, be).unwrap(), hausdorff(&ma, &mb, be).unwrap()) <= 1e-5);
    }

    #[test]
    fn chamfer_gradient_backends_agree(seed in any::<u64>()) {
        let a = cloud(seed, 64);
        let b = cloud(seed ^ 9, 80);
        let gb = chamfer_grad(&a, &b, Backend::Brute).unwrap();
        let gi = chamfer_grad(&a, &b, Backend::Indexed).unwrap();
        prop_assert_eq!(gb, gi);
    }
}
