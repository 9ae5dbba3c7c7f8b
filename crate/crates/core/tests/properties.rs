//! Cross-module invariants under random inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use partsmith::assignment::{hungarian, CostMatrix};
use partsmith::autodiff::{checkpoint, ParamStore};
use partsmith::config::RunConfig;
use partsmith::datagen::{generate_shape, SyntheticSpec, Template};
use partsmith::geometry::{apply_pose, fps_indices, pca_canonicalize, PartPose, PointCloud, UnitQuaternion, Vec3};
use partsmith::losses::{soft_iou_loss, total_pose_loss, LossWeights};
use partsmith::metrics::{part_accuracy, shape_chamfer, ChamferForm};

fn point() -> impl Strategy<Value = Vec3> {
    [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]
}

fn cloud(min: usize, max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(point(), min..max)
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn template() -> impl Strategy<Value = Template> {
    prop_oneof![Just(Template::Table), Just(Template::Chair), Just(Template::Cabinet)]
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        points_per_part: 24,
        dense_factor: 2,
        grid: 16,
        ..SyntheticSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rigid_poses_preserve_distances(points in cloud(2, 20), seed in any::<u64>(), t in point()) {
        let q = UnitQuaternion::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let moved = apply_pose(&PointCloud::new(points.clone()), &PartPose::new(q, t)).unwrap();
        for i in 1..points.len() {
            prop_assert!((dist(&points[0], &points[i]) - dist(&moved.points[0], &moved.points[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn quaternion_matrix_round_trip(seed in any::<u64>()) {
        let q = UnitQuaternion::random(&mut ChaCha8Rng::seed_from_u64(seed)).canonical();
        let back = UnitQuaternion::from_matrix(&q.to_matrix()).unwrap().canonical();
        for (a, b) in q.as_array().iter().zip(back.as_array()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(q.as_array()[0] >= 0.0);
    }

    #[test]
    fn fps_prefixes_are_fps(points in cloud(3, 40), k in 1usize..3) {
        let all = fps_indices(&points, points.len(), 0).unwrap();
        prop_assert_eq!(&fps_indices(&points, k, 0).unwrap()[..], &all[..k]);
        let mut sorted = all.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..points.len()).collect::<Vec<_>>());
    }

    #[test]
    fn canonical_clouds_are_centered(points in cloud(4, 40)) {
        let (canonical, _) = pca_canonicalize(&PointCloud::new(points));
        for c in canonical.centroid() {
            prop_assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn hungarian_returns_a_permutation_no_worse_than_identity(n in 1usize..7, values in prop::collection::vec(0.0..10.0f64, 49)) {
        let m = CostMatrix::new(n, values[..n * n].to_vec()).unwrap();
        let a = hungarian(&m);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!(m.total(&a) <= m.total(&(0..n).collect::<Vec<_>>()) + 1e-12);
    }

    #[test]
    fn soft_iou_loss_is_bounded(t in template(), seed in 0u64..1000, noise in prop::collection::vec(0.0..1.0f64, 8)) {
        let record = generate_shape(&small_spec(), t, seed).unwrap();
        let cells = record.depth.values.len();
        let preds: Vec<Vec<f64>> = (0..record.num_parts())
            .map(|k| (0..cells).map(|c| noise[(k + c) % noise.len()]).collect())
            .collect();
        let loss = soft_iou_loss(&preds, &record.masks, &record.classes).unwrap();
        prop_assert!((-1.0..=0.0).contains(&loss));
    }

    #[test]
    fn generated_shapes_hold_their_invariants(t in template(), seed in any::<u64>()) {
        let record = generate_shape(&small_spec(), t, seed).unwrap();
        record.validate().unwrap();
        let clouds: Vec<PointCloud> = record.parts.iter().map(|p| p.cloud.clone()).collect();
        let longest = clouds.iter().map(|c| c.aabb().diagonal()).fold(0.0, f64::max);
        prop_assert!((longest - 1.0).abs() < 1e-9);
        for c in &clouds {
            for v in c.centroid() {
                prop_assert!(v.abs() < 1e-9);
            }
        }
        let pa = part_accuracy(&record.poses, &record.poses, &clouds, &record.classes, &record.visible(), 0.1, ChamferForm::Squared).unwrap();
        prop_assert_eq!(pa.fraction(), 1.0);
        prop_assert_eq!(shape_chamfer(&record.poses, &record.poses, &clouds).unwrap(), 0.0);
        let zero = total_pose_loss(&record.poses, &record.poses, &clouds, &record.classes, &LossWeights::default()).unwrap();
        prop_assert!(zero.total.abs() <= 1e-9);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), lr in 1e-6..1.0f64, epochs in 1usize..500, tau in 0.01..1.0f64) {
        let mut cfg = RunConfig { seed, lr, epochs, tau, ..RunConfig::default() };
        cfg.set("ablate", "global,img").unwrap();
        prop_assert_eq!(RunConfig::parse_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn checkpoints_round_trip(values in prop::collection::vec(-1e6..1e6f64, 1..30)) {
        let mut store = ParamStore::new();
        store.add("a.w", &[values.len()], values.clone()).unwrap();
        store.add("b", &[1], vec![values[0] * 0.5]).unwrap();
        let arrays = checkpoint::decode(&checkpoint::encode(&store)).unwrap();
        let mut other = ParamStore::new();
        other.add("a.w", &[values.len()], vec![0.0; values.len()]).unwrap();
        other.add("b", &[1], vec![0.0]).unwrap();
        checkpoint::restore(&mut other, &arrays).unwrap();
        for id in store.ids() {
            prop_assert_eq!(store.values(id), other.values(id));
        }
    }
}

#[test]
fn every_category_has_invisible_parts() {
    let spec = small_spec();
    for t in [Template::Table, Template::Chair, Template::Cabinet] {
        let invisible: usize = (0..30)
            .map(|seed| generate_shape(&spec, t, seed).unwrap().visible().iter().filter(|v| !**v).count())
            .sum();
        assert!(invisible > 0, "{} produced no invisible parts", t.name());
    }
}
