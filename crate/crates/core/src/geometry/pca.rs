//! Canonical part frames from principal components.
//!
//! Conventions:
//! - axes sorted by descending variance map to x, y, z;
//! - axes 1 and 2 are signed so the point with the largest |projection| lies
//!   on the positive side, the earliest such point (list order) deciding ties;
//! - axis 3 is `axis1 × axis2`, so the frame is right-handed;
//! - equal variances pick, slot by slot, the world axis best represented in
//!   the shared eigenspace.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::cloud::PointCloud;
use super::quat::{Mat3, Vec3};

/// Placement of a canonical cloud: `p_input = rotation · p_canonical + centroid`.
/// Columns of `rotation` are the principal axes in input coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalFrame {
    pub rotation: Mat3,
    pub centroid: Vec3,
}

const EIGEN_TIE_REL: f64 = 1e-9;

pub fn pca_canonicalize(cloud: &PointCloud) -> (PointCloud, CanonicalFrame) {
    let centroid = cloud.centroid();
    let centered: Vec<Vec3> = cloud
        .points
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if centered.len() < 2 {
        return (
            PointCloud::new(centered),
            CanonicalFrame {
                rotation: identity,
                centroid,
            },
        );
    }

    let mut cov = Matrix3::<f64>::zeros();
    for p in &centered {
        let v = Vector3::new(p[0], p[1], p[2]);
        cov += v * v.transpose();
    }
    cov /= centered.len() as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors: Vec<Vector3<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let scale = values[0].abs().max(f64::MIN_POSITIVE);

    let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(3);
    let mut start = 0;
    while start < 3 {
        let mut end = start + 1;
        while end < 3 && (values[start] - values[end]).abs() <= EIGEN_TIE_REL * scale {
            end += 1;
        }
        if end - start == 1 {
            axes.push(vectors[start]);
        } else {
            axes.extend(world_aligned_basis(&vectors[start..end]));
        }
        start = end;
    }

    for axis in axes.iter_mut().take(2) {
        if should_flip(axis, &centered) {
            *axis = -*axis;
        }
    }
    axes[2] = axes[0].cross(&axes[1]).normalize();

    let mut rotation = [[0.0; 3]; 3];
    for (j, a) in axes.iter().enumerate() {
        for i in 0..3 {
            rotation[i][j] = a[i];
        }
    }
    let canonical = centered
        .iter()
        .map(|p| {
            let v = Vector3::new(p[0], p[1], p[2]);
            [axes[0].dot(&v), axes[1].dot(&v), axes[2].dot(&v)]
        })
        .collect();
    (PointCloud::new(canonical), CanonicalFrame { rotation, centroid })
}

/// Orthonormal basis of the span of `basis`, built by repeatedly taking the
/// world axis with the largest remaining projection.
fn world_aligned_basis(basis: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut span: Vec<Vector3<f64>> = basis.to_vec();
    let mut out = Vec::with_capacity(basis.len());
    for _ in 0..basis.len() {
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for w in 0..3 {
            let e = Vector3::ith(w, 1.0);
            let mut proj = Vector3::zeros();
            for v in &span {
                proj += *v * v.dot(&e);
            }
            let len = proj.norm();
            if best.is_none_or(|(b, _)| len > b + 1e-12) {
                best = Some((len, proj));
            }
        }
        let (_, dir) = best.expect("three world axes");
        let dir = dir.normalize();
        out.push(dir);
        // Remove `dir` from the remaining span.
        let mut rest: Vec<Vector3<f64>> = Vec::new();
        for v in &span {
            let mut r = *v - dir * dir.dot(v);
            for q in &rest {
                r -= *q * q.dot(&r);
            }
            if r.norm() > 1e-9 {
                rest.push(r.normalize());
            }
        }
        span = rest;
    }
    out
}

fn should_flip(axis: &Vector3<f64>, centered: &[Vec3]) -> bool {
    let proj: Vec<f64> = centered
        .iter()
        .map(|p| axis[0] * p[0] + axis[1] * p[1] + axis[2] * p[2])
        .collect();
    let max_abs = proj.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if max_abs == 0.0 {
        return false;
    }
    let tol = 1e-9 * max_abs;
    let winner = proj.iter().find(|s| s.abs() >= max_abs - tol).copied().unwrap_or(0.0);
    winner < 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat::{determinant, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3)])
                .collect(),
        )
    }

    fn max_diff(a: &PointCloud, b: &PointCloud) -> f64 {
        a.points
            .iter()
            .zip(&b.points)
            .flat_map(|(p, q)| (0..3).map(move |d| (p[d] - q[d]).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn dominant_axis_goes_to_x() {
        let cloud = PointCloud::new(vec![
            [0.0, -2.0, 0.0],
            [0.0, 2.0, 0.0],
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 0.0, 0.5],
            [0.0, 0.0, -0.5],
        ]);
        let (canon, frame) = pca_canonicalize(&cloud);
        for idx in [0, 1] {
            let p = canon.points[idx];
            assert!((p[0].abs() - 2.0).abs() < 1e-12 && p[1].abs() < 1e-12 && p[2].abs() < 1e-12, "{p:?}");
        }
        assert!((canon.points[2][1].abs() - 1.0).abs() < 1e-12);
        assert!((canon.points[4][2].abs() - 0.5).abs() < 1e-12);
        assert!((determinant(&frame.rotation) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mean_and_right_handed() {
        let (canon, frame) = pca_canonicalize(&random_cloud(1, 200));
        let c = canon.centroid();
        assert!(c.iter().all(|v| v.abs() < 1e-9));
        assert!((determinant(&frame.rotation) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn idempotent_and_translation_invariant() {
        let cloud = random_cloud(2, 150);
        let (once, _) = pca_canonicalize(&cloud);
        let (twice, _) = pca_canonicalize(&once);
        assert!(max_diff(&once, &twice) < 1e-9);
        let (shifted, _) = pca_canonicalize(&cloud.translated([5.0, -3.0, 1.0]));
        assert!(max_diff(&once, &shifted) < 1e-9);
    }

    #[test]
    fn rotated_copies_share_a_canonical_cloud() {
        let cloud = random_cloud(3, 120);
        let (reference, _) = pca_canonicalize(&cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let q = UnitQuaternion::random(&mut rng);
            let rotated = PointCloud::new(cloud.points.iter().map(|p| q.rotate(p)).collect());
            let (canon, _) = pca_canonicalize(&rotated);
            assert!(max_diff(&reference, &canon) < 1e-8);
        }
    }

    #[test]
    fn frame_reconstructs_input() {
        let cloud = random_cloud(4, 50);
        let (canon, frame) = pca_canonicalize(&cloud);
        for (p, c) in cloud.points.iter().zip(&canon.points) {
            let back = crate::geometry::quat::mat_vec(&frame.rotation, c);
            for d in 0..3 {
                assert!((back[d] + frame.centroid[d] - p[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let (single, frame) = pca_canonicalize(&PointCloud::new(vec![[1.0, 2.0, 3.0]]));
        assert_eq!(single.points, vec![[0.0; 3]]);
        assert_eq!(frame.rotation[0], [1.0, 0.0, 0.0]);

        // Isotropic cube corners: all eigenvalues tie, the frame snaps to world axes.
        let mut pts = Vec::new();
        for x in [-1.0, 1.0] {
            for y in [-1.0, 1.0] {
                for z in [-1.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        let (canon, frame) = pca_canonicalize(&PointCloud::new(pts));
        assert!((determinant(&frame.rotation) - 1.0).abs() < 1e-12);
        for p in &canon.points {
            assert!(p.iter().all(|v| (v.abs() - 1.0).abs() < 1e-12), "{p:?}");
        }
    }
}
