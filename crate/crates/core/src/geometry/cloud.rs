use serde::{Deserialize, Serialize};

use super::quat::{mat_vec, PartPose, UnitQuaternion, Vec3};
use crate::error::{Error, Result};

/// An ordered set of 3-D points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        c.map(|v| v / n)
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::of_points(&self.points)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(3) {
            return Err(Error::shape("point cloud", format!("{} values is not a multiple of 3", values.len())));
        }
        Ok(Self::new(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.points.iter().map(|p| p.map(|v| v * factor)).collect())
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self::new(self.points.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect())
    }

    pub fn rotated(&self, q: &UnitQuaternion) -> Self {
        let r = q.to_matrix();
        Self::new(self.points.iter().map(|p| mat_vec(&r, p)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    pub fn union<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>) -> PointCloud {
        PointCloud::new(clouds.into_iter().flat_map(|c| c.points.iter().copied()).collect())
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn of_points(points: &[Vec3]) -> Self {
        if points.is_empty() {
            return Self {
                min: [0.0; 3],
                max: [0.0; 3],
            };
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for d in 0..3 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        Self { min, max }
    }

    pub fn extents(&self) -> Vec3 {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn diagonal(&self) -> f64 {
        self.extents().iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }
}

/// `y = R(q) p + t` for every point.
pub fn apply_pose(cloud: &PointCloud, pose: &PartPose) -> Result<PointCloud> {
    let n = pose.rotation.norm();
    if (n - 1.0).abs() > 1e-3 {
        return Err(Error::invalid(format!("pose quaternion has norm {n}, expected unit")));
    }
    let r = pose.rotation.to_matrix();
    let t = pose.translation;
    Ok(PointCloud::new(
        cloud
            .points
            .iter()
            .map(|p| {
                let y = mat_vec(&r, p);
                [y[0] + t[0], y[1] + t[1], y[2] + t[2]]
            })
            .collect(),
    ))
}

/// Scales every part by one common factor so the longest AABB diagonal
/// among them becomes 1.
pub fn normalize_global_scale(parts: &[PointCloud]) -> Result<(Vec<PointCloud>, f64)> {
    if parts.is_empty() {
        return Err(Error::invalid("normalize_global_scale needs at least one part"));
    }
    let longest = parts.iter().map(|p| p.aabb().diagonal()).fold(0.0, f64::max);
    if !(longest > 0.0 && longest.is_finite()) {
        return Err(Error::invalid("all parts are degenerate (zero AABB diagonal)"));
    }
    let factor = 1.0 / longest;
    Ok((parts.iter().map(|p| p.scaled(factor)).collect(), factor))
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube() -> PointCloud {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn apply_pose_examples() {
        let origin = PointCloud::new(vec![[0.0; 3]]);
        let moved = apply_pose(&origin, &PartPose::new(UnitQuaternion::IDENTITY, [1.0, 0.0, 0.0])).unwrap();
        assert_eq!(moved.points, vec![[1.0, 0.0, 0.0]]);

        let q = UnitQuaternion::from_array([0.0, 0.0, 0.0, 1.0]).unwrap();
        let p = apply_pose(&PointCloud::new(vec![[1.0, 0.0, 0.0]]), &PartPose::new(q, [0.0; 3])).unwrap();
        assert!((p.points[0][0] + 1.0).abs() < 1e-15);

        let bad = PartPose::new(UnitQuaternion { w: 2.0, x: 0.0, y: 0.0, z: 0.0 }, [0.0; 3]);
        assert!(apply_pose(&origin, &bad).is_err());
    }

    #[test]
    fn apply_pose_is_rigid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = PointCloud::new((0..30).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect());
        let pose = PartPose::new(UnitQuaternion::random(&mut rng), [3.0, -1.0, 0.5]);
        let moved = apply_pose(&cloud, &pose).unwrap();
        for i in 0..cloud.len() {
            for j in 0..cloud.len() {
                let before = distance(&cloud.points[i], &cloud.points[j]);
                let after = distance(&moved.points[i], &moved.points[j]);
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn global_scale_examples() {
        let (scaled, s) = normalize_global_scale(&[cube()]).unwrap();
        assert!((s - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((scaled[0].aabb().diagonal() - 1.0).abs() < 1e-9);

        let big = PointCloud::new(vec![[0.0; 3], [2.0, 0.0, 0.0]]);
        let small = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let (scaled, _) = normalize_global_scale(&[big, small]).unwrap();
        assert!((scaled[0].aabb().diagonal() - 1.0).abs() < 1e-12);
        assert!((scaled[1].aabb().diagonal() - 0.5).abs() < 1e-12);

        let (again, s2) = normalize_global_scale(&scaled).unwrap();
        assert!((s2 - 1.0).abs() < 1e-12);
        assert_eq!(again, scaled);

        let point = PointCloud::new(vec![[1.0; 3]]);
        assert!(normalize_global_scale(&[point]).is_err());
        assert!(normalize_global_scale(&[]).is_err());
    }
}
