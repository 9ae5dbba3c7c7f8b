//! Parts, equivalence classes and assembled shape records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::raster::{Grid, Mask};
use crate::geometry::{apply_pose, chamfer_l1, Aabb, Camera, PartPose, PointCloud};

/// Largest number of parts per shape, and the instance one-hot length.
pub const MAX_PARTS: usize = 20;

pub const AABB_TOLERANCE: f64 = 0.1;
pub const CHAMFER_TOLERANCE: f64 = 0.02;

/// A canonicalized part.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub id: usize,
    pub cloud: PointCloud,
    pub aabb: Aabb,
    pub class_id: usize,
    /// Position of this part inside its class, `< class size`.
    pub instance: usize,
}

/// Parts that are interchangeable for matching purposes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    /// Lowest member id; its cloud stands for the class.
    pub representative: usize,
    /// Ascending part ids.
    pub members: Vec<usize>,
}

impl EquivalenceClass {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Chamfer distance divided by the mean AABB diagonal of the two clouds.
pub fn normalized_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let scale = 0.5 * (a.aabb().diagonal() + b.aabb().diagonal());
    let d = chamfer_l1(&a.points, &b.points);
    if scale > 0.0 {
        d / scale
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn similar(a: &PointCloud, b: &PointCloud, aabb_tol: f64, chamfer_tol: f64) -> bool {
    let (ea, eb) = (a.aabb().extents(), b.aabb().extents());
    (0..3).all(|d| (ea[d] - eb[d]).abs() < aabb_tol) && normalized_chamfer(a, b) < chamfer_tol
}

/// Groups canonical clouds into connected components of the pairwise
/// similarity graph. Classes are ordered by their lowest member.
pub fn detect_equivalence_classes(clouds: &[PointCloud], aabb_tol: f64, chamfer_tol: f64) -> Vec<EquivalenceClass> {
    let n = clouds.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
            if ri != rj && similar(&clouds[i], &clouds[j], aabb_tol, chamfer_tol) {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut classes: Vec<EquivalenceClass> = Vec::new();
    let mut class_of_root = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if class_of_root[r] == usize::MAX {
            class_of_root[r] = classes.len();
            classes.push(EquivalenceClass {
                representative: i,
                members: Vec::new(),
            });
        }
        classes[class_of_root[r]].members.push(i);
    }
    classes
}

/// Instance one-hots of length [`MAX_PARTS`], indexed by part id.
pub fn build_instance_onehots(classes: &[EquivalenceClass]) -> Result<Vec<Vec<f64>>> {
    let n = classes.iter().map(EquivalenceClass::len).sum();
    let mut out = vec![Vec::new(); n];
    for class in classes {
        if class.len() > MAX_PARTS {
            return Err(Error::invalid(format!("class of {} parts exceeds {MAX_PARTS}", class.len())));
        }
        for (slot, &id) in class.members.iter().enumerate() {
            let cell = out
                .get_mut(id)
                .ok_or_else(|| Error::invalid(format!("part id {id} outside 0..{n}")))?;
            let mut onehot = vec![0.0; MAX_PARTS];
            onehot[slot] = 1.0;
            *cell = onehot;
        }
    }
    if out.iter().any(Vec::is_empty) {
        return Err(Error::invalid("classes do not cover every part id"));
    }
    Ok(out)
}

/// Builds [`Part`]s from canonical clouds and their classes.
pub fn assign_parts(clouds: Vec<PointCloud>, classes: &[EquivalenceClass]) -> Vec<Part> {
    let mut slots = vec![(0, 0); clouds.len()];
    for (k, class) in classes.iter().enumerate() {
        for (i, &id) in class.members.iter().enumerate() {
            slots[id] = (k, i);
        }
    }
    clouds
        .into_iter()
        .enumerate()
        .map(|(id, cloud)| Part {
            id,
            aabb: cloud.aabb(),
            cloud,
            class_id: slots[id].0,
            instance: slots[id].1,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

/// One assembly instance with everything needed for training and scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRecord {
    pub id: String,
    pub template: String,
    pub seed: u64,
    pub split: Split,
    pub parts: Vec<Part>,
    pub classes: Vec<EquivalenceClass>,
    /// Camera-space ground-truth poses, one per part.
    pub poses: Vec<PartPose>,
    pub camera: Camera,
    /// Input depth render.
    pub depth: Grid,
    /// Ground-truth instance masks, one per part.
    pub masks: Vec<Mask>,
}

impl ShapeRecord {
    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    /// A part is visible when its ground-truth mask covers at least one pixel.
    pub fn visible(&self) -> Vec<bool> {
        self.masks.iter().map(|m| !m.is_empty()).collect()
    }

    pub fn clouds(&self) -> Vec<&PointCloud> {
        self.parts.iter().map(|p| &p.cloud).collect()
    }

    /// Each part's cloud under the ground-truth pose.
    pub fn posed_parts(&self) -> Result<Vec<PointCloud>> {
        self.parts.iter().zip(&self.poses).map(|(p, pose)| apply_pose(&p.cloud, pose)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parts.len();
        if n == 0 || n > MAX_PARTS {
            return Err(Error::invalid(format!("shape {} has {n} parts, expected 1..={MAX_PARTS}", self.id)));
        }
        if self.poses.len() != n || self.masks.len() != n {
            return Err(Error::invalid(format!(
                "shape {}: {n} parts, {} poses, {} masks",
                self.id,
                self.poses.len(),
                self.masks.len()
            )));
        }
        let mut seen = vec![false; n];
        for (k, class) in self.classes.iter().enumerate() {
            for (i, &id) in class.members.iter().enumerate() {
                if id >= n || seen[id] {
                    return Err(Error::invalid(format!("shape {}: classes are not a partition", self.id)));
                }
                seen[id] = true;
                if self.parts[id].class_id != k || self.parts[id].instance != i {
                    return Err(Error::invalid(format!("shape {}: part {id} disagrees with its class", self.id)));
                }
            }
            if class.members.first() != Some(&class.representative) {
                return Err(Error::invalid(format!("shape {}: class {k} representative", self.id)));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid(format!("shape {}: classes do not cover every part", self.id)));
        }
        for (i, p) in self.parts.iter().enumerate() {
            if p.id != i || !p.cloud.all_finite() || p.cloud.is_empty() {
                return Err(Error::invalid(format!("shape {}: part {i} malformed", self.id)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn box_cloud(size: [f64; 3], n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    let mut p = [0.0; 3];
                    for d in 0..3 {
                        p[d] = rng.gen_range(-0.5..0.5) * size[d];
                    }
                    p
                })
                .collect(),
        )
    }

    #[test]
    fn cubes_and_a_box() {
        let cube = box_cloud([0.3, 0.3, 0.3], 200, 1);
        let long = box_cloud([0.6, 0.3, 0.3], 200, 2);
        let classes = detect_equivalence_classes(&[cube.clone(), cube, long], AABB_TOLERANCE, CHAMFER_TOLERANCE);
        assert_eq!(classes.len(), 2);
        assert_eq!(classes[0].members, vec![0, 1]);
        assert_eq!(classes[1].members, vec![2]);
    }

    #[test]
    fn distinct_parts_are_singletons() {
        let clouds: Vec<PointCloud> = (0..5).map(|i| box_cloud([0.1 + 0.2 * i as f64, 0.1, 0.05], 100, i)).collect();
        let classes = detect_equivalence_classes(&clouds, AABB_TOLERANCE, CHAMFER_TOLERANCE);
        assert_eq!(classes.len(), 5);
        assert!(classes.iter().enumerate().all(|(i, c)| c.members == vec![i]));
    }

    #[test]
    fn noisy_copies_share_a_class() {
        let leg = box_cloud([0.05, 0.4, 0.05], 300, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut clouds = vec![leg.clone()];
        for _ in 0..3 {
            clouds.push(PointCloud::new(
                leg.points.iter().map(|p| p.map(|v| v + rng.gen_range(-1e-4..1e-4))).collect(),
            ));
        }
        for c in &clouds[1..] {
            assert!(normalized_chamfer(&clouds[0], c) < CHAMFER_TOLERANCE);
        }
        let classes = detect_equivalence_classes(&clouds, AABB_TOLERANCE, CHAMFER_TOLERANCE);
        assert_eq!(classes, vec![EquivalenceClass { representative: 0, members: vec![0, 1, 2, 3] }]);
    }

    #[test]
    fn detection_ignores_input_order() {
        let a = box_cloud([0.3, 0.1, 0.1], 150, 5);
        let b = box_cloud([0.6, 0.3, 0.02], 150, 6);
        let forward = [a.clone(), b.clone(), a.clone(), b.clone(), a.clone()];
        let order = [3, 0, 4, 1, 2];
        let shuffled: Vec<PointCloud> = order.iter().map(|&i| forward[i].clone()).collect();
        let label = |classes: &[EquivalenceClass], n: usize| {
            let mut l = vec![0; n];
            for (k, c) in classes.iter().enumerate() {
                for &m in &c.members {
                    l[m] = k;
                }
            }
            l
        };
        let lf = label(&detect_equivalence_classes(&forward, 0.1, 0.02), 5);
        let ls = label(&detect_equivalence_classes(&shuffled, 0.1, 0.02), 5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(ls[i] == ls[j], lf[order[i]] == lf[order[j]]);
            }
        }
    }

    #[test]
    fn onehots() {
        let classes = vec![
            EquivalenceClass { representative: 0, members: vec![0, 2, 3, 5] },
            EquivalenceClass { representative: 1, members: vec![1] },
            EquivalenceClass { representative: 4, members: vec![4] },
        ];
        let hot = build_instance_onehots(&classes).unwrap();
        let pos = |v: &Vec<f64>| v.iter().position(|&x| x == 1.0).unwrap();
        assert_eq!([0, 2, 3, 5].map(|i| pos(&hot[i])), [0, 1, 2, 3]);
        assert_eq!(pos(&hot[1]), 0);
        assert!(hot.iter().all(|v| v.len() == MAX_PARTS && v.iter().sum::<f64>() == 1.0));

        let too_big = vec![EquivalenceClass { representative: 0, members: (0..21).collect() }];
        assert!(build_instance_onehots(&too_big).is_err());
    }
}
