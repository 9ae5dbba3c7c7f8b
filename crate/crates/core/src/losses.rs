//! Training objectives, built on the tape so they backpropagate.
//!
//! Every loss first matches predictions to ground truth inside each
//! equivalence class, using the current forward values, then records the
//! matched terms.

use serde::{Deserialize, Serialize};

use crate::assignment::match_within_classes;
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::geometry::raster::Mask;
use crate::geometry::{apply_pose, chamfer_sq, PartPose, PointCloud, UnitQuaternion};
use crate::parts::EquivalenceClass;

pub const SOFT_IOU_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub translation: f64,
    pub chamfer: f64,
    pub l2_rotation: f64,
    pub shape: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            translation: 1.0,
            chamfer: 20.0,
            l2_rotation: 1.0,
            shape: 1.0,
        }
    }
}

/// `-(Σ p·g + ε) / (Σ (p + g − p·g) + ε)` on plain values.
pub fn soft_iou(pred: &[f64], target: &[f64]) -> f64 {
    let (mut inter, mut union) = (SOFT_IOU_EPS, SOFT_IOU_EPS);
    for (p, g) in pred.iter().zip(target) {
        inter += p * g;
        union += p + g - p * g;
    }
    -inter / union
}

/// Mean matched negative soft-IoU over parts.
///
/// `preds[i]` is the soft mask node for part slot `i`. Returns the loss node
/// and `matched[gt] = pred`.
pub fn soft_iou_loss_node(
    g: &mut Graph<'_>,
    preds: &[NodeId],
    gt: &[Mask],
    classes: &[EquivalenceClass],
) -> Result<(NodeId, Vec<usize>)> {
    if preds.len() != gt.len() || preds.is_empty() {
        return Err(Error::shape("soft_iou_loss", format!("{} predictions vs {} masks", preds.len(), gt.len())));
    }
    let targets: Vec<Vec<f64>> = gt.iter().map(Mask::to_f64).collect();
    for (&p, t) in preds.iter().zip(&targets) {
        if g.value(p).len() != t.len() {
            return Err(Error::shape("soft_iou_loss", format!("mask of {} cells vs {}", g.value(p).len(), t.len())));
        }
    }
    let matched = match_within_classes(classes, |p, j| soft_iou(g.value(preds[p]), &targets[j]))?;
    let terms = targets
        .iter()
        .enumerate()
        .map(|(j, t)| g.soft_iou(preds[matched[j]], t, SOFT_IOU_EPS))
        .collect::<Result<Vec<_>>>()?;
    let total = g.add_all(&terms)?;
    Ok((g.scale(total, 1.0 / terms.len() as f64), matched))
}

/// Same as [`soft_iou_loss_node`] on plain soft masks.
pub fn soft_iou_loss(preds: &[Vec<f64>], gt: &[Mask], classes: &[EquivalenceClass]) -> Result<f64> {
    let mut g = Graph::new();
    let nodes = preds
        .iter()
        .map(|p| g.constant(&[p.len()], p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let (loss, _) = soft_iou_loss_node(&mut g, &nodes, gt, classes)?;
    Ok(g.scalar(loss))
}

/// Pose-loss terms, each already summed over parts and unweighted.
#[derive(Debug, Clone, Copy)]
pub struct PoseLossNodes {
    pub total: NodeId,
    pub translation: NodeId,
    pub chamfer: NodeId,
    pub l2_rotation: NodeId,
    pub shape: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseLossBreakdown {
    pub total: f64,
    pub translation: f64,
    pub chamfer: f64,
    pub l2_rotation: f64,
    pub shape: f64,
}

impl PoseLossNodes {
    pub fn values(&self, g: &Graph<'_>) -> PoseLossBreakdown {
        PoseLossBreakdown {
            total: g.scalar(self.total),
            translation: g.scalar(self.translation),
            chamfer: g.scalar(self.chamfer),
            l2_rotation: g.scalar(self.l2_rotation),
            shape: g.scalar(self.shape),
        }
    }
}

fn quat_of(values: &[f64]) -> Result<UnitQuaternion> {
    UnitQuaternion::from_array([values[0], values[1], values[2], values[3]])
}

/// Class-matched pose loss.
///
/// `translations[i]` (`[3]`) and `rotations[i]` (`[4]`, unit) are the
/// predicted pose of part `i`, whose canonical cloud is `clouds[i]`.
pub fn pose_loss_nodes(
    g: &mut Graph<'_>,
    translations: &[NodeId],
    rotations: &[NodeId],
    clouds: &[PointCloud],
    gt: &[PartPose],
    classes: &[EquivalenceClass],
    weights: &LossWeights,
) -> Result<(PoseLossNodes, Vec<usize>)> {
    let n = clouds.len();
    if translations.len() != n || rotations.len() != n || gt.len() != n || n == 0 {
        return Err(Error::shape(
            "pose_loss",
            format!("{} translations, {} rotations, {} clouds, {} poses", translations.len(), rotations.len(), n, gt.len()),
        ));
    }
    let pred_q = rotations.iter().map(|&r| quat_of(g.value(r))).collect::<Result<Vec<_>>>()?;
    let pred_t: Vec<[f64; 3]> = translations.iter().map(|&t| {
        let v = g.value(t);
        [v[0], v[1], v[2]]
    }).collect();

    let matched = match_within_classes(classes, |i, j| {
        let dt = (0..3).map(|d| (pred_t[i][d] - gt[j].translation[d]).powi(2)).sum::<f64>().sqrt();
        let a = clouds[i].rotated(&pred_q[i]);
        let b = clouds[i].rotated(&gt[j].rotation);
        weights.translation * dt + weights.chamfer * chamfer_sq(&a.points, &b.points)
    })?;

    let mut rotated = Vec::with_capacity(n);
    let mut assembled = Vec::with_capacity(n);
    for i in 0..n {
        let canon = g.constant(&[clouds[i].len(), 3], clouds[i].flat())?;
        let rot = g.rotate(rotations[i], canon)?;
        rotated.push(rot);
        assembled.push(g.translate(rot, translations[i])?);
    }
    let mut t_terms = Vec::with_capacity(n);
    let mut c_terms = Vec::with_capacity(n);
    let mut e_terms = Vec::with_capacity(n);
    for (j, pose) in gt.iter().enumerate() {
        let i = matched[j];
        let d = clouds[i].len();
        let target_t = g.constant(&[3], pose.translation.to_vec())?;
        let dt = g.sub(translations[i], target_t)?;
        t_terms.push(g.norm(dt));

        let gt_rot = g.constant(&[d, 3], clouds[i].rotated(&pose.rotation).flat())?;
        c_terms.push(g.chamfer_sq(rotated[i], gt_rot)?);
        let diff = g.sub(rotated[i], gt_rot)?;
        let sq = g.sum_sq(diff);
        e_terms.push(g.scale(sq, 1.0 / d as f64));
    }
    let pred_shape = g.concat_rows(&assembled)?;
    let gt_posed = clouds
        .iter()
        .zip(gt)
        .map(|(c, p)| apply_pose(c, p))
        .collect::<Result<Vec<_>>>()?;
    let gt_shape = PointCloud::union(&gt_posed);
    let gt_node = g.constant(&[gt_shape.len(), 3], gt_shape.flat())?;

    let translation = g.add_all(&t_terms)?;
    let chamfer = g.add_all(&c_terms)?;
    let l2_rotation = g.add_all(&e_terms)?;
    let shape = g.chamfer_sq(pred_shape, gt_node)?;
    let weighted = [
        g.scale(translation, weights.translation),
        g.scale(chamfer, weights.chamfer),
        g.scale(l2_rotation, weights.l2_rotation),
        g.scale(shape, weights.shape),
    ];
    let total = g.add_all(&weighted)?;
    Ok((
        PoseLossNodes {
            total,
            translation,
            chamfer,
            l2_rotation,
            shape,
        },
        matched,
    ))
}

/// Same as [`pose_loss_nodes`] on plain poses.
pub fn total_pose_loss(
    pred: &[PartPose],
    gt: &[PartPose],
    clouds: &[PointCloud],
    classes: &[EquivalenceClass],
    weights: &LossWeights,
) -> Result<PoseLossBreakdown> {
    let mut g = Graph::new();
    let mut ts = Vec::with_capacity(pred.len());
    let mut qs = Vec::with_capacity(pred.len());
    for p in pred {
        ts.push(g.constant(&[3], p.translation.to_vec())?);
        qs.push(g.constant(&[4], p.rotation.as_array().to_vec())?);
    }
    let (nodes, _) = pose_loss_nodes(&mut g, &ts, &qs, clouds, gt, classes, weights)?;
    Ok(nodes.values(&g))
}

/// Chamfer between the two rotated copies of one canonical cloud.
pub fn rotation_chamfer_loss(pred: &UnitQuaternion, gt: &UnitQuaternion, cloud: &PointCloud) -> f64 {
    chamfer_sq(&cloud.rotated(pred).points, &cloud.rotated(gt).points)
}

/// Mean squared point displacement between the two rotated copies.
pub fn rotation_l2_loss(pred: &UnitQuaternion, gt: &UnitQuaternion, cloud: &PointCloud) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let (a, b) = (cloud.rotated(pred), cloud.rotated(gt));
    let sum: f64 = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| (0..3).map(|d| (p[d] - q[d]).powi(2)).sum::<f64>())
        .sum();
    sum / cloud.len() as f64
}

/// Chamfer between full assemblies.
pub fn shape_loss(pred: &[PointCloud], gt: &[PointCloud]) -> f64 {
    chamfer_sq(&PointCloud::union(pred).points, &PointCloud::union(gt).points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mask;

    fn mask(side: usize, on: &[usize]) -> Mask {
        let mut m = Mask::empty(side);
        for &i in on {
            m.bits[i] = true;
        }
        m
    }

    fn singles(n: usize) -> Vec<EquivalenceClass> {
        (0..n).map(|i| EquivalenceClass { representative: i, members: vec![i] }).collect()
    }

    #[test]
    fn soft_iou_examples() {
        let gt = vec![mask(2, &[0, 1]), mask(2, &[3])];
        let perfect: Vec<Vec<f64>> = gt.iter().map(Mask::to_f64).collect();
        assert!((soft_iou_loss(&perfect, &gt, &singles(2)).unwrap() + 1.0).abs() < 1e-12);

        let disjoint = vec![vec![0.0, 0.0, 1.0, 1.0], vec![1.0, 1.0, 1.0, 0.0]];
        assert!(soft_iou_loss(&disjoint, &gt, &singles(2)).unwrap().abs() < 1e-6);

        let full = vec![mask(2, &[0, 1, 2, 3])];
        let half = vec![vec![0.5; 4]];
        // (2 + ε) / (4 + ε)
        assert!((soft_iou_loss(&half, &full, &singles(1)).unwrap() + 0.5).abs() < 1e-6);

        // Invisible part predicted empty scores perfectly.
        assert_eq!(soft_iou(&[0.0; 4], &[0.0; 4]), -1.0);
    }

    #[test]
    fn translation_term() {
        let cloud = vec![PointCloud::new(vec![[0.0; 3]])];
        let gt = [PartPose::IDENTITY];
        let pred = [PartPose::new(UnitQuaternion::IDENTITY, [3.0, 4.0, 0.0])];
        let out = total_pose_loss(&pred, &gt, &cloud, &singles(1), &LossWeights::default()).unwrap();
        assert!((out.translation - 5.0).abs() < 1e-12);
        assert!(out.chamfer.abs() < 1e-12 && out.l2_rotation.abs() < 1e-12);
    }

    #[test]
    fn shape_term_matches_brute_force() {
        let clouds = vec![PointCloud::new(vec![[0.0; 3]]), PointCloud::new(vec![[0.0; 3]])];
        let gt = [PartPose::IDENTITY, PartPose::new(UnitQuaternion::IDENTITY, [2.0, 0.0, 0.0])];
        let pred = [PartPose::IDENTITY, PartPose::new(UnitQuaternion::IDENTITY, [3.0, 0.0, 0.0])];
        let w = LossWeights { translation: 0.0, chamfer: 0.0, l2_rotation: 0.0, shape: 1.0 };
        let out = total_pose_loss(&pred, &gt, &clouds, &singles(2), &w).unwrap();
        // Pred {0, 3} vs GT {0, 2}: (0 + 1)/2 + (0 + 1)/2.
        assert!((out.shape - 1.0).abs() < 1e-12);
        assert!((out.total - 1.0).abs() < 1e-12);
    }
}
