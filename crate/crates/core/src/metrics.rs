//! Evaluation metrics on plain poses.

use serde::{Deserialize, Serialize};

use crate::assignment::match_within_classes;
use crate::error::{Error, Result};
use crate::geometry::{apply_pose, chamfer_l1, chamfer_sq, PartPose, PointCloud};
use crate::parts::EquivalenceClass;

pub const PART_ACCURACY_THRESHOLD: f64 = 0.1;

/// Which Chamfer form decides whether a posed part is close enough.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferForm {
    #[default]
    Squared,
    L1,
}

impl ChamferForm {
    pub fn eval(self, a: &PointCloud, b: &PointCloud) -> f64 {
        match self {
            ChamferForm::Squared => chamfer_sq(&a.points, &b.points),
            ChamferForm::L1 => chamfer_l1(&a.points, &b.points),
        }
    }
}

impl std::str::FromStr for ChamferForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(ChamferForm::Squared),
            "l1" => Ok(ChamferForm::L1),
            other => Err(Error::invalid(format!("unknown chamfer form '{other}'"))),
        }
    }
}

/// Part-accuracy counts for one shape or pooled over many.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartAccuracy {
    pub correct: usize,
    pub total: usize,
    pub visible_correct: usize,
    pub visible_total: usize,
    pub invisible_correct: usize,
    pub invisible_total: usize,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

impl PartAccuracy {
    pub fn fraction(&self) -> f64 {
        ratio(self.correct, self.total).unwrap_or(0.0)
    }

    pub fn visible_fraction(&self) -> Option<f64> {
        ratio(self.visible_correct, self.visible_total)
    }

    pub fn invisible_fraction(&self) -> Option<f64> {
        ratio(self.invisible_correct, self.invisible_total)
    }

    pub fn merge(&mut self, other: &PartAccuracy) {
        self.correct += other.correct;
        self.total += other.total;
        self.visible_correct += other.visible_correct;
        self.visible_total += other.visible_total;
        self.invisible_correct += other.invisible_correct;
        self.invisible_total += other.invisible_total;
    }
}

fn posed(clouds: &[PointCloud], poses: &[PartPose]) -> Result<Vec<PointCloud>> {
    clouds.iter().zip(poses).map(|(c, p)| apply_pose(c, p)).collect()
}

/// Fraction of parts whose posed cloud lies within `tau` of its class-matched
/// ground truth. `visible[j]` tags ground-truth part `j`.
pub fn part_accuracy(
    pred: &[PartPose],
    gt: &[PartPose],
    clouds: &[PointCloud],
    classes: &[EquivalenceClass],
    visible: &[bool],
    tau: f64,
    form: ChamferForm,
) -> Result<PartAccuracy> {
    let n = clouds.len();
    if pred.len() != n || gt.len() != n || visible.len() != n {
        return Err(Error::shape(
            "part_accuracy",
            format!("{} predictions, {} poses, {n} clouds, {} visibility flags", pred.len(), gt.len(), visible.len()),
        ));
    }
    let pred_posed = posed(clouds, pred)?;
    let gt_posed = posed(clouds, gt)?;
    let mut dist = vec![f64::NAN; n * n];
    let matched = match_within_classes(classes, |i, j| {
        let d = form.eval(&pred_posed[i], &gt_posed[j]);
        dist[i * n + j] = d;
        d
    })?;
    let mut acc = PartAccuracy::default();
    for (j, &i) in matched.iter().enumerate() {
        let d = if dist[i * n + j].is_nan() { form.eval(&pred_posed[i], &gt_posed[j]) } else { dist[i * n + j] };
        let ok = d < tau;
        acc.total += 1;
        acc.correct += usize::from(ok);
        if visible[j] {
            acc.visible_total += 1;
            acc.visible_correct += usize::from(ok);
        } else {
            acc.invisible_total += 1;
            acc.invisible_correct += usize::from(ok);
        }
    }
    Ok(acc)
}

/// Unsquared Chamfer between the predicted and ground-truth assemblies.
pub fn shape_chamfer(pred: &[PartPose], gt: &[PartPose], clouds: &[PointCloud]) -> Result<f64> {
    let a = PointCloud::union(&posed(clouds, pred)?);
    let b = PointCloud::union(&posed(clouds, gt)?);
    Ok(chamfer_l1(&a.points, &b.points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuaternion;

    fn singles(n: usize) -> Vec<EquivalenceClass> {
        (0..n).map(|i| EquivalenceClass { representative: i, members: vec![i] }).collect()
    }

    fn bar() -> PointCloud {
        PointCloud::new((0..10).map(|i| [i as f64 * 0.05, 0.0, 0.0]).collect())
    }

    #[test]
    fn accuracy_examples() {
        let clouds = vec![bar(), bar()];
        let gt = vec![PartPose::IDENTITY, PartPose::new(UnitQuaternion::IDENTITY, [0.0, 1.0, 0.0])];
        let vis = [true, false];
        let perfect = part_accuracy(&gt, &gt, &clouds, &singles(2), &vis, 0.1, ChamferForm::Squared).unwrap();
        assert_eq!(perfect.fraction(), 1.0);
        assert_eq!(perfect.visible_fraction(), Some(1.0));
        assert_eq!(perfect.invisible_fraction(), Some(1.0));

        let far: Vec<PartPose> =
            gt.iter().map(|p| PartPose::new(p.rotation, [p.translation[0] + 10.0, p.translation[1], 0.0])).collect();
        assert_eq!(part_accuracy(&far, &gt, &clouds, &singles(2), &vis, 0.1, ChamferForm::Squared).unwrap().fraction(), 0.0);

        let half = vec![gt[0], far[1]];
        let acc = part_accuracy(&half, &gt, &clouds, &singles(2), &vis, 0.1, ChamferForm::Squared).unwrap();
        assert_eq!(acc.fraction(), 0.5);
        assert_eq!(acc.invisible_fraction(), Some(0.0));
    }

    #[test]
    fn shape_chamfer_examples() {
        let clouds = vec![PointCloud::new(vec![[0.0; 3]]), PointCloud::new(vec![[0.0; 3]])];
        let gt = vec![PartPose::IDENTITY, PartPose::new(UnitQuaternion::IDENTITY, [2.0, 0.0, 0.0])];
        assert_eq!(shape_chamfer(&gt, &gt, &clouds).unwrap(), 0.0);
        let pred = vec![PartPose::IDENTITY, PartPose::new(UnitQuaternion::IDENTITY, [3.0, 0.0, 0.0])];
        // {0, 3} vs {0, 2}: (0 + 1)/2 + (0 + 1)/2.
        assert!((shape_chamfer(&pred, &gt, &clouds).unwrap() - 1.0).abs() < 1e-12);
    }
}
