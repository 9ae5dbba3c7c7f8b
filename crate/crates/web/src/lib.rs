//! Browser bindings for three interactive views: a generated shape, the two
//! rotation losses on a symmetric part, and metrics under pose noise.
//!
//! Everything below the `wasm_bindgen` layer is plain Rust and is tested
//! natively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use partsmith::datagen::{generate_shape, SyntheticSpec, Template};
use partsmith::eval::score_shape;
use partsmith::export::posed;
use partsmith::geometry::quat::{mat_mul, mat_vec, rot_x, rot_y};
use partsmith::geometry::{PartPose, UnitQuaternion};
use partsmith::losses::{rotation_chamfer_loss, rotation_l2_loss};
use partsmith::metrics::{ChamferForm, PART_ACCURACY_THRESHOLD};
use partsmith::parts::ShapeRecord;
use partsmith::verify::symmetric_cylinder;

fn js_error(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// One generated shape plus a working copy of its poses.
#[wasm_bindgen]
pub struct Scene {
    record: ShapeRecord,
    poses: Vec<PartPose>,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(template: &str, seed: u32) -> Result<Scene, JsValue> {
        let template: Template = template.parse().map_err(js_error)?;
        let spec = SyntheticSpec {
            points_per_part: 160,
            ..SyntheticSpec::default()
        };
        let record = generate_shape(&spec, template, u64::from(seed)).map_err(js_error)?;
        Ok(Scene {
            poses: record.poses.clone(),
            record,
        })
    }

    pub fn id(&self) -> String {
        self.record.id.clone()
    }

    #[wasm_bindgen(js_name = partCount)]
    pub fn part_count(&self) -> usize {
        self.record.num_parts()
    }

    /// 1 for parts seen in the image, 0 for fully occluded ones.
    pub fn visibility(&self) -> Vec<u8> {
        self.record.visible().into_iter().map(u8::from).collect()
    }

    #[wasm_bindgen(js_name = gridSide)]
    pub fn grid_side(&self) -> usize {
        self.record.depth.side
    }

    /// Row-major depth image; empty pixels hold the background value.
    pub fn depth(&self) -> Vec<f64> {
        self.record.depth.values.clone()
    }

    /// Per pixel, the index of the part covering it plus one; 0 for
    /// background.
    pub fn labels(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.record.depth.values.len()];
        for (k, mask) in self.record.masks.iter().enumerate() {
            for (cell, &on) in mask.bits.iter().enumerate() {
                if on {
                    out[cell] = (k + 1) as u8;
                }
            }
        }
        out
    }

    /// Current assembly seen from an orbiting viewpoint, as flat
    /// `[x, y, depth, part]` quadruples in view units; larger depth is closer.
    pub fn view(&self, yaw_deg: f64, pitch_deg: f64) -> Result<Vec<f64>, JsValue> {
        let orbit = mat_mul(&rot_x(pitch_deg.to_radians()), &rot_y(yaw_deg.to_radians()));
        let scale = 1.0 / self.record.camera.half_extent;
        let clouds = posed(&self.record, &self.poses).map_err(js_error)?;
        let mut out = Vec::with_capacity(clouds.iter().map(|c| c.len() * 4).sum());
        for (k, cloud) in clouds.iter().enumerate() {
            for p in &cloud.points {
                let v = mat_vec(&orbit, p);
                out.extend_from_slice(&[v[0] * scale, v[1] * scale, v[2] * scale, k as f64]);
            }
        }
        Ok(out)
    }

    /// Replaces the working poses with ground truth plus uniform noise:
    /// translations up to `translation` per axis, rotations
    /// about a random axis by up to `rotation_deg`. Returns
    /// `[part accuracy, visible accuracy, invisible accuracy, shape chamfer]`;
    /// an accuracy with no parts in its group is NaN.
    pub fn perturb(&mut self, translation: f64, rotation_deg: f64, seed: u32) -> Result<Vec<f64>, JsValue> {
        self.poses = perturbed(&self.record.poses, translation, rotation_deg, u64::from(seed));
        let s = score_shape(&self.record, &self.poses, PART_ACCURACY_THRESHOLD, ChamferForm::Squared).map_err(js_error)?;
        let a = &s.accuracy;
        Ok(vec![
            a.fraction(),
            a.visible_fraction().unwrap_or(f64::NAN),
            a.invisible_fraction().unwrap_or(f64::NAN),
            s.shape_chamfer,
        ])
    }
}

pub fn perturbed(poses: &[PartPose], translation: f64, rotation_deg: f64, seed: u64) -> Vec<PartPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poses
        .iter()
        .map(|p| {
            let mut t = p.translation;
            for v in &mut t {
                *v += translation * rng.gen_range(-1.0..=1.0);
            }
            let axis = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let angle = rotation_deg.to_radians() * rng.gen_range(-1.0..=1.0);
            let nudge = UnitQuaternion::from_axis_angle(axis, angle).unwrap_or(UnitQuaternion::IDENTITY);
            PartPose::new(p.rotation.compose(&nudge), t)
        })
        .collect()
}

/// `[chamfer rotation loss, point-wise L2 rotation loss]` for a cylinder
/// rotated by `angle_deg` about its own axis or about a
/// perpendicular axis. The cylinder is sampled in rings of 12 points.
#[wasm_bindgen(js_name = rotationLosses)]
pub fn rotation_losses(angle_deg: f64, about_own_axis: bool) -> Vec<f64> {
    let part = symmetric_cylinder(11, 0.15, 1.0);
    let r = if about_own_axis { rot_x(angle_deg.to_radians()) } else { rot_y(angle_deg.to_radians()) };
    let pred = UnitQuaternion::from_matrix(&r).unwrap_or(UnitQuaternion::IDENTITY);
    let gt = UnitQuaternion::IDENTITY;
    vec![rotation_chamfer_loss(&pred, &gt, &part), rotation_l2_loss(&pred, &gt, &part)]
}

/// The cylinder itself, as flat `[x, y, z]` triples, for drawing.
#[wasm_bindgen(js_name = cylinderPoints)]
pub fn cylinder_points(angle_deg: f64, about_own_axis: bool) -> Vec<f64> {
    let part = symmetric_cylinder(11, 0.15, 1.0);
    let r = if about_own_axis { rot_x(angle_deg.to_radians()) } else { rot_y(angle_deg.to_radians()) };
    part.points.iter().flat_map(|p| mat_vec(&r, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unperturbed_scene_scores_perfectly() {
        let mut scene = Scene::new("chair", 3).unwrap();
        let m = scene.perturb(0.0, 0.0, 1).unwrap();
        assert_eq!((m[0], m[3]), (1.0, 0.0));
        let heavy = scene.perturb(0.5, 90.0, 1).unwrap();
        assert!(heavy[0] < 1.0 && heavy[3] > 0.0);
        assert_eq!(scene.view(30.0, 10.0).unwrap().len() % 4, 0);
        assert_eq!(scene.labels().len(), scene.grid_side().pow(2));
    }

    #[test]
    fn rotation_losses_separate_symmetric_errors() {
        let own = rotation_losses(90.0, true);
        assert!(own[0] < 1e-12 && own[1] > 0.01);
        let cross = rotation_losses(90.0, false);
        assert!(cross[0] > 0.01);
    }
}
