//! Point clouds, rigid poses and the projections used to build ground truth.

pub mod chamfer;
pub mod cloud;
pub mod fps;
pub mod io;
pub mod pca;
pub mod quat;
pub mod raster;

pub use chamfer::{chamfer_l1, chamfer_sq};
pub use cloud::{apply_pose, normalize_global_scale, Aabb, PointCloud};
pub use fps::{fps, fps_indices};
pub use pca::{pca_canonicalize, CanonicalFrame};
pub use quat::{Mat3, PartPose, UnitQuaternion, Vec3};
pub use raster::{rasterize_masks, Camera, Grid, Mask, Rasterization};

/// Sum that does not depend on the order of its terms, so permuting a set
/// leaves pooled values bit-identical.
pub(crate) fn order_free_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut terms: Vec<f64> = terms.collect();
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}
