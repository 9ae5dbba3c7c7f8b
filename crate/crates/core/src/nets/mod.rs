//! Mask-grounding and pose networks at toy scale.

mod layers;
pub mod posenet;
pub mod segnet;

pub use layers::{Dense, GridEncoder, PartEncoder, PartFeatures};
pub use posenet::{build_knn_edges, build_within_class_edges, nearest_neighbours, PhaseOutput, PoseNet, PoseOutput, PoseSwitches};
pub use segnet::{SegNet, SegOutput};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths shared by both networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Side length of the square input and mask grids.
    pub grid: usize,
    /// Side length of the square patches the grid encoders flatten.
    pub patch: usize,
    pub patch_width: usize,
    pub point_hidden: usize,
    /// Width of `f_geo`, `f_local` and `f_global`.
    pub feature: usize,
    pub image_width: usize,
    pub mask_width: usize,
    pub mask_decoder_hidden: usize,
    pub pose_hidden: usize,
    pub k_neighbors: usize,
    /// One message layer per phase instead of one per iteration.
    pub share_message_weights: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            patch: 4,
            patch_width: 8,
            point_hidden: 32,
            feature: 64,
            image_width: 64,
            mask_width: 32,
            mask_decoder_hidden: 128,
            pose_hidden: 128,
            k_neighbors: 5,
            share_message_weights: false,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.grid,
            self.patch,
            self.patch_width,
            self.point_hidden,
            self.feature,
            self.image_width,
            self.mask_width,
            self.mask_decoder_hidden,
            self.pose_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::invalid("network widths must be positive"));
        }
        if !self.grid.is_multiple_of(self.patch) {
            return Err(Error::invalid(format!("patch {} does not divide grid {}", self.patch, self.grid)));
        }
        Ok(())
    }

    /// Width of `f_3d = [f_local; f_global]`.
    pub fn f3d_width(&self) -> usize {
        2 * self.feature
    }

    /// Width of a pose-net node feature `f⁰ = [f_img; f_mask; f_3d]`.
    pub fn node_width(&self) -> usize {
        self.image_width + self.mask_width + self.f3d_width()
    }
}
