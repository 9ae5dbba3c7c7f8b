//! Part-instance mask prediction conditioned on per-part 3-D features.
//!
//! Every part channel decodes `[f_2d; f_3d]` into a logit grid, a background
//! channel decodes `f_2d` alone, and a per-pixel softmax across all channels
//! makes the masks disjoint.

use rand::Rng;

use super::layers::{Dense, GridEncoder, PartEncoder, PartFeatures};
use super::NetConfig;
use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::error::Result;
use crate::geometry::PointCloud;

#[derive(Debug, Clone)]
pub struct SegNet {
    pub config: NetConfig,
    pub parts: PartEncoder,
    image: GridEncoder,
    part_hidden: Dense,
    part_out: Dense,
    background_hidden: Dense,
    background_out: Dense,
}

#[derive(Debug, Clone)]
pub struct SegOutput {
    /// `[parts + 1, grid²]`; row 0 is the background.
    pub probabilities: NodeId,
    pub background: NodeId,
    /// Soft mask per part, `[grid²]` each.
    pub masks: Vec<NodeId>,
    pub features: Option<PartFeatures>,
    pub image_feature: NodeId,
}

impl SegNet {
    pub const PREFIX: &'static str = "seg";

    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let cells = cfg.grid * cfg.grid;
        let p = Self::PREFIX;
        Ok(Self {
            config: *cfg,
            parts: PartEncoder::new(store, &format!("{p}.f3d"), cfg, rng)?,
            image: GridEncoder::new(store, &format!("{p}.image"), cfg, cfg.image_width, rng)?,
            part_hidden: Dense::new(store, &format!("{p}.part.hidden"), cfg.image_width + cfg.f3d_width(), cfg.mask_decoder_hidden, rng)?,
            part_out: Dense::new(store, &format!("{p}.part.out"), cfg.mask_decoder_hidden, cells, rng)?,
            background_hidden: Dense::new(store, &format!("{p}.background.hidden"), cfg.image_width, cfg.mask_decoder_hidden, rng)?,
            background_out: Dense::new(store, &format!("{p}.background.out"), cfg.mask_decoder_hidden, cells, rng)?,
        })
    }

    /// Soft masks for every part plus the background. With no parts the
    /// background is the whole grid.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        depth: &[f64],
        clouds: &[&PointCloud],
        onehots: &[Vec<f64>],
        drop_global: bool,
    ) -> Result<SegOutput> {
        let f2d_row = self.image.encode(g, &[depth])?;
        let f2d = g.reshape(f2d_row, &[self.image.width()])?;
        let bg_hidden = self.background_hidden.forward_relu(g, f2d)?;
        let bg_logits = self.background_out.forward(g, bg_hidden)?;

        let (features, stacked) = if clouds.is_empty() {
            (None, g.concat_rows(&[bg_logits])?)
        } else {
            let features = self.parts.encode(g, clouds, onehots, drop_global)?;
            let image = g.tile_rows(f2d, clouds.len())?;
            let joined = g.concat_cols(&[image, features.f3d])?;
            let hidden = self.part_hidden.forward_relu(g, joined)?;
            let logits = self.part_out.forward(g, hidden)?;
            (Some(features), g.concat_rows(&[bg_logits, logits])?)
        };
        let probabilities = g.softmax_cols(stacked)?;
        let background = g.row(probabilities, 0)?;
        let masks = (1..=clouds.len()).map(|i| g.row(probabilities, i)).collect::<Result<Vec<_>>>()?;
        Ok(SegOutput {
            probabilities,
            background,
            masks,
            features,
            image_feature: f2d,
        })
    }
}

/// Hard masks by per-pixel argmax over the channels; ties go to the
/// background, then to the lower part index.
pub fn argmax_masks(g: &Graph<'_>, out: &SegOutput) -> Vec<Vec<f64>> {
    let cells = g.value(out.background).len();
    let channels: Vec<&[f64]> = std::iter::once(out.background)
        .chain(out.masks.iter().copied())
        .map(|id| g.value(id))
        .collect();
    let mut hard = vec![vec![0.0; cells]; out.masks.len()];
    for cell in 0..cells {
        let mut best = 0;
        for (c, channel) in channels.iter().enumerate().skip(1) {
            if channel[cell] > channels[best][cell] {
                best = c;
            }
        }
        if best > 0 {
            hard[best - 1][cell] = 1.0;
        }
    }
    hard
}
