use rand::Rng;

use super::NetConfig;
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::parts::MAX_PARTS;

/// Fully connected layer `y = W x + b`, applied row-wise to matrices.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            weight: store.add_uniform(&format!("{name}.weight"), &[outputs, inputs], inputs, rng)?,
            bias: store.add_uniform(&format!("{name}.bias"), &[outputs], inputs, rng)?,
            inputs,
            outputs,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(x, w, b)
    }

    pub fn forward_relu(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let y = self.forward(g, x)?;
        Ok(g.relu(y))
    }
}

/// Flattens a square grid into non-overlapping patches, embeds every patch
/// with one shared layer, then maps the concatenated embeddings to a vector.
#[derive(Debug, Clone, Copy)]
pub struct GridEncoder {
    patch_embed: Dense,
    project: Dense,
    side: usize,
    patch: usize,
}

impl GridEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &NetConfig, width: usize, rng: &mut R) -> Result<Self> {
        let patches = (cfg.grid / cfg.patch).pow(2);
        Ok(Self {
            patch_embed: Dense::new(store, &format!("{name}.patch"), cfg.patch * cfg.patch, cfg.patch_width, rng)?,
            project: Dense::new(store, &format!("{name}.project"), patches * cfg.patch_width, width, rng)?,
            side: cfg.grid,
            patch: cfg.patch,
        })
    }

    pub fn width(&self) -> usize {
        self.project.outputs
    }

    /// Row-major patches of row-major pixels.
    fn patches(&self, grid: &[f64], out: &mut Vec<f64>) {
        let per_side = self.side / self.patch;
        for pr in 0..per_side {
            for pc in 0..per_side {
                for r in 0..self.patch {
                    let row = pr * self.patch + r;
                    let start = row * self.side + pc * self.patch;
                    out.extend_from_slice(&grid[start..start + self.patch]);
                }
            }
        }
    }

    /// Encodes a batch of grids into a `[batch, width]` matrix.
    pub fn encode(&self, g: &mut Graph<'_>, grids: &[&[f64]]) -> Result<NodeId> {
        let cells = self.side * self.side;
        if grids.is_empty() {
            return Err(Error::invalid("grid encoder needs at least one grid"));
        }
        let mut flat = Vec::with_capacity(grids.len() * cells);
        for grid in grids {
            if grid.len() != cells {
                return Err(Error::shape("grid encoder", format!("grid of {} cells, expected {cells}", grid.len())));
            }
            self.patches(grid, &mut flat);
        }
        let per_grid = cells / (self.patch * self.patch);
        let x = g.constant(&[grids.len() * per_grid, self.patch * self.patch], flat)?;
        let embedded = self.patch_embed.forward_relu(g, x)?;
        let joined = g.reshape(embedded, &[grids.len(), per_grid * self.patch_embed.outputs])?;
        self.project.forward_relu(g, joined)
    }
}

/// Context-aware part features: PointNet geometry, instance one-hot and a
/// max-pooled shape context.
#[derive(Debug, Clone, Copy)]
pub struct PartEncoder {
    point1: Dense,
    point2: Dense,
    local: Dense,
    global: Dense,
}

#[derive(Debug, Clone)]
pub struct PartFeatures {
    /// `f_geo` per part, `[feature]` each.
    pub geometry: Vec<NodeId>,
    /// `[parts, feature]`.
    pub local: NodeId,
    /// `[feature]`, shared by every part.
    pub global: NodeId,
    /// `[parts, 2·feature]`, `[f_local; f_global]` per row.
    pub f3d: NodeId,
}

impl PartEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            point1: Dense::new(store, &format!("{name}.point1"), 3, cfg.point_hidden, rng)?,
            point2: Dense::new(store, &format!("{name}.point2"), cfg.point_hidden, cfg.feature, rng)?,
            local: Dense::new(store, &format!("{name}.local"), cfg.feature + MAX_PARTS, cfg.feature, rng)?,
            global: Dense::new(store, &format!("{name}.global"), cfg.feature, cfg.feature, rng)?,
        })
    }

    /// Shared per-point layers followed by a channel-wise max over points.
    pub fn pointnet(&self, g: &mut Graph<'_>, cloud: &PointCloud) -> Result<NodeId> {
        if cloud.is_empty() {
            return Err(Error::invalid("cannot encode an empty point cloud"));
        }
        let x = g.constant(&[cloud.len(), 3], cloud.flat())?;
        let h = self.point1.forward_relu(g, x)?;
        let h = self.point2.forward_relu(g, h)?;
        g.max_rows(h)
    }

    /// `drop_global` replaces `f_global` with zeros.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        clouds: &[&PointCloud],
        onehots: &[Vec<f64>],
        drop_global: bool,
    ) -> Result<PartFeatures> {
        let n = clouds.len();
        if n == 0 || onehots.len() != n {
            return Err(Error::shape("part encoder", format!("{n} clouds, {} one-hots", onehots.len())));
        }
        let geometry = clouds.iter().map(|c| self.pointnet(g, c)).collect::<Result<Vec<_>>>()?;
        let stacked = g.concat_rows(&geometry)?;
        let hot = g.constant(&[n, MAX_PARTS], onehots.concat())?;
        let joined = g.concat_cols(&[stacked, hot])?;
        let local = self.local.forward_relu(g, joined)?;
        let global = if drop_global {
            g.constant(&[self.global.outputs], vec![0.0; self.global.outputs])?
        } else {
            let pooled = g.max_rows(local)?;
            self.global.forward_relu(g, pooled)?
        };
        let tiled = g.tile_rows(global, n)?;
        let f3d = g.concat_cols(&[local, tiled])?;
        Ok(PartFeatures {
            geometry,
            local,
            global,
            f3d,
        })
    }
}
