//! Orthographic z-buffer splatting of posed parts into instance masks.
//!
//! The camera looks down −z, so larger z is closer. Pixel (row, col) covers
//! x ∈ [-h, h] left to right and y ∈ [h, -h] top to bottom, where `h` is the
//! view half-extent. Each point stamps a 3×3 pixel block.

use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use super::quat::{mat_mul, rot_x, rot_y, Mat3};

/// Fixed orthographic camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// Half the side length of the square view window, in scene units.
    pub half_extent: f64,
}

impl Camera {
    /// Object-to-camera rotation: azimuth about +y, then elevation about +x.
    pub fn rotation(&self) -> Mat3 {
        mat_mul(&rot_x(self.elevation_deg.to_radians()), &rot_y(self.azimuth_deg.to_radians()))
    }
}

/// Square binary grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub side: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(side: usize) -> Self {
        Self {
            side,
            bits: vec![false; side * side],
        }
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Square real-valued grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub side: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rasterization {
    pub masks: Vec<Mask>,
    pub background: Mask,
    /// Near-depth in (0, 1] on covered pixels, 0 on background.
    pub depth: Grid,
}

const SPLAT_RADIUS: isize = 1;

pub fn pixel_of(x: f64, y: f64, side: usize, half_extent: f64) -> Option<(usize, usize)> {
    let u = (x + half_extent) / (2.0 * half_extent) * side as f64;
    let v = (half_extent - y) / (2.0 * half_extent) * side as f64;
    if !(u.is_finite() && v.is_finite()) || u < 0.0 || v < 0.0 {
        return None;
    }
    let (col, row) = (u.floor() as usize, v.floor() as usize);
    (col < side && row < side).then_some((row, col))
}

/// Z-buffers camera-space parts onto a `side × side` grid.
pub fn rasterize_masks(parts: &[PointCloud], side: usize, half_extent: f64) -> Rasterization {
    let cells = side * side;
    let mut zbuf = vec![f64::NEG_INFINITY; cells];
    let mut owner: Vec<Option<usize>> = vec![None; cells];
    for (part, cloud) in parts.iter().enumerate() {
        for p in &cloud.points {
            let Some((row, col)) = pixel_of(p[0], p[1], side, half_extent) else {
                continue;
            };
            for dr in -SPLAT_RADIUS..=SPLAT_RADIUS {
                for dc in -SPLAT_RADIUS..=SPLAT_RADIUS {
                    let (r, c) = (row as isize + dr, col as isize + dc);
                    if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
                        continue;
                    }
                    let cell = r as usize * side + c as usize;
                    if p[2] > zbuf[cell] {
                        zbuf[cell] = p[2];
                        owner[cell] = Some(part);
                    }
                }
            }
        }
    }
    let mut masks = vec![Mask::empty(side); parts.len()];
    let mut background = Mask::empty(side);
    let mut depth = vec![0.0; cells];
    for cell in 0..cells {
        match owner[cell] {
            Some(part) => {
                masks[part].bits[cell] = true;
                let near = ((zbuf[cell] + half_extent) / (2.0 * half_extent)).clamp(0.0, 1.0);
                depth[cell] = 0.1 + 0.9 * near;
            }
            None => background.bits[cell] = true,
        }
    }
    Rasterization {
        masks,
        background,
        depth: Grid { side, values: depth },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plate(x0: f64, x1: f64, y0: f64, y1: f64, z: f64, steps: usize) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..=steps {
            for j in 0..=steps {
                let x = x0 + (x1 - x0) * i as f64 / steps as f64;
                let y = y0 + (y1 - y0) * j as f64 / steps as f64;
                pts.push([x, y, z]);
            }
        }
        PointCloud::new(pts)
    }

    fn assert_partition(r: &Rasterization, side: usize) {
        for cell in 0..side * side {
            let count = r.masks.iter().filter(|m| m.bits[cell]).count() + usize::from(r.background.bits[cell]);
            assert_eq!(count, 1, "cell {cell}");
        }
    }

    #[test]
    fn single_part_filling_the_view() {
        let r = rasterize_masks(&[plate(-0.7, 0.7, -0.7, 0.7, 0.0, 80)], 16, 1.0);
        assert_partition(&r, 16);
        assert!(r.masks[0].area() > 0);
        // Only the outermost ring stays background.
        for row in 0..16 {
            for col in 0..16 {
                let border = row == 0 || col == 0 || row == 15 || col == 15;
                assert_eq!(r.background.bits[row * 16 + col], border, "({row}, {col})");
            }
        }
    }

    #[test]
    fn occluded_part_has_an_empty_mask() {
        let front = plate(-0.5, 0.5, -0.5, 0.5, 0.5, 40);
        let back = plate(-0.3, 0.3, -0.3, 0.3, -0.5, 30);
        let r = rasterize_masks(&[back, front], 32, 1.0);
        assert!(r.masks[0].is_empty());
        assert!(!r.masks[1].is_empty());
        assert_partition(&r, 32);
    }

    #[test]
    fn side_by_side_parts_partition_the_grid() {
        let left = plate(-0.9, -0.2, -0.5, 0.5, 0.0, 30);
        let right = plate(0.2, 0.9, -0.5, 0.5, 0.0, 30);
        let r = rasterize_masks(&[left, right], 32, 1.0);
        assert_partition(&r, 32);
        assert!(r.masks[0].bits.iter().zip(&r.masks[1].bits).all(|(a, b)| !(a & b)));
        let total = r.masks.iter().map(Mask::area).sum::<usize>() + r.background.area();
        assert_eq!(total, 32 * 32);
    }

    #[test]
    fn empty_view_is_all_background() {
        let r = rasterize_masks(&[plate(5.0, 6.0, 5.0, 6.0, 0.0, 5)], 8, 1.0);
        assert_eq!(r.background.area(), 64);
        assert!(r.depth.values.iter().all(|&v| v == 0.0));
        let r = rasterize_masks(&[], 8, 1.0);
        assert_eq!(r.background.area(), 64);
    }
}
