//! Binary blobs for clouds, masks and depth grids (little-endian).
//!
//! ```text
//! cloud  u64 count, then count × (f64 x, f64 y, f64 z)
//! mask   u32 rows, u32 cols, then rows·cols bits, row-major, LSB first
//! grid   u32 rows, u32 cols, then rows·cols f64
//! ```

use super::cloud::PointCloud;
use super::raster::{Grid, Mask};
use crate::error::{Error, Result};

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.len() * 24);
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for v in cloud.points.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let head: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::format("cloud blob", "truncated header"))?;
    let count = u64::from_le_bytes(head) as usize;
    let body = &bytes[8..];
    if count.checked_mul(24) != Some(body.len()) {
        return Err(Error::format("cloud blob", format!("{count} points need {} bytes, found {}", count * 24, body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let cloud = PointCloud::from_flat(&values)?;
    if !cloud.all_finite() {
        return Err(Error::format("cloud blob", "non-finite coordinate"));
    }
    Ok(cloud)
}

fn dims_header(side: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(side as u32).to_le_bytes());
    out.extend_from_slice(&(side as u32).to_le_bytes());
    out
}

fn read_dims(bytes: &[u8], what: &'static str) -> Result<usize> {
    if bytes.len() < 8 {
        return Err(Error::format(what, "truncated header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if rows != cols {
        return Err(Error::format(what, format!("expected a square grid, got {rows}×{cols}")));
    }
    Ok(rows)
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = dims_header(mask.side);
    let mut packed = vec![0u8; mask.bits.len().div_ceil(8)];
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        packed[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&packed);
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let side = read_dims(bytes, "mask blob")?;
    let cells = side * side;
    let body = &bytes[8..];
    if body.len() != cells.div_ceil(8) {
        return Err(Error::format("mask blob", format!("{cells} cells need {} bytes, found {}", cells.div_ceil(8), body.len())));
    }
    let bits = (0..cells).map(|i| body[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok(Mask { side, bits })
}

pub fn encode_grid(grid: &Grid) -> Vec<u8> {
    let mut out = dims_header(grid.side);
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    let side = read_dims(bytes, "grid blob")?;
    let body = &bytes[8..];
    if body.len() != side * side * 8 {
        return Err(Error::format("grid blob", format!("{side}×{side} grid needs {} bytes, found {}", side * side * 8, body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("grid blob", "non-finite value"));
    }
    Ok(Grid { side, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_round_trip() {
        let cloud = PointCloud::new(vec![[0.1, -2.0, 3.5], [f64::MIN_POSITIVE, 0.0, -0.0]]);
        assert_eq!(decode_cloud(&encode_cloud(&cloud)).unwrap(), cloud);

        let mut mask = Mask::empty(5);
        for i in [0, 3, 7, 8, 24] {
            mask.bits[i] = true;
        }
        let bytes = encode_mask(&mask);
        assert_eq!(bytes.len(), 8 + 4);
        assert_eq!(decode_mask(&bytes).unwrap(), mask);

        let grid = Grid { side: 2, values: vec![0.0, 0.25, 1.0, 0.1] };
        assert_eq!(decode_grid(&encode_grid(&grid)).unwrap(), grid);
    }

    #[test]
    fn truncated_blobs_are_rejected() {
        let cloud = encode_cloud(&PointCloud::new(vec![[1.0; 3]]));
        assert!(decode_cloud(&cloud[..cloud.len() - 1]).is_err());
        assert!(decode_cloud(&[]).is_err());
        let mask = encode_mask(&Mask::empty(4));
        assert!(decode_mask(&mask[..9]).is_err());
        assert!(decode_grid(&[1, 0, 0, 0, 2, 0, 0, 0]).is_err());
    }
}
