//! ASCII point export: one `x y z part_index` line per point.
//!
//! Coordinates are written in shortest round-trip form, so reading a file
//! back gives the exact values that were written.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{apply_pose, PartPose, PointCloud, Vec3};
use crate::parts::ShapeRecord;

pub const GT_ASSEMBLY_FILE: &str = "gt_assembly.xyz";
pub const PRED_ASSEMBLY_FILE: &str = "pred_assembly.xyz";

fn push_part(out: &mut String, cloud: &PointCloud, index: usize) {
    for p in &cloud.points {
        out.push_str(&format!("{:?} {:?} {:?} {index}\n", p[0], p[1], p[2]));
    }
}

pub fn format_points(parts: &[PointCloud]) -> String {
    let mut out = String::new();
    for (k, cloud) in parts.iter().enumerate() {
        push_part(&mut out, cloud, k);
    }
    out
}

/// Inverse of [`format_points`]; part indices must be contiguous from 0.
pub fn parse_points(text: &str) -> Result<Vec<PointCloud>> {
    let mut grouped: Vec<Vec<Vec3>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format("point file", format!("line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad("expected x y z part_index"));
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields[..3]) {
            *slot = f.parse().map_err(|_| bad("bad coordinate"))?;
        }
        let k: usize = fields[3].parse().map_err(|_| bad("bad part index"))?;
        if k > grouped.len() {
            return Err(bad("part indices skip a value"));
        }
        if k == grouped.len() {
            grouped.push(Vec::new());
        }
        grouped[k].push(p);
    }
    Ok(grouped.into_iter().map(PointCloud::new).collect())
}

pub fn posed(record: &ShapeRecord, poses: &[PartPose]) -> Result<Vec<PointCloud>> {
    if poses.len() != record.num_parts() {
        return Err(Error::invalid(format!("{} poses for {} parts", poses.len(), record.num_parts())));
    }
    record.parts.iter().zip(poses).map(|(p, pose)| apply_pose(&p.cloud, pose)).collect()
}

/// Writes the ground-truth assembly, the predicted assembly and each part
/// under its predicted pose, invisible parts included. Returns the paths in
/// that order.
pub fn export_shape(dir: &Path, record: &ShapeRecord, pred: &[PartPose]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let predicted = posed(record, pred)?;
    let mut files = vec![
        (dir.join(GT_ASSEMBLY_FILE), format_points(&record.posed_parts()?)),
        (dir.join(PRED_ASSEMBLY_FILE), format_points(&predicted)),
    ];
    for (k, cloud) in predicted.iter().enumerate() {
        let mut text = String::new();
        push_part(&mut text, cloud, k);
        files.push((dir.join(format!("part{k:02}.xyz")), text));
    }
    for (path, text) in &files {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
