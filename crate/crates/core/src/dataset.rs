//! On-disk datasets.
//!
//! ```text
//! DIR/manifest.json          Manifest: schema, generator settings, split plan
//! DIR/records.jsonl          one RecordLine per shape, plan order
//! DIR/blobs/<id>/part<k>.pts cloud blob; identical in-class clouds share one file
//! DIR/blobs/<id>/mask<k>.bin mask blob
//! DIR/blobs/<id>/depth.bin   grid blob
//! ```
//! Blob layouts are described in [`crate::geometry::io`]. Paths inside
//! records are relative to `DIR`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{generate_all, plan_dataset, ShapePlan, SyntheticSpec};
use crate::error::{Error, Result};
use crate::geometry::io::{decode_cloud, decode_grid, decode_mask, encode_cloud, encode_grid, encode_mask};
use crate::geometry::{Camera, PartPose};
use crate::parts::{EquivalenceClass, Part, ShapeRecord, Split};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub spec: SyntheticSpec,
    pub counts: SplitCounts,
    pub shapes: Vec<ShapePlan>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartLine {
    id: usize,
    class_id: usize,
    instance: usize,
    cloud: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordLine {
    schema_version: u32,
    id: String,
    template: String,
    seed: u64,
    split: Split,
    camera: Camera,
    classes: Vec<EquivalenceClass>,
    parts: Vec<PartLine>,
    poses: Vec<PartPose>,
    depth: String,
    masks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<ShapeRecord>,
}

impl Dataset {
    /// Plans and generates every shape; nothing touches the disk.
    pub fn generate(spec: &SyntheticSpec, counts: SplitCounts, seed: u64) -> Result<Self> {
        let shapes = plan_dataset(spec, counts.as_tuple(), seed)?;
        let records = generate_all(spec, &shapes)?;
        Ok(Self {
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                seed,
                spec: spec.clone(),
                counts,
                shapes,
            },
            records,
        })
    }

    /// Rebuilds the records a manifest describes.
    pub fn regenerate(manifest: &Manifest) -> Result<Self> {
        check_schema(manifest.schema_version, "manifest")?;
        let records = generate_all(&manifest.spec, &manifest.shapes)?;
        Ok(Self {
            manifest: manifest.clone(),
            records,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&ShapeRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ShapeRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;

        let records_path = dir.join(RECORDS_FILE);
        let file = fs::File::create(&records_path).map_err(|e| Error::io(&records_path, e))?;
        let mut out = BufWriter::new(file);
        for record in &self.records {
            let line = write_blobs(dir, record)?;
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io(&records_path, e))?;
        }
        out.flush().map_err(|e| Error::io(&records_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        check_schema(manifest.schema_version, "manifest")?;

        let records_path = dir.join(RECORDS_FILE);
        let file = fs::File::open(&records_path).map_err(|e| Error::io(&records_path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&records_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(&line)?;
            records.push(read_record(dir, parsed)?);
        }
        if records.len() != manifest.shapes.len() {
            return Err(Error::format(
                "dataset",
                format!("manifest plans {} shapes, records hold {}", manifest.shapes.len(), records.len()),
            ));
        }
        Ok(Self { manifest, records })
    }
}

fn check_schema(version: u32, what: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::format("dataset", format!("{what} schema {version}, this build reads {SCHEMA_VERSION}")));
    }
    Ok(())
}

fn write_file(dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn read_file(dir: &Path, rel: &str) -> Result<Vec<u8>> {
    let rel_path = PathBuf::from(rel);
    if rel_path.is_absolute() || rel_path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(Error::format("record", format!("blob path '{rel}' escapes the dataset directory")));
    }
    let path = dir.join(rel_path);
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

fn write_blobs(dir: &Path, record: &ShapeRecord) -> Result<RecordLine> {
    let base = format!("blobs/{}", record.id);
    let mut parts = Vec::with_capacity(record.parts.len());
    for part in &record.parts {
        let rep = record.classes[part.class_id].representative;
        let owner = if record.parts[rep].cloud == part.cloud { rep } else { part.id };
        let cloud = format!("{base}/part{owner}.pts");
        if owner == part.id {
            write_file(dir, &cloud, &encode_cloud(&part.cloud))?;
        }
        parts.push(PartLine {
            id: part.id,
            class_id: part.class_id,
            instance: part.instance,
            cloud,
        });
    }
    let depth = format!("{base}/depth.bin");
    write_file(dir, &depth, &encode_grid(&record.depth))?;
    let mut masks = Vec::with_capacity(record.masks.len());
    for (k, mask) in record.masks.iter().enumerate() {
        let rel = format!("{base}/mask{k}.bin");
        write_file(dir, &rel, &encode_mask(mask))?;
        masks.push(rel);
    }
    Ok(RecordLine {
        schema_version: SCHEMA_VERSION,
        id: record.id.clone(),
        template: record.template.clone(),
        seed: record.seed,
        split: record.split,
        camera: record.camera,
        classes: record.classes.clone(),
        parts,
        poses: record.poses.clone(),
        depth,
        masks,
    })
}

fn read_record(dir: &Path, line: RecordLine) -> Result<ShapeRecord> {
    check_schema(line.schema_version, "record")?;
    let mut parts = Vec::with_capacity(line.parts.len());
    for p in &line.parts {
        let cloud = decode_cloud(&read_file(dir, &p.cloud)?)?;
        parts.push(Part {
            id: p.id,
            aabb: cloud.aabb(),
            cloud,
            class_id: p.class_id,
            instance: p.instance,
        });
    }
    let masks = line
        .masks
        .iter()
        .map(|m| decode_mask(&read_file(dir, m)?))
        .collect::<Result<Vec<_>>>()?;
    let record = ShapeRecord {
        id: line.id,
        template: line.template,
        seed: line.seed,
        split: line.split,
        parts,
        classes: line.classes,
        poses: line.poses,
        camera: line.camera,
        depth: decode_grid(&read_file(dir, &line.depth)?)?,
        masks,
    };
    record.validate()?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            points_per_part: 32,
            dense_factor: 2,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn save_load_round_trip() {
        let data = Dataset::generate(&small_spec(), SplitCounts { train: 3, val: 1, test: 2 }, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, data);
        assert_eq!(back.split(Split::Test).len(), 2);
    }

    #[test]
    fn manifest_regenerates_records() {
        let data = Dataset::generate(&small_spec(), SplitCounts { train: 2, val: 1, test: 1 }, 3).unwrap();
        assert_eq!(Dataset::regenerate(&data.manifest).unwrap(), data);
    }

    #[test]
    fn rejects_escaping_paths_and_wrong_schema() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_file(dir.path(), "../etc/passwd").is_err());
        assert!(check_schema(SCHEMA_VERSION + 1, "record").is_err());
    }
}
