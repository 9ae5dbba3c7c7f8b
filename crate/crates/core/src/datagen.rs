//! Procedural furniture built from boxes, posed in a camera frame and
//! rendered into a depth grid with instance masks.
//!
//! Object space has y up and the front facing +z. Parts that share a
//! geometry key are sampled once, so their canonical clouds are identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::quat::{mat_mul, mat_vec, Mat3};
use crate::geometry::{
    fps, normalize_global_scale, pca_canonicalize, rasterize_masks, Camera, PartPose, PointCloud, UnitQuaternion,
    Vec3,
};
use crate::parts::{assign_parts, detect_equivalence_classes, ShapeRecord, Split, AABB_TOLERANCE, CHAMFER_TOLERANCE, MAX_PARTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Table,
    Chair,
    Cabinet,
}

impl Template {
    pub fn name(self) -> &'static str {
        match self {
            Template::Table => "table",
            Template::Chair => "chair",
            Template::Cabinet => "cabinet",
        }
    }
}

impl std::str::FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Template::Table),
            "chair" => Ok(Template::Chair),
            "cabinet" => Ok(Template::Cabinet),
            other => Err(Error::invalid(format!("unknown template '{other}'"))),
        }
    }
}

/// Generator settings. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub templates: Vec<Template>,
    /// Points per part after farthest-point sampling.
    pub points_per_part: usize,
    /// Dense surface samples per part, as a multiple of `points_per_part`.
    pub dense_factor: usize,
    pub table_legs: Vec<usize>,
    pub slats: (usize, usize),
    pub shelves: (usize, usize),
    pub stretcher_probability: f64,
    pub table_shelf_probability: f64,
    /// Chance that adjacent parts are merged into one pre-assembled part.
    pub level_mixed_probability: f64,
    /// Standard deviation of surface-sample jitter, in object units.
    pub noise: f64,
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub grid: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            templates: vec![Template::Table, Template::Chair],
            points_per_part: 1000,
            dense_factor: 3,
            table_legs: vec![4, 6],
            slats: (2, 5),
            shelves: (1, 3),
            stretcher_probability: 0.5,
            table_shelf_probability: 0.3,
            level_mixed_probability: 0.0,
            noise: 0.0,
            azimuth_deg: (-70.0, 70.0),
            elevation_deg: (15.0, 40.0),
            grid: 32,
        }
    }
}

impl SyntheticSpec {
    /// Parses JSON settings; missing fields take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Part count of the largest shape these settings can produce.
    pub fn max_parts(&self, template: Template) -> usize {
        let legs = self.table_legs.iter().copied().max().unwrap_or(4);
        match template {
            Template::Table => 1 + legs + 4 + 1,
            Template::Chair => 1 + 4 + 2 + self.slats.1 + 1 + 2,
            Template::Cabinet => 5 + self.shelves.1 + 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::invalid("spec lists no templates"));
        }
        if self.points_per_part < 4 || self.dense_factor == 0 || self.grid == 0 {
            return Err(Error::invalid("points_per_part ≥ 4, dense_factor ≥ 1 and grid ≥ 1 are required"));
        }
        if self.slats.0 > self.slats.1 || self.shelves.0 > self.shelves.1 || self.slats.0 == 0 {
            return Err(Error::invalid("slat and shelf ranges must be ordered and slats ≥ 1"));
        }
        if self.table_legs.iter().any(|&l| l != 4 && l != 6) || self.table_legs.is_empty() {
            return Err(Error::invalid("table legs must be chosen from {4, 6}"));
        }
        for t in &self.templates {
            let n = self.max_parts(*t);
            if n > MAX_PARTS {
                return Err(Error::invalid(format!("{} shapes may reach {n} parts, above {MAX_PARTS}", t.name())));
            }
        }
        for p in [self.stretcher_probability, self.table_shelf_probability, self.level_mixed_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.azimuth_deg.0 > self.azimuth_deg.1 || self.elevation_deg.0 > self.elevation_deg.1 || self.noise < 0.0 {
            return Err(Error::invalid("camera ranges must be ordered and noise nonnegative"));
        }
        Ok(())
    }
}

/// Axis-aligned box in object space.
#[derive(Debug, Clone, Copy)]
struct Piece {
    size: Vec3,
    center: Vec3,
}

/// One part: boxes sharing a rigid placement. Parts with equal `key` have
/// identical piece layouts relative to their first piece.
#[derive(Debug, Clone)]
struct RawPart {
    key: usize,
    pieces: Vec<Piece>,
}

fn single(key: usize, size: Vec3, center: Vec3) -> RawPart {
    RawPart {
        key,
        pieces: vec![Piece { size, center }],
    }
}

fn merge(key: usize, parts: Vec<RawPart>) -> RawPart {
    RawPart {
        key,
        pieces: parts.into_iter().flat_map(|p| p.pieces).collect(),
    }
}

fn table(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, mixed: bool) -> Vec<RawPart> {
    let w = rng.gen_range(1.0..1.6);
    let d = rng.gen_range(0.6..1.0);
    let h = rng.gen_range(0.65..0.8);
    let t = rng.gen_range(0.03..0.06);
    let l = rng.gen_range(0.04..0.08);
    let inset = rng.gen_range(0.02..0.1);
    let legs = spec.table_legs[rng.gen_range(0..spec.table_legs.len())];
    let (lx, lz) = (w / 2.0 - inset - l / 2.0, d / 2.0 - inset - l / 2.0);

    let mut parts = vec![single(0, [w, t, d], [0.0, h - t / 2.0, 0.0])];
    let mut base = Vec::new();
    let mut corners = vec![[-lx, lz], [lx, lz], [-lx, -lz], [lx, -lz]];
    if legs == 6 {
        corners.extend([[0.0, lz], [0.0, -lz]]);
    }
    for [x, z] in corners {
        base.push(single(1, [l, h - t, l], [x, (h - t) / 2.0, z]));
    }
    if rng.gen_bool(spec.stretcher_probability) {
        let s = l * 0.6;
        let y = rng.gen_range(0.1..0.25) * h;
        for z in [lz, -lz] {
            base.push(single(2, [2.0 * lx - l, s, s], [0.0, y, z]));
        }
        for x in [-lx, lx] {
            base.push(single(3, [s, s, 2.0 * lz - l], [x, y, 0.0]));
        }
    }
    if mixed {
        parts.push(merge(1, base));
    } else {
        parts.extend(base);
    }
    if rng.gen_bool(spec.table_shelf_probability) {
        let y = rng.gen_range(0.15..0.3) * h;
        parts.push(single(4, [2.0 * lx - l, t, 2.0 * lz - l], [0.0, y + 0.02, 0.0]));
    }
    parts
}

fn chair(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, mixed: bool) -> Vec<RawPart> {
    let w = rng.gen_range(0.4..0.55);
    let d = rng.gen_range(0.4..0.55);
    let hs = rng.gen_range(0.4..0.5);
    let t = rng.gen_range(0.03..0.06);
    let l = rng.gen_range(0.03..0.05);
    let hb = rng.gen_range(0.35..0.5);
    let (lx, lz) = (w / 2.0 - l / 2.0 - 0.01, d / 2.0 - l / 2.0 - 0.01);

    let mut parts = vec![single(0, [w, t, d], [0.0, hs - t / 2.0, 0.0])];
    for [x, z] in [[-lx, lz], [lx, lz], [-lx, -lz], [lx, -lz]] {
        parts.push(single(1, [l, hs - t, l], [x, (hs - t) / 2.0, z]));
    }
    let back_z = -(d / 2.0 - l / 2.0);
    let mut back = Vec::new();
    for x in [-(w / 2.0 - l / 2.0), w / 2.0 - l / 2.0] {
        back.push(single(2, [l, hb, l], [x, hs + hb / 2.0, back_z]));
    }
    let slats = rng.gen_range(spec.slats.0..=spec.slats.1);
    let slat_h = rng.gen_range(0.02..0.05);
    for k in 0..slats {
        let frac = if slats == 1 { 0.4 } else { 0.05 + 0.7 * k as f64 / (slats - 1) as f64 };
        back.push(single(3, [w - 2.0 * l, slat_h, l * 0.6], [0.0, hs + frac * hb + slat_h / 2.0, back_z]));
    }
    let rail_h = rng.gen_range(0.05..0.09);
    back.push(single(4, [w, rail_h, l], [0.0, hs + hb + rail_h / 2.0, back_z]));
    if mixed {
        parts.push(merge(2, back));
    } else {
        parts.extend(back);
    }
    if rng.gen_bool(spec.stretcher_probability) {
        let s = l * 0.6;
        for x in [-lx, lx] {
            parts.push(single(5, [s, s, 2.0 * lz - l], [x, 0.15 * hs, 0.0]));
        }
    }
    parts
}

fn cabinet(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, mixed: bool) -> Vec<RawPart> {
    let w = rng.gen_range(0.6..1.0);
    let h = rng.gen_range(0.8..1.4);
    let d = rng.gen_range(0.35..0.5);
    let t = rng.gen_range(0.015..0.03);
    let mut frame = Vec::new();
    for x in [-(w / 2.0 - t / 2.0), w / 2.0 - t / 2.0] {
        frame.push(single(0, [t, h, d], [x, h / 2.0, 0.0]));
    }
    for y in [h - t / 2.0, t / 2.0] {
        frame.push(single(1, [w - 2.0 * t, t, d], [0.0, y, 0.0]));
    }
    frame.push(single(2, [w - 2.0 * t, h - 2.0 * t, t], [0.0, h / 2.0, -(d / 2.0 - t / 2.0)]));
    let mut parts = if mixed { vec![merge(0, frame)] } else { frame };
    let shelves = rng.gen_range(spec.shelves.0..=spec.shelves.1);
    for k in 0..shelves {
        let y = t + (h - 2.0 * t) * (k + 1) as f64 / (shelves + 1) as f64;
        parts.push(single(3, [w - 2.0 * t, t, 0.85 * (d - t)], [0.0, y, -t / 2.0]));
    }
    let door_w = w / 2.0 - 0.005;
    for x in [-w / 4.0, w / 4.0] {
        parts.push(single(4, [door_w, h - 0.01, t], [x, h / 2.0, d / 2.0 + t / 2.0]));
    }
    parts
}

fn box_area_faces(size: &Vec3) -> [f64; 3] {
    // Areas of the face pairs normal to x, y, z.
    [size[1] * size[2], size[0] * size[2], size[0] * size[1]]
}

/// Uniform samples on the surfaces of `pieces`, relative to `anchor`.
fn sample_surface(pieces: &[Piece], anchor: Vec3, count: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let areas: Vec<f64> = pieces.iter().map(|p| 2.0 * box_area_faces(&p.size).iter().sum::<f64>()).collect();
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pick = rng.gen_range(0.0..total);
        let mut k = 0;
        while k + 1 < pieces.len() && pick >= areas[k] {
            pick -= areas[k];
            k += 1;
        }
        let piece = &pieces[k];
        let faces = box_area_faces(&piece.size);
        let mut axis = 0;
        let mut f = rng.gen_range(0.0..faces.iter().sum::<f64>());
        while axis < 2 && f >= faces[axis] {
            f -= faces[axis];
            axis += 1;
        }
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = if a == axis {
                if rng.gen_bool(0.5) { 0.5 } else { -0.5 }
            } else {
                rng.gen_range(-0.5..0.5)
            } * piece.size[a];
            p[a] += piece.center[a] - anchor[a];
            if noise > 0.0 {
                // Sum of uniforms: a cheap, deterministic bell-shaped jitter.
                let u: f64 = (0..4).map(|_| rng.gen_range(-0.5..0.5)).sum();
                p[a] += noise * u * 3f64.sqrt();
            }
        }
        out.push(p);
    }
    out
}

/// A sampled geometry shared by every part with the same key.
struct Geometry {
    canonical: PointCloud,
    dense_canonical: PointCloud,
    /// `p_local = rotation · p_canonical + centroid`.
    rotation: Mat3,
    centroid: Vec3,
}

fn sample_geometry(part: &RawPart, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Geometry> {
    let anchor = part.pieces[0].center;
    let dense = PointCloud::new(sample_surface(
        &part.pieces,
        anchor,
        spec.points_per_part * spec.dense_factor,
        spec.noise,
        rng,
    ));
    let sampled = fps(&dense, spec.points_per_part, 0)?;
    let (canonical, frame) = pca_canonicalize(&sampled);
    let rt = crate::geometry::quat::transpose(&frame.rotation);
    let dense_canonical = PointCloud::new(
        dense
            .points
            .iter()
            .map(|p| mat_vec(&rt, &[p[0] - frame.centroid[0], p[1] - frame.centroid[1], p[2] - frame.centroid[2]]))
            .collect(),
    );
    Ok(Geometry {
        canonical,
        dense_canonical,
        rotation: frame.rotation,
        centroid: frame.centroid,
    })
}

/// Builds one shape. Deterministic in `(spec, template, seed)`.
pub fn generate_shape(spec: &SyntheticSpec, template: Template, seed: u64) -> Result<ShapeRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixed = rng.gen_bool(spec.level_mixed_probability);
    let raw = match template {
        Template::Table => table(spec, &mut rng, mixed),
        Template::Chair => chair(spec, &mut rng, mixed),
        Template::Cabinet => cabinet(spec, &mut rng, mixed),
    };
    if raw.len() > MAX_PARTS {
        return Err(Error::invalid(format!("generated {} parts, above {MAX_PARTS}", raw.len())));
    }

    let mut geometries: Vec<(usize, Geometry)> = Vec::new();
    let mut geometry_of = Vec::with_capacity(raw.len());
    for part in &raw {
        let idx = match geometries.iter().position(|(k, _)| *k == part.key) {
            Some(i) => i,
            None => {
                geometries.push((part.key, sample_geometry(part, spec, &mut rng)?));
                geometries.len() - 1
            }
        };
        geometry_of.push(idx);
    }

    let canon: Vec<PointCloud> = geometries.iter().map(|(_, g)| g.canonical.clone()).collect();
    let (scaled, factor) = normalize_global_scale(&canon)?;

    // Object-space placement of every part's canonical frame, after scaling.
    let origins: Vec<Vec3> = raw
        .iter()
        .zip(&geometry_of)
        .map(|(part, &gi)| {
            let c = geometries[gi].1.centroid;
            let a = part.pieces[0].center;
            [(a[0] + c[0]) * factor, (a[1] + c[1]) * factor, (a[2] + c[2]) * factor]
        })
        .collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for part in &raw {
        for piece in &part.pieces {
            for a in 0..3 {
                lo[a] = lo[a].min((piece.center[a] - piece.size[a] / 2.0) * factor);
                hi[a] = hi[a].max((piece.center[a] + piece.size[a] / 2.0) * factor);
            }
        }
    }
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];

    let azimuth = rng.gen_range(spec.azimuth_deg.0..=spec.azimuth_deg.1);
    let elevation = rng.gen_range(spec.elevation_deg.0..=spec.elevation_deg.1);
    let mut camera = Camera {
        azimuth_deg: azimuth,
        elevation_deg: elevation,
        half_extent: 1.0,
    };
    let r_cam = camera.rotation();

    let mut poses = Vec::with_capacity(raw.len());
    let mut dense_posed = Vec::with_capacity(raw.len());
    for (k, &gi) in geometry_of.iter().enumerate() {
        let geo = &geometries[gi].1;
        let rotation = UnitQuaternion::from_matrix(&mat_mul(&r_cam, &geo.rotation))?;
        let rel = [origins[k][0] - center[0], origins[k][1] - center[1], origins[k][2] - center[2]];
        let pose = PartPose::new(rotation, mat_vec(&r_cam, &rel));
        dense_posed.push(crate::geometry::apply_pose(&geo.dense_canonical.scaled(factor), &pose)?);
        poses.push(pose);
    }
    let reach = dense_posed
        .iter()
        .flat_map(|c| c.points.iter())
        .fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
    camera.half_extent = 1.05 * reach.max(1e-6);
    let render = rasterize_masks(&dense_posed, spec.grid, camera.half_extent);

    let clouds: Vec<PointCloud> = geometry_of.iter().map(|&gi| scaled[gi].clone()).collect();
    let classes = detect_equivalence_classes(&clouds, AABB_TOLERANCE, CHAMFER_TOLERANCE);
    let parts = assign_parts(clouds, &classes);
    let record = ShapeRecord {
        id: format!("{}-{seed:016x}", template.name()),
        template: template.name().to_string(),
        seed,
        split: Split::Train,
        parts,
        classes,
        poses,
        camera,
        depth: render.depth,
        masks: render.masks,
    };
    record.validate()?;
    Ok(record)
}

/// Counts per split, in `(train, val, test)` order.
pub fn split_counts(total: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let sum = ratios.0 + ratios.1 + ratios.2;
    let train = (total as f64 * ratios.0 / sum).round() as usize;
    let val = ((total as f64 * ratios.1 / sum).round() as usize).min(total - train);
    (train, val, total - train - val)
}

/// Mixes a dataset seed and a shape index into a shape seed.
pub fn shape_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut z = dataset_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Where every shape of a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapePlan {
    pub index: usize,
    pub seed: u64,
    pub template: Template,
    pub split: Split,
}

/// Assigns templates round-robin and splits in order: the first
/// `counts.0` shapes train, the next `counts.1` validate, the rest test.
pub fn plan_dataset(spec: &SyntheticSpec, counts: (usize, usize, usize), seed: u64) -> Result<Vec<ShapePlan>> {
    spec.validate()?;
    let total = counts.0 + counts.1 + counts.2;
    let mut plans = Vec::with_capacity(total);
    for index in 0..total {
        let split = if index < counts.0 {
            Split::Train
        } else if index < counts.0 + counts.1 {
            Split::Val
        } else {
            Split::Test
        };
        plans.push(ShapePlan {
            index,
            seed: shape_seed(seed, index as u64),
            template: spec.templates[index % spec.templates.len()],
            split,
        });
    }
    let mut seeds: Vec<u64> = plans.iter().map(|p| p.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != plans.len() {
        return Err(Error::invalid("shape seed collision; choose another dataset seed"));
    }
    Ok(plans)
}

pub fn generate_planned(spec: &SyntheticSpec, plan: &ShapePlan) -> Result<ShapeRecord> {
    let mut record = generate_shape(spec, plan.template, plan.seed)?;
    record.split = plan.split;
    record.id = format!("{}-{:05}", plan.template.name(), plan.index);
    Ok(record)
}

/// Generates every planned shape, in parallel where available; output order
/// follows the plan.
pub fn generate_all(spec: &SyntheticSpec, plans: &[ShapePlan]) -> Result<Vec<ShapeRecord>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        plans.par_iter().map(|p| generate_planned(spec, p)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        plans.iter().map(|p| generate_planned(spec, p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SyntheticSpec {
        SyntheticSpec {
            points_per_part: 64,
            dense_factor: 3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn table_has_a_leg_class() {
        let spec = SyntheticSpec { table_legs: vec![4], ..quick() };
        let shape = generate_shape(&spec, Template::Table, 11).unwrap();
        assert!(shape.classes.iter().any(|c| c.len() == 4), "{:?}", shape.classes);
    }

    #[test]
    fn masks_partition_and_clouds_are_normalized() {
        for (i, t) in [Template::Table, Template::Chair, Template::Cabinet].into_iter().enumerate() {
            let shape = generate_shape(&quick(), t, 100 + i as u64).unwrap();
            let cells = shape.depth.values.len();
            for cell in 0..cells {
                let owners = shape.masks.iter().filter(|m| m.bits[cell]).count();
                assert!(owners <= 1);
                assert_eq!(owners == 1, shape.depth.values[cell] > 0.0);
            }
            for p in &shape.parts {
                assert!(p.cloud.centroid().iter().all(|v| v.abs() < 1e-9));
            }
            let longest = shape.parts.iter().map(|p| p.aabb.diagonal()).fold(0.0, f64::max);
            assert!((longest - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_shape() {
        let a = generate_shape(&quick(), Template::Chair, 5).unwrap();
        let b = generate_shape(&quick(), Template::Chair, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cabinets_hide_their_shelves() {
        let spec = SyntheticSpec { templates: vec![Template::Cabinet], ..quick() };
        let shape = generate_shape(&spec, Template::Cabinet, 3).unwrap();
        assert!(shape.visible().iter().any(|v| !v));
    }

    #[test]
    fn oversized_specs_are_rejected() {
        let spec = SyntheticSpec { slats: (2, 12), ..quick() };
        assert!(generate_shape(&spec, Template::Chair, 1).is_err());
    }

    #[test]
    fn split_ratio() {
        assert_eq!(split_counts(100, (0.7, 0.1, 0.2)), (70, 10, 20));
        assert_eq!(split_counts(200, (0.7, 0.1, 0.2)), (140, 20, 40));
    }
}
