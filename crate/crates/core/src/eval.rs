//! Held-out scoring and the random-pose baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PartPose, PointCloud, UnitQuaternion};
use crate::metrics::{part_accuracy, shape_chamfer, ChamferForm, PartAccuracy};
use crate::parts::ShapeRecord;
use crate::train::csv_error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeScore {
    pub id: String,
    pub template: String,
    pub accuracy: PartAccuracy,
    pub shape_chamfer: f64,
}

/// One table row: a method on one category, or on `all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub category: String,
    pub shapes: usize,
    pub parts: usize,
    /// Mean over shapes of per-shape part accuracy.
    pub part_accuracy: f64,
    /// Pooled over all visible parts.
    pub visible_accuracy: Option<f64>,
    /// Pooled over all invisible parts.
    pub invisible_accuracy: Option<f64>,
    pub invisible_parts: usize,
    /// Mean over shapes.
    pub shape_chamfer: f64,
}

pub fn score_shape(record: &ShapeRecord, pred: &[PartPose], tau: f64, form: ChamferForm) -> Result<ShapeScore> {
    let clouds: Vec<PointCloud> = record.parts.iter().map(|p| p.cloud.clone()).collect();
    let accuracy = part_accuracy(pred, &record.poses, &clouds, &record.classes, &record.visible(), tau, form)?;
    let sc = shape_chamfer(pred, &record.poses, &clouds)?;
    if !sc.is_finite() {
        return Err(Error::NonFinite(format!("shape chamfer on {}", record.id)));
    }
    Ok(ShapeScore {
        id: record.id.clone(),
        template: record.template.clone(),
        accuracy,
        shape_chamfer: sc,
    })
}

/// Scores every record with poses from `predict`, concurrently and in order.
pub fn score_all<F>(records: &[&ShapeRecord], predict: F, tau: f64, form: ChamferForm) -> Result<Vec<ShapeScore>>
where
    F: Fn(&ShapeRecord) -> Result<Vec<PartPose>> + Sync,
{
    let one = |r: &&ShapeRecord| predict(r).and_then(|p| score_shape(r, &p, tau, form));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        records.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        records.iter().map(one).collect()
    }
}

/// Uniform rotations, and translations uniform in the cube the camera
/// frames (half-width `camera.half_extent`). Uses no ground truth beyond the
/// part count; depends only on `seed` and the shape.
pub fn random_poses(record: &ShapeRecord, seed: u64) -> Vec<PartPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ record.seed);
    let h = record.camera.half_extent;
    (0..record.num_parts())
        .map(|_| {
            let rotation = UnitQuaternion::random(&mut rng);
            let t = [rng.gen_range(-h..=h), rng.gen_range(-h..=h), rng.gen_range(-h..=h)];
            PartPose::new(rotation, t)
        })
        .collect()
}

fn summarize_group(method: &str, category: &str, scores: &[&ShapeScore]) -> SummaryRow {
    let mut pooled = PartAccuracy::default();
    for s in scores {
        pooled.merge(&s.accuracy);
    }
    let count = scores.len().max(1) as f64;
    SummaryRow {
        method: method.to_string(),
        category: category.to_string(),
        shapes: scores.len(),
        parts: pooled.total,
        part_accuracy: scores.iter().map(|s| s.accuracy.fraction()).sum::<f64>() / count,
        visible_accuracy: pooled.visible_fraction(),
        invisible_accuracy: pooled.invisible_fraction(),
        invisible_parts: pooled.invisible_total,
        shape_chamfer: scores.iter().map(|s| s.shape_chamfer).sum::<f64>() / count,
    }
}

/// One row per category in first-seen order, then `all`.
pub fn summarize(method: &str, scores: &[ShapeScore]) -> Vec<SummaryRow> {
    let mut categories: Vec<&str> = Vec::new();
    for s in scores {
        if !categories.contains(&s.template.as_str()) {
            categories.push(&s.template);
        }
    }
    let mut rows: Vec<SummaryRow> = categories
        .iter()
        .map(|c| {
            let group: Vec<&ShapeScore> = scores.iter().filter(|s| s.template == *c).collect();
            summarize_group(method, c, &group)
        })
        .collect();
    rows.push(summarize_group(method, "all", &scores.iter().collect::<Vec<_>>()));
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "method",
    "category",
    "shapes",
    "parts",
    "part_accuracy",
    "visible_accuracy",
    "invisible_accuracy",
    "invisible_parts",
    "shape_chamfer",
];

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.category.clone(),
            r.shapes.to_string(),
            r.parts.to_string(),
            format!("{:?}", r.part_accuracy),
            opt(r.visible_accuracy),
            opt(r.invisible_accuracy),
            r.invisible_parts.to_string(),
            format!("{:?}", r.shape_chamfer),
        ])
        .map_err(csv_error)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?)
        .map_err(|e| Error::format("csv", e.to_string()))
}

/// Per-shape scores as CSV, one line per shape.
pub fn scores_csv(scores: &[ShapeScore]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "template", "parts", "correct", "visible", "visible_correct", "invisible", "invisible_correct", "shape_chamfer"])
        .map_err(csv_error)?;
    for s in scores {
        let a = &s.accuracy;
        w.write_record([
            s.id.clone(),
            s.template.clone(),
            a.total.to_string(),
            a.correct.to_string(),
            a.visible_total.to_string(),
            a.visible_correct.to_string(),
            a.invisible_total.to_string(),
            a.invisible_correct.to_string(),
            format!("{:?}", s.shape_chamfer),
        ])
        .map_err(csv_error)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?)
        .map_err(|e| Error::format("csv", e.to_string()))
}

/// Fixed-width text rendering of summary rows.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "{:<10} {:<9} {:>6} {:>6} {:>8} {:>8} {:>9} {:>8}\n",
        "method", "category", "shapes", "parts", "PA", "visible", "invisible", "SC"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<9} {:>6} {:>6} {:>8.3} {:>8} {:>9} {:>8.4}\n",
            r.method,
            r.category,
            r.shapes,
            r.parts,
            r.part_accuracy,
            fmt(r.visible_accuracy),
            fmt(r.invisible_accuracy),
            r.shape_chamfer
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_shape, SyntheticSpec, Template};

    fn records() -> Vec<ShapeRecord> {
        let spec = SyntheticSpec {
            points_per_part: 32,
            dense_factor: 2,
            ..SyntheticSpec::default()
        };
        vec![
            generate_shape(&spec, Template::Table, 1).unwrap(),
            generate_shape(&spec, Template::Chair, 2).unwrap(),
        ]
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let data = records();
        let refs: Vec<&ShapeRecord> = data.iter().collect();
        let scores = score_all(&refs, |r| Ok(r.poses.clone()), 0.1, ChamferForm::Squared).unwrap();
        let rows = summarize("gt", &scores);
        assert_eq!(rows.len(), 3);
        let all = rows.last().unwrap();
        assert_eq!(all.part_accuracy, 1.0);
        assert_eq!(all.shape_chamfer, 0.0);
        let text = summary_csv(&rows).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(reader.records().count(), 3);
    }

    #[test]
    fn random_baseline_is_seeded_and_worse() {
        let data = records();
        let a = random_poses(&data[0], 3);
        assert_eq!(a, random_poses(&data[0], 3));
        assert_ne!(a, random_poses(&data[0], 4));
        let s = score_shape(&data[0], &a, 0.1, ChamferForm::Squared).unwrap();
        assert!(s.shape_chamfer > 0.0);
    }
}
