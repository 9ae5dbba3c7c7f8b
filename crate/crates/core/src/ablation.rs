//! Ablation study: the full model against one knocked-out module at a time.

use std::fmt::Write as _;

use crate::config::{Ablation, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{score_all, summarize, SummaryRow};
use crate::parts::ShapeRecord;
use crate::train::{train_segmentation, Pipeline};

pub const FULL_LABEL: &str = "Ours - Full";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// `None` for the full model.
    pub ablation: Option<Ablation>,
    pub label: String,
    /// Test-split summary over all categories.
    pub summary: SummaryRow,
}

/// Trains and scores each variant. Variants whose segmentation stage is
/// identical to the full model's reuse that network. Rows come in `which`
/// order with the full model last.
pub fn run_ablations(
    base: &RunConfig,
    train: &[&ShapeRecord],
    test: &[&ShapeRecord],
    which: &[Ablation],
) -> Result<Vec<AblationRow>> {
    if !base.ablations.is_empty() {
        return Err(Error::invalid("the base config for an ablation study must not ablate anything"));
    }
    let shared_seg = train_segmentation(base, train)?.map(|(seg, _)| seg);
    let mut rows = Vec::with_capacity(which.len() + 1);
    for variant in which.iter().copied().map(Some).chain(std::iter::once(None)) {
        let mut cfg = base.clone();
        cfg.ablations = variant.into_iter().collect();
        let seg = match variant {
            Some(Ablation::Segmentation) => None,
            Some(Ablation::Global) => train_segmentation(&cfg, train)?.map(|(seg, _)| seg),
            _ => shared_seg.clone(),
        };
        let label = variant.map_or(FULL_LABEL, Ablation::label).to_string();
        log::info!("ablation variant: {label}");
        let (pipeline, _) = Pipeline::train_on(&cfg, seg, train)?;
        let scores = score_all(test, |r| pipeline.predict(r), cfg.tau, cfg.chamfer_form)?;
        let summary = summarize(&label, &scores).pop().expect("summaries end with the overall row");
        rows.push(AblationRow {
            ablation: variant,
            label,
            summary,
        });
    }
    Ok(rows)
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// Markdown table with part accuracy in percent.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| Ablated Module | Total | Visible | Invisible | Assembly CD |\n|---|---|---|---|---|\n");
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.4} |",
            r.label,
            percent(Some(s.part_accuracy)),
            percent(s.visible_accuracy),
            percent(s.invisible_accuracy),
            s.shape_chamfer
        );
    }
    out
}

/// Full-precision CSV of the same rows.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let summaries: Vec<SummaryRow> = rows.iter().map(|r| r.summary.clone()).collect();
    crate::eval::summary_csv(&summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_shape, SyntheticSpec, Template};
    use crate::nets::NetConfig;

    #[test]
    fn shared_segmentation_matches_retraining() {
        let spec = SyntheticSpec {
            points_per_part: 16,
            dense_factor: 2,
            grid: 8,
            ..SyntheticSpec::default()
        };
        let data: Vec<ShapeRecord> = (0..3).map(|s| generate_shape(&spec, Template::Chair, s).unwrap()).collect();
        let train: Vec<&ShapeRecord> = data[..2].iter().collect();
        let test: Vec<&ShapeRecord> = data[2..].iter().collect();
        let base = RunConfig {
            net: NetConfig {
                grid: 8,
                patch: 4,
                patch_width: 3,
                point_hidden: 4,
                feature: 4,
                image_width: 3,
                mask_width: 3,
                mask_decoder_hidden: 6,
                pose_hidden: 6,
                ..NetConfig::default()
            },
            seg_epochs: 1,
            epochs: 1,
            batch: 2,
            ..RunConfig::default()
        };
        let rows = run_ablations(&base, &train, &test, &[Ablation::Image]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].label, FULL_LABEL);

        let mut cfg = base.clone();
        cfg.ablations = vec![Ablation::Image];
        let (alone, _) = Pipeline::train(&cfg, &train).unwrap();
        let scores = score_all(&test, |r| alone.predict(r), cfg.tau, cfg.chamfer_form).unwrap();
        assert_eq!(summarize("x", &scores).pop().unwrap().shape_chamfer, rows[0].summary.shape_chamfer);
        assert!(ablation_table(&rows).lines().last().unwrap().starts_with("| Ours - Full |"));
    }
}
