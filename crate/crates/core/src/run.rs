//! Run directories: the exact config, both checkpoints, training curves and
//! evaluation outputs.
//!
//! ```text
//! RUN/config.txt             effective RunConfig, canonical text
//! RUN/seg.ckpt  RUN/pose.ckpt
//! RUN/seg_curve.csv  RUN/pose_curve.csv
//! RUN/metrics_<split>.csv    summary rows: model, then the random baseline
//! RUN/scores_<split>.csv     per-shape model scores
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::checkpoint;
use crate::config::{RunConfig, CONFIG_FILE};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{random_poses, score_all, scores_csv, summarize, summary_csv, ShapeScore, SummaryRow};
use crate::parts::{ShapeRecord, Split};
use crate::train::{Pipeline, TrainCurves};

pub const SEG_CHECKPOINT: &str = "seg.ckpt";
pub const POSE_CHECKPOINT: &str = "pose.ckpt";
pub const SEG_CURVE: &str = "seg_curve.csv";
pub const POSE_CURVE: &str = "pose_curve.csv";
pub const MODEL_METHOD: &str = "model";
pub const RANDOM_METHOD: &str = "random";

pub fn metrics_path(run: &Path, split: Split) -> PathBuf {
    run.join(format!("metrics_{}.csv", split.name()))
}

pub fn scores_path(run: &Path, split: Split) -> PathBuf {
    run.join(format!("scores_{}.csv", split.name()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_run(dir: &Path, pipeline: &Pipeline, curves: &TrainCurves) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(CONFIG_FILE), &pipeline.config.to_text())?;
    if let Some((_, store)) = &pipeline.seg {
        checkpoint::save(store, &dir.join(SEG_CHECKPOINT))?;
    }
    checkpoint::save(&pipeline.pose.1, &dir.join(POSE_CHECKPOINT))?;
    if let Some(curve) = &curves.seg {
        write(&dir.join(SEG_CURVE), &curve.to_csv()?)?;
    }
    write(&dir.join(POSE_CURVE), &curves.pose.to_csv()?)
}

/// Rebuilds the trained pipeline from a run directory.
pub fn load_run(dir: &Path) -> Result<Pipeline> {
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let mut pipeline = Pipeline::init(&config)?;
    if let Some((_, store)) = pipeline.seg.as_mut() {
        checkpoint::load_into(store, &dir.join(SEG_CHECKPOINT))?;
    }
    checkpoint::load_into(&mut pipeline.pose.1, &dir.join(POSE_CHECKPOINT))?;
    Ok(pipeline)
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    if !config.dataset.is_dir() {
        return Err(Error::invalid(format!("dataset directory {} does not exist", config.dataset.display())));
    }
    Dataset::load(&config.dataset)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub model: Vec<ShapeScore>,
    pub random: Vec<ShapeScore>,
    /// Model rows, then random-baseline rows.
    pub rows: Vec<SummaryRow>,
}

/// Scores the pipeline and the random baseline on `records`.
pub fn evaluate(pipeline: &Pipeline, records: &[&ShapeRecord]) -> Result<Evaluation> {
    let cfg = &pipeline.config;
    let model = score_all(records, |r| pipeline.predict(r), cfg.tau, cfg.chamfer_form)?;
    let random = score_all(records, |r| Ok(random_poses(r, cfg.seed)), cfg.tau, cfg.chamfer_form)?;
    let mut rows = summarize(MODEL_METHOD, &model);
    rows.extend(summarize(RANDOM_METHOD, &random));
    Ok(Evaluation { model, random, rows })
}

pub fn write_evaluation(dir: &Path, split: Split, evaluation: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&metrics_path(dir, split), &summary_csv(&evaluation.rows)?)?;
    write(&scores_path(dir, split), &scores_csv(&evaluation.model)?)
}

/// The `all` row for `method`.
pub fn overall<'a>(rows: &'a [SummaryRow], method: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.method == method && r.category == "all")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SplitCounts;
    use crate::datagen::SyntheticSpec;
    use crate::nets::NetConfig;

    #[test]
    fn saved_run_predicts_identically() {
        let spec = SyntheticSpec {
            points_per_part: 16,
            dense_factor: 2,
            grid: 8,
            ..SyntheticSpec::default()
        };
        let data = Dataset::generate(&spec, SplitCounts { train: 2, val: 0, test: 1 }, 1).unwrap();
        let cfg = RunConfig {
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
            ..RunConfig::default()
        };
        let train = data.split(Split::Train);
        let (pipeline, curves) = Pipeline::train(&cfg, &train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_run(dir.path(), &pipeline, &curves).unwrap();
        let back = load_run(dir.path()).unwrap();
        let test = data.split(Split::Test);
        assert_eq!(back.predict(test[0]).unwrap(), pipeline.predict(test[0]).unwrap());

        let eval = evaluate(&back, &test).unwrap();
        assert!(overall(&eval.rows, MODEL_METHOD).is_some() && overall(&eval.rows, RANDOM_METHOD).is_some());
        write_evaluation(dir.path(), Split::Test, &eval).unwrap();
        assert!(metrics_path(dir.path(), Split::Test).exists());
    }
}
