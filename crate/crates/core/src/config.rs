//! Run configuration as flat `key = value` text.
//!
//! `#` starts a comment. Keys are unique within a file; overrides given as
//! `key=value` strings are applied afterwards, then `ASSEMBLY_SEED`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::{ChamferForm, PART_ACCURACY_THRESHOLD};
use crate::nets::{NetConfig, PoseSwitches};

pub const SEED_ENV: &str = "ASSEMBLY_SEED";
pub const CONFIG_FILE: &str = "config.txt";

/// One module knocked out for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    L2Rotation,
    Segmentation,
    GraphConv,
    SecondPhase,
    Image,
    Global,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::L2Rotation,
        Ablation::Segmentation,
        Ablation::GraphConv,
        Ablation::SecondPhase,
        Ablation::Image,
        Ablation::Global,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Ablation::L2Rotation => "l2rot",
            Ablation::Segmentation => "seg",
            Ablation::GraphConv => "gconv1",
            Ablation::SecondPhase => "gconv2",
            Ablation::Image => "img",
            Ablation::Global => "global",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::L2Rotation => "w/o L2 Rotation loss",
            Ablation::Segmentation => "w/o Segmentation",
            Ablation::GraphConv => "w/o Graph Conv 1, 2",
            Ablation::SecondPhase => "w/o Graph Conv 2",
            Ablation::Image => "w/o Image Feature",
            Ablation::Global => "w/o Global Feature",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation '{s}' (expected l2rot, seg, gconv1, gconv2, img or global)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub net: NetConfig,
    pub weights: LossWeights,
    pub tau: f64,
    pub chamfer_form: ChamferForm,
    pub seg_lr: f64,
    pub lr: f64,
    pub seg_epochs: usize,
    pub epochs: usize,
    pub batch: usize,
    /// Sorted, without duplicates.
    pub ablations: Vec<Ablation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            out: PathBuf::from("runs/default"),
            seed: 0,
            net: NetConfig::default(),
            weights: LossWeights::default(),
            tau: PART_ACCURACY_THRESHOLD,
            chamfer_form: ChamferForm::Squared,
            seg_lr: 1e-3,
            lr: 1e-3,
            seg_epochs: 30,
            epochs: 60,
            batch: 8,
            ablations: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("key '{key}' expects true or false, got '{value}'"))),
    }
}

impl RunConfig {
    pub fn has(&self, ablation: Ablation) -> bool {
        self.ablations.contains(&ablation)
    }

    pub fn switches(&self) -> PoseSwitches {
        PoseSwitches {
            no_graph: self.has(Ablation::GraphConv),
            no_second_phase: self.has(Ablation::SecondPhase),
            no_image: self.has(Ablation::Image),
            no_global: self.has(Ablation::Global),
        }
    }

    /// Loss weights after ablations.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.has(Ablation::L2Rotation) {
            w.l2_rotation = 0.0;
        }
        w
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "grid" => self.net.grid = parse(key, v)?,
            "patch" => self.net.patch = parse(key, v)?,
            "patch_width" => self.net.patch_width = parse(key, v)?,
            "point_hidden" => self.net.point_hidden = parse(key, v)?,
            "feature" => self.net.feature = parse(key, v)?,
            "image_width" => self.net.image_width = parse(key, v)?,
            "mask_width" => self.net.mask_width = parse(key, v)?,
            "mask_decoder_hidden" => self.net.mask_decoder_hidden = parse(key, v)?,
            "pose_hidden" => self.net.pose_hidden = parse(key, v)?,
            "k_neighbors" => self.net.k_neighbors = parse(key, v)?,
            "share_message_weights" => self.net.share_message_weights = parse_bool(key, v)?,
            "lambda_translation" => self.weights.translation = parse(key, v)?,
            "lambda_chamfer" => self.weights.chamfer = parse(key, v)?,
            "lambda_l2_rotation" => self.weights.l2_rotation = parse(key, v)?,
            "lambda_shape" => self.weights.shape = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "chamfer_form" => self.chamfer_form = v.parse()?,
            "seg_lr" => self.seg_lr = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "seg_epochs" => self.seg_epochs = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "ablate" => {
                let mut list = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                    .map(Ablation::from_str)
                    .collect::<Result<Vec<_>>>()?;
                list.sort_unstable();
                list.dedup();
                self.ablations = list;
            }
            other => return Err(Error::invalid(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::invalid(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override '{}' is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        for (name, v) in [("lr", self.lr), ("seg_lr", self.seg_lr), ("tau", self.tau)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let w = &self.weights;
        if [w.translation, w.chamfer, w.l2_rotation, w.shape].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let n = &self.net;
        let w = &self.weights;
        let ablate: Vec<&str> = self.ablations.iter().map(|a| a.key()).collect();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("dataset", self.dataset.display().to_string());
        put("out", self.out.display().to_string());
        put("seed", self.seed.to_string());
        put("grid", n.grid.to_string());
        put("patch", n.patch.to_string());
        put("patch_width", n.patch_width.to_string());
        put("point_hidden", n.point_hidden.to_string());
        put("feature", n.feature.to_string());
        put("image_width", n.image_width.to_string());
        put("mask_width", n.mask_width.to_string());
        put("mask_decoder_hidden", n.mask_decoder_hidden.to_string());
        put("pose_hidden", n.pose_hidden.to_string());
        put("k_neighbors", n.k_neighbors.to_string());
        put("share_message_weights", n.share_message_weights.to_string());
        put("lambda_translation", format!("{:?}", w.translation));
        put("lambda_chamfer", format!("{:?}", w.chamfer));
        put("lambda_l2_rotation", format!("{:?}", w.l2_rotation));
        put("lambda_shape", format!("{:?}", w.shape));
        put("tau", format!("{:?}", self.tau));
        put(
            "chamfer_form",
            match self.chamfer_form {
                ChamferForm::Squared => "squared",
                ChamferForm::L1 => "l1",
            }
            .to_string(),
        );
        put("seg_lr", format!("{:?}", self.seg_lr));
        put("lr", format!("{:?}", self.lr));
        put("seg_epochs", self.seg_epochs.to_string());
        put("epochs", self.epochs.to_string());
        put("batch", self.batch.to_string());
        put("ablate", ablate.join(","));
        s
    }
}
