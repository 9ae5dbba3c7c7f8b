//! Two-stage training: part-instance segmentation first, then poses.
//!
//! Every mini-batch averages per-shape gradients. Shapes in a batch are
//! processed concurrently but their gradients are summed in batch order, so
//! results do not depend on the thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Graph, ParamGrads, ParamStore};
use crate::config::{Ablation, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::{PartPose, PointCloud, UnitQuaternion};
use crate::losses::{pose_loss_nodes, soft_iou_loss_node, LossWeights};
use crate::nets::{segnet::argmax_masks, NetConfig, PoseNet, PoseSwitches, SegNet};
use crate::parts::{build_instance_onehots, ShapeRecord};

const SEG_INIT_SALT: u64 = 0x5E6_0001;
const SEG_ORDER_SALT: u64 = 0x5E6_0002;
const POSE_INIT_SALT: u64 = 0x9053_0001;
const POSE_ORDER_SALT: u64 = 0x9053_0002;

/// Per-epoch means of named training quantities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curve {
    pub columns: Vec<String>,
    /// One row per epoch, aligned with `columns`.
    pub rows: Vec<Vec<f64>>,
}

impl Curve {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn last(&self, column: &str) -> Option<f64> {
        let k = self.columns.iter().position(|c| c == column)?;
        self.rows.last().map(|r| r[k])
    }

    pub fn column(&self, column: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == column)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// `epoch,<columns...>` with full-precision values.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_error)?;
        for (epoch, row) in self.rows.iter().enumerate() {
            let mut rec = vec![(epoch + 1).to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::format("csv", e.to_string()))
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

fn map_in_order<T, F>(indices: &[usize], f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        indices.par_iter().map(|&i| f(i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        indices.iter().map(|&i| f(i)).collect()
    }
}

/// Generic mini-batch loop. `item` returns per-item metrics (first entry is
/// the loss) and parameter gradients.
fn run_epochs<F>(store: &mut ParamStore, schedule: &Schedule, count: usize, columns: &[&str], item: F) -> Result<Curve>
where
    F: Fn(&ParamStore, usize) -> Result<(Vec<f64>, ParamGrads)> + Sync,
{
    if count == 0 {
        return Err(Error::invalid("no training shapes"));
    }
    let mut curve = Curve::new(columns);
    let mut adam = Adam::new(store, schedule.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..count).collect();
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut sums = vec![0.0; columns.len()];
        for (step, chunk) in order.chunks(schedule.batch.max(1)).enumerate() {
            let frozen: &ParamStore = store;
            let results = map_in_order(chunk, |i| item(frozen, i));
            let mut total = ParamGrads::zeros_like(store);
            for r in results {
                let (metrics, grads) = r?;
                for (s, m) in sums.iter_mut().zip(&metrics) {
                    *s += m;
                }
                total.accumulate(&grads);
            }
            total.scale(1.0 / chunk.len() as f64);
            if !total.all_finite() {
                return Err(Error::NonFinite(format!("gradient at epoch {}, step {}", epoch + 1, step + 1)));
            }
            adam.step(store, &total);
        }
        let row: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        log::info!("epoch {}/{}: {} = {:.6}", epoch + 1, schedule.epochs, columns[0], row[0]);
        curve.rows.push(row);
    }
    Ok(curve)
}

fn check_finite(value: f64, what: &str, id: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} on shape {id}")))
    }
}

pub fn init_seg(cfg: &NetConfig, seed: u64) -> Result<(SegNet, ParamStore)> {
    let mut store = ParamStore::new();
    let net = SegNet::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed ^ SEG_INIT_SALT))?;
    Ok((net, store))
}

pub fn init_pose(cfg: &NetConfig, seed: u64) -> Result<(PoseNet, ParamStore)> {
    let mut store = ParamStore::new();
    let net = PoseNet::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed ^ POSE_INIT_SALT))?;
    Ok((net, store))
}

fn check_grid(net: &NetConfig, record: &ShapeRecord) -> Result<()> {
    if record.depth.side != net.grid {
        return Err(Error::invalid(format!(
            "shape {} has a {}-pixel grid but the network expects {}",
            record.id, record.depth.side, net.grid
        )));
    }
    Ok(())
}

/// Matched mean negative soft-IoU and its gradients for one shape.
pub fn seg_shape_grads(
    net: &SegNet,
    store: &ParamStore,
    record: &ShapeRecord,
    drop_global: bool,
) -> Result<(f64, ParamGrads)> {
    let onehots = build_instance_onehots(&record.classes)?;
    let mut g = Graph::with_params(store);
    let out = net.forward(&mut g, &record.depth.values, &record.clouds(), &onehots, drop_global)?;
    let (loss, _) = soft_iou_loss_node(&mut g, &out.masks, &record.masks, &record.classes)?;
    let value = check_finite(g.scalar(loss), "segmentation loss", &record.id)?;
    let grads = g.backward(loss)?.param_grads(&g, store);
    Ok((value, grads))
}

pub fn train_seg(
    net: &SegNet,
    store: &mut ParamStore,
    records: &[&ShapeRecord],
    schedule: &Schedule,
    drop_global: bool,
) -> Result<Curve> {
    for r in records {
        check_grid(&net.config, r)?;
    }
    let schedule = Schedule {
        seed: schedule.seed ^ SEG_ORDER_SALT,
        ..*schedule
    };
    run_epochs(store, &schedule, records.len(), &["soft_iou_loss"], |s, i| {
        let (loss, grads) = seg_shape_grads(net, s, records[i], drop_global)?;
        Ok((vec![loss], grads))
    })
}

/// Hard masks, one per part, from the segmentation network.
pub fn predict_masks(net: &SegNet, store: &ParamStore, record: &ShapeRecord, drop_global: bool) -> Result<Vec<Vec<f64>>> {
    check_grid(&net.config, record)?;
    let onehots = build_instance_onehots(&record.classes)?;
    let mut g = Graph::with_params(store);
    let out = net.forward(&mut g, &record.depth.values, &record.clouds(), &onehots, drop_global)?;
    Ok(argmax_masks(&g, &out))
}

/// Soft masks, one per part, from the segmentation network.
pub fn predict_soft_masks(
    net: &SegNet,
    store: &ParamStore,
    record: &ShapeRecord,
    drop_global: bool,
) -> Result<Vec<Vec<f64>>> {
    check_grid(&net.config, record)?;
    let onehots = build_instance_onehots(&record.classes)?;
    let mut g = Graph::with_params(store);
    let out = net.forward(&mut g, &record.depth.values, &record.clouds(), &onehots, drop_global)?;
    Ok(out.masks.iter().map(|&m| g.value(m).to_vec()).collect())
}

pub fn zero_masks(record: &ShapeRecord) -> Vec<Vec<f64>> {
    vec![vec![0.0; record.depth.values.len()]; record.num_parts()]
}

pub const POSE_COLUMNS: [&str; 5] = ["pose_loss", "translation", "chamfer", "l2_rotation", "shape"];

/// Pose loss summed over every phase that ran, with its gradients. Metrics
/// follow [`POSE_COLUMNS`].
pub fn pose_shape_grads(
    net: &PoseNet,
    store: &ParamStore,
    record: &ShapeRecord,
    masks: &[Vec<f64>],
    switches: &PoseSwitches,
    weights: &LossWeights,
) -> Result<(Vec<f64>, ParamGrads)> {
    let onehots = build_instance_onehots(&record.classes)?;
    let clouds = record.clouds();
    let owned: Vec<PointCloud> = clouds.iter().map(|c| (*c).clone()).collect();
    let mut g = Graph::with_params(store);
    let out = net.forward(&mut g, &record.depth.values, masks, &clouds, &onehots, &record.classes, switches)?;
    let mut totals = Vec::with_capacity(out.phases.len());
    let mut metrics = vec![0.0; POSE_COLUMNS.len()];
    for phase in &out.phases {
        let (nodes, _) =
            pose_loss_nodes(&mut g, &phase.translations, &phase.rotations, &owned, &record.poses, &record.classes, weights)?;
        let v = nodes.values(&g);
        for (m, x) in metrics.iter_mut().zip([v.total, v.translation, v.chamfer, v.l2_rotation, v.shape]) {
            *m += x;
        }
        totals.push(nodes.total);
    }
    let loss = g.add_all(&totals)?;
    check_finite(g.scalar(loss), "pose loss", &record.id)?;
    let grads = g.backward(loss)?.param_grads(&g, store);
    Ok((metrics, grads))
}

pub fn train_pose(
    net: &PoseNet,
    store: &mut ParamStore,
    records: &[&ShapeRecord],
    masks: &[Vec<Vec<f64>>],
    schedule: &Schedule,
    switches: &PoseSwitches,
    weights: &LossWeights,
) -> Result<Curve> {
    if masks.len() != records.len() {
        return Err(Error::shape("train_pose", format!("{} shapes, {} mask sets", records.len(), masks.len())));
    }
    for r in records {
        check_grid(&net.config, r)?;
    }
    let schedule = Schedule {
        seed: schedule.seed ^ POSE_ORDER_SALT,
        ..*schedule
    };
    run_epochs(store, &schedule, records.len(), &POSE_COLUMNS, |s, i| {
        pose_shape_grads(net, s, records[i], &masks[i], switches, weights)
    })
}

fn pose_from_values(t: &[f64], q: &[f64]) -> Result<PartPose> {
    let rotation = UnitQuaternion::from_array([q[0], q[1], q[2], q[3]])?.canonical();
    Ok(PartPose::new(rotation, [t[0], t[1], t[2]]))
}

/// Final-phase poses for one shape.
pub fn predict_poses(
    net: &PoseNet,
    store: &ParamStore,
    record: &ShapeRecord,
    masks: &[Vec<f64>],
    switches: &PoseSwitches,
) -> Result<Vec<PartPose>> {
    check_grid(&net.config, record)?;
    let onehots = build_instance_onehots(&record.classes)?;
    let mut g = Graph::with_params(store);
    let out = net.forward(&mut g, &record.depth.values, masks, &record.clouds(), &onehots, &record.classes, switches)?;
    let last = out.last();
    last.translations
        .iter()
        .zip(&last.rotations)
        .map(|(&t, &q)| pose_from_values(g.value(t), g.value(q)))
        .collect()
}

/// Both trained stages plus the settings they were trained with.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: RunConfig,
    /// Absent when segmentation is ablated.
    pub seg: Option<(SegNet, ParamStore)>,
    pub pose: (PoseNet, ParamStore),
}

#[derive(Debug, Clone, Default)]
pub struct TrainCurves {
    pub seg: Option<Curve>,
    pub pose: Curve,
}

impl Pipeline {
    /// Masks the pose stage sees for `record`: segmentation argmax, or zeros
    /// when segmentation is ablated.
    pub fn masks(&self, record: &ShapeRecord) -> Result<Vec<Vec<f64>>> {
        match &self.seg {
            Some((net, store)) => predict_masks(net, store, record, self.config.has(Ablation::Global)),
            None => Ok(zero_masks(record)),
        }
    }

    pub fn predict(&self, record: &ShapeRecord) -> Result<Vec<PartPose>> {
        let masks = self.masks(record)?;
        let (net, store) = &self.pose;
        predict_poses(net, store, record, &masks, &self.config.switches())
    }

    /// Untrained networks for `config`, initialized deterministically.
    pub fn init(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let seg = if config.has(Ablation::Segmentation) { None } else { Some(init_seg(&config.net, config.seed)?) };
        Ok(Self {
            config: config.clone(),
            seg,
            pose: init_pose(&config.net, config.seed)?,
        })
    }

    /// Trains segmentation to completion, then poses on its predicted masks.
    pub fn train(config: &RunConfig, records: &[&ShapeRecord]) -> Result<(Self, TrainCurves)> {
        let (seg, seg_curve) = match train_segmentation(config, records)? {
            Some((trained, curve)) => (Some(trained), Some(curve)),
            None => (None, None),
        };
        let (pipeline, pose_curve) = Self::train_on(config, seg, records)?;
        Ok((
            pipeline,
            TrainCurves {
                seg: seg_curve,
                pose: pose_curve,
            },
        ))
    }

    /// Pose stage on top of an already trained segmentation network, which
    /// must come from [`train_segmentation`] with the same `config`.
    pub fn train_on(config: &RunConfig, seg: Option<(SegNet, ParamStore)>, records: &[&ShapeRecord]) -> Result<(Self, Curve)> {
        config.validate()?;
        if seg.is_some() == config.has(Ablation::Segmentation) {
            return Err(Error::invalid("segmentation network presence does not match the ablation setting"));
        }
        let mut pipeline = Self {
            config: config.clone(),
            seg,
            pose: init_pose(&config.net, config.seed)?,
        };
        if let Some((_, seg_store)) = &pipeline.seg {
            let copied = pipeline.pose.1.copy_matching(seg_store, "seg.f3d.", "pose.f3d.");
            log::debug!("initialized {copied} pose feature arrays from segmentation");
        }
        let masks = map_in_order(&(0..records.len()).collect::<Vec<_>>(), |i| pipeline.masks(records[i]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let schedule = Schedule {
            epochs: config.epochs,
            batch: config.batch,
            lr: config.lr,
            seed: config.seed,
        };
        let switches = config.switches();
        let weights = config.effective_weights();
        let (net, store) = &mut pipeline.pose;
        let curve = train_pose(net, store, records, &masks, &schedule, &switches, &weights)?;
        Ok((pipeline, curve))
    }
}

/// Segmentation stage alone; `None` when it is ablated. Depends only on the
/// network shape, seed, segmentation schedule and the global-feature switch.
pub fn train_segmentation(config: &RunConfig, records: &[&ShapeRecord]) -> Result<Option<((SegNet, ParamStore), Curve)>> {
    config.validate()?;
    if config.has(Ablation::Segmentation) {
        return Ok(None);
    }
    let (net, mut store) = init_seg(&config.net, config.seed)?;
    let schedule = Schedule {
        epochs: config.seg_epochs,
        batch: config.batch,
        lr: config.seg_lr,
        seed: config.seed,
    };
    let curve = train_seg(&net, &mut store, records, &schedule, config.has(Ablation::Global))?;
    Ok(Some(((net, store), curve)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_shape, SyntheticSpec, Template};

    fn tiny_net() -> NetConfig {
        NetConfig {
            grid: 16,
            patch: 4,
            patch_width: 4,
            point_hidden: 8,
            feature: 8,
            image_width: 8,
            mask_width: 8,
            mask_decoder_hidden: 16,
            pose_hidden: 16,
            ..NetConfig::default()
        }
    }

    fn shapes() -> Vec<ShapeRecord> {
        let spec = SyntheticSpec {
            points_per_part: 24,
            dense_factor: 2,
            grid: 16,
            ..SyntheticSpec::default()
        };
        (0..3).map(|s| generate_shape(&spec, Template::Table, s).unwrap()).collect()
    }

    #[test]
    fn training_is_reproducible() {
        let data = shapes();
        let refs: Vec<&ShapeRecord> = data.iter().collect();
        let cfg = RunConfig {
            net: tiny_net(),
            seg_epochs: 2,
            epochs: 2,
            batch: 2,
            seed: 5,
            ..RunConfig::default()
        };
        let (a, ca) = Pipeline::train(&cfg, &refs).unwrap();
        let (b, cb) = Pipeline::train(&cfg, &refs).unwrap();
        assert_eq!(ca.pose, cb.pose);
        assert_eq!(ca.seg, cb.seg);
        assert_eq!(a.predict(&data[0]).unwrap(), b.predict(&data[0]).unwrap());
        assert!(ca.pose.to_csv().unwrap().starts_with("epoch,pose_loss,"));
    }

    #[test]
    fn seg_ablation_skips_stage_one() {
        let data = shapes();
        let refs: Vec<&ShapeRecord> = data.iter().collect();
        let mut cfg = RunConfig {
            net: tiny_net(),
            seg_epochs: 1,
            epochs: 1,
            ..RunConfig::default()
        };
        cfg.set("ablate", "seg").unwrap();
        let (p, curves) = Pipeline::train(&cfg, &refs).unwrap();
        assert!(p.seg.is_none() && curves.seg.is_none());
        assert!(p.masks(&data[0]).unwrap().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let data = shapes();
        let (net, store) = init_seg(&NetConfig::default(), 0).unwrap();
        assert!(predict_masks(&net, &store, &data[0], false).is_err());
    }
}
