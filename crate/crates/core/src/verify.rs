//! Self-checks: finite-difference gradients, assignment oracle, loss and
//! metric identities, the symmetric-part property and structural invariants.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{brute_force_assignment, hungarian, CostMatrix};
use crate::autodiff::gradcheck::grad_check_with_params;
use crate::autodiff::{CheckInput, Fault, Graph, NodeId, ParamStore};
use crate::datagen::{generate_shape, SyntheticSpec, Template};
use crate::error::Result;
use crate::geometry::quat::{mat_mul, rot_x};
use crate::geometry::{chamfer_l1, chamfer_sq, PartPose, PointCloud, UnitQuaternion, Vec3};
use crate::losses::{
    pose_loss_nodes, rotation_chamfer_loss, rotation_l2_loss, soft_iou_loss, total_pose_loss, LossWeights,
};
use crate::metrics::{part_accuracy, shape_chamfer, ChamferForm};
use crate::nets::{build_within_class_edges, NetConfig, PoseNet, PoseSwitches, SegNet};
use crate::parts::{build_instance_onehots, EquivalenceClass, ShapeRecord, MAX_PARTS};

pub const GRAD_STEP: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check: verdict, name, measured value, tolerance, detail.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<34} measured={:<12.3e} tol={:<9.1e} {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                format!("{}/{}", c.group, c.name),
                c.measured,
                c.tolerance,
                c.detail
            ));
        }
        let failed = self.failures().count();
        out.push_str(&format!("{} checks, {failed} failed, {:.1}s\n", self.checks.len(), self.seconds));
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Random instances per differentiable operation.
    pub grad_instances: usize,
    pub assignment_trials: usize,
    pub seed: u64,
    /// Corrupts backward passes, to show the suite notices.
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            grad_instances: 100,
            assignment_trials: 200,
            seed: 0,
            fault: None,
        }
    }
}

fn check(group: &'static str, name: impl Into<String>, measured: f64, tolerance: f64, passed: bool, detail: String) -> Check {
    Check {
        group,
        name: name.into(),
        measured,
        tolerance,
        passed,
        detail,
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values with magnitude in `[margin, 1)` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Matrix whose every column has entries at least `gap` apart, so argmax
/// does not change under small perturbations.
fn separated_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        let mut levels: Vec<f64> = (0..rows).map(|r| r as f64 * 2.0 * gap).collect();
        for i in (1..rows).rev() {
            levels.swap(i, rng.gen_range(0..=i));
        }
        let shift = rng.gen_range(-1.0..1.0);
        for r in 0..rows {
            out[r * cols + c] = levels[r] + shift + rng.gen_range(0.0..gap * 0.5);
        }
    }
    out
}

/// Clouds whose nearest neighbours in both directions win by a margin.
fn stable_chamfer_pair(rng: &mut ChaCha8Rng, na: usize, nb: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let a = uniform(rng, na * 3, -1.0, 1.0);
        let b = uniform(rng, nb * 3, -1.0, 1.0);
        if nn_margin(&a, &b) > 0.02 && nn_margin(&b, &a) > 0.02 {
            return (a, b);
        }
    }
}

fn nn_margin(from: &[f64], to: &[f64]) -> f64 {
    let mut worst = f64::INFINITY;
    for p in from.chunks(3) {
        let mut d: Vec<f64> = to.chunks(3).map(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum()).collect();
        d.sort_by(f64::total_cmp);
        if d.len() > 1 {
            worst = worst.min(d[1] - d[0]);
        }
    }
    worst
}

type Builder = Box<dyn Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId>>;
type Instance = (Vec<CheckInput>, Builder);
type InstanceMaker = fn(&mut ChaCha8Rng) -> Instance;

fn sq(g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
    Ok(g.sum_sq(x))
}

fn inputs(specs: Vec<(&[usize], Vec<f64>)>) -> Vec<CheckInput> {
    specs.into_iter().map(|(s, v)| CheckInput::new(s, v)).collect()
}

/// Random instance generators for every differentiable operation. Outputs
/// are reduced through a sum of squares so upstream gradients vary.
fn op_instances() -> Vec<(&'static str, InstanceMaker)> {
    vec![
        ("linear_vector", |r| {
            (
                inputs(vec![(&[4], uniform(r, 4, -1.0, 1.0)), (&[3, 4], uniform(r, 12, -1.0, 1.0)), (&[3], uniform(r, 3, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.linear(x[0], x[1], x[2])?;
                    sq(g, y)
                }),
            )
        }),
        ("linear_rows", |r| {
            (
                inputs(vec![(&[3, 4], uniform(r, 12, -1.0, 1.0)), (&[2, 4], uniform(r, 8, -1.0, 1.0)), (&[2], uniform(r, 2, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.linear(x[0], x[1], x[2])?;
                    sq(g, y)
                }),
            )
        }),
        ("relu", |r| {
            (
                inputs(vec![(&[6], away_from_zero(r, 6, 0.05))]),
                Box::new(|g, x| {
                    let y = g.relu(x[0]);
                    sq(g, y)
                }),
            )
        }),
        ("add", |r| {
            (
                inputs(vec![(&[5], uniform(r, 5, -1.0, 1.0)), (&[5], uniform(r, 5, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.add(x[0], x[1])?;
                    sq(g, y)
                }),
            )
        }),
        ("sub", |r| {
            (
                inputs(vec![(&[5], uniform(r, 5, -1.0, 1.0)), (&[5], uniform(r, 5, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.sub(x[0], x[1])?;
                    sq(g, y)
                }),
            )
        }),
        ("mul", |r| {
            (
                inputs(vec![(&[5], uniform(r, 5, -1.0, 1.0)), (&[5], uniform(r, 5, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.mul(x[0], x[1])?;
                    sq(g, y)
                }),
            )
        }),
        ("scale", |r| {
            let f = r.gen_range(-2.0..2.0);
            (
                inputs(vec![(&[5], uniform(r, 5, -1.0, 1.0))]),
                Box::new(move |g, x| {
                    let y = g.scale(x[0], f);
                    sq(g, y)
                }),
            )
        }),
        ("sum", |r| {
            (
                inputs(vec![(&[2, 3], uniform(r, 6, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.sum(x[0]);
                    sq(g, y)
                }),
            )
        }),
        ("add_all", |r| {
            (
                inputs(vec![(&[4], uniform(r, 4, -1.0, 1.0)), (&[4], uniform(r, 4, -1.0, 1.0)), (&[4], uniform(r, 4, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.add_all(x)?;
                    sq(g, y)
                }),
            )
        }),
        ("sum_sq", |r| (inputs(vec![(&[6], uniform(r, 6, -1.0, 1.0))]), Box::new(|g, x| Ok(g.sum_sq(x[0]))))),
        ("norm", |r| {
            (
                inputs(vec![(&[4], away_from_zero(r, 4, 0.2))]),
                Box::new(|g, x| {
                    let y = g.norm(x[0]);
                    sq(g, y)
                }),
            )
        }),
        ("concat", |r| {
            (
                inputs(vec![(&[3], uniform(r, 3, -1.0, 1.0)), (&[2], uniform(r, 2, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.concat(x)?;
                    let w = g.constant(&[5], vec![1.0, -2.0, 0.5, 3.0, -1.0])?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("concat_cols", |r| {
            (
                inputs(vec![(&[2, 3], uniform(r, 6, -1.0, 1.0)), (&[2, 2], uniform(r, 4, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.concat_cols(x)?;
                    let w = g.constant(&[2, 5], (0..10).map(|i| i as f64 - 4.5).collect())?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("concat_rows", |r| {
            (
                inputs(vec![(&[2, 3], uniform(r, 6, -1.0, 1.0)), (&[1, 3], uniform(r, 3, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.concat_rows(x)?;
                    let w = g.constant(&[3, 3], (0..9).map(|i| i as f64 - 4.0).collect())?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("row", |r| {
            (
                inputs(vec![(&[3, 4], uniform(r, 12, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.row(x[0], 1)?;
                    sq(g, y)
                }),
            )
        }),
        ("reshape", |r| {
            (
                inputs(vec![(&[2, 3], uniform(r, 6, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.reshape(x[0], &[3, 2])?;
                    let w = g.constant(&[3, 2], vec![1.0, 2.0, 3.0, -1.0, -2.0, 0.5])?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("max_rows", |r| {
            (
                inputs(vec![(&[4, 3], separated_columns(r, 4, 3, 0.05))]),
                Box::new(|g, x| {
                    let y = g.max_rows(x[0])?;
                    sq(g, y)
                }),
            )
        }),
        ("mean_rows", |r| {
            (
                inputs(vec![(&[4, 3], uniform(r, 12, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.mean_rows(x[0])?;
                    sq(g, y)
                }),
            )
        }),
        ("set_max_pool", |r| {
            let m = separated_columns(r, 3, 4, 0.05);
            (
                inputs(vec![(&[4], m[0..4].to_vec()), (&[4], m[4..8].to_vec()), (&[4], m[8..12].to_vec())]),
                Box::new(|g, x| {
                    let y = g.set_max_pool(x)?;
                    sq(g, y)
                }),
            )
        }),
        ("set_mean_pool", |r| {
            (
                inputs(vec![(&[4], uniform(r, 4, -1.0, 1.0)), (&[4], uniform(r, 4, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.set_mean_pool(x)?;
                    sq(g, y)
                }),
            )
        }),
        ("softmax_cols", |r| {
            (
                inputs(vec![(&[3, 4], uniform(r, 12, -2.0, 2.0))]),
                Box::new(|g, x| {
                    let y = g.softmax_cols(x[0])?;
                    let w = g.constant(&[3, 4], (0..12).map(|i| (i % 5) as f64 - 2.0).collect())?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("softmax_over_set", |r| {
            (
                inputs(vec![(&[4], uniform(r, 4, -2.0, 2.0)), (&[4], uniform(r, 4, -2.0, 2.0)), (&[4], uniform(r, 4, -2.0, 2.0))]),
                Box::new(|g, x| {
                    let ys = g.softmax_over_set(x)?;
                    let y = g.concat(&ys)?;
                    let w = g.constant(&[12], (0..12).map(|i| (i % 5) as f64 - 2.0).collect())?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("gather_rows", |r| {
            (
                inputs(vec![(&[4, 3], uniform(r, 12, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.gather_rows(x[0], &[2, 0, 2, 1])?;
                    sq(g, y)
                }),
            )
        }),
        ("scatter_mean", |r| {
            (
                inputs(vec![(&[5, 3], uniform(r, 15, -1.0, 1.0)), (&[4, 3], uniform(r, 12, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.scatter_mean(x[0], &[0, 2, 0, 1, 0], x[1])?;
                    sq(g, y)
                }),
            )
        }),
        ("tile_rows", |r| {
            (
                inputs(vec![(&[3], uniform(r, 3, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.tile_rows(x[0], 3)?;
                    let w = g.constant(&[3, 3], (0..9).map(|i| i as f64 - 4.0).collect())?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("normalize_rows", |r| {
            (
                inputs(vec![(&[3, 4], away_from_zero(r, 12, 0.2))]),
                Box::new(|g, x| {
                    let y = g.normalize_rows(x[0])?;
                    let w = g.constant(&[3, 4], (0..12).map(|i| (i % 3) as f64 - 1.0).collect())?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("rotate", |r| {
            let q = UnitQuaternion::random(r).as_array().to_vec();
            (
                inputs(vec![(&[4], q), (&[5, 3], uniform(r, 15, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.rotate(x[0], x[1])?;
                    let w = g.constant(&[5, 3], (0..15).map(|i| (i % 4) as f64 - 1.5).collect())?;
                    let z = g.mul(y, w)?;
                    sq(g, z)
                }),
            )
        }),
        ("translate", |r| {
            (
                inputs(vec![(&[4, 3], uniform(r, 12, -1.0, 1.0)), (&[3], uniform(r, 3, -1.0, 1.0))]),
                Box::new(|g, x| {
                    let y = g.translate(x[0], x[1])?;
                    sq(g, y)
                }),
            )
        }),
        ("chamfer_sq", |r| {
            let (a, b) = stable_chamfer_pair(r, 6, 5);
            (inputs(vec![(&[6, 3], a), (&[5, 3], b)]), Box::new(|g, x| g.chamfer_sq(x[0], x[1])))
        }),
        ("soft_iou", |r| {
            let target: Vec<f64> = (0..8).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            (
                inputs(vec![(&[8], uniform(r, 8, 0.05, 0.95))]),
                Box::new(move |g, x| g.soft_iou(x[0], &target, 1e-6)),
            )
        }),
        ("translation_loss", |r| {
            let target = uniform(r, 3, -1.0, 1.0);
            let mut pred = target.clone();
            for (p, d) in pred.iter_mut().zip(away_from_zero(r, 3, 0.1)) {
                *p += d;
            }
            (
                inputs(vec![(&[3], pred)]),
                Box::new(move |g, x| {
                    let t = g.constant(&[3], target.clone())?;
                    let d = g.sub(x[0], t)?;
                    Ok(g.norm(d))
                }),
            )
        }),
        ("pose_loss", pose_loss_instance),
    ]
}

/// Three well-separated parts with small pose errors, so nearest-neighbour
/// pairings and the class matching stay fixed under perturbation.
fn pose_loss_instance(r: &mut ChaCha8Rng) -> Instance {
    let clouds: Vec<PointCloud> = (0..3)
        .map(|_| PointCloud::new((0..4).map(|k| [k as f64 * 0.4 - 0.6 + r.gen_range(-0.02..0.02), r.gen_range(-0.1..0.1), r.gen_range(-0.1..0.1)]).collect()))
        .collect();
    let gt: Vec<PartPose> = (0..3)
        .map(|i| PartPose::new(UnitQuaternion::random(r), [i as f64 * 3.0, r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)]))
        .collect();
    let mut t = Vec::new();
    let mut q = Vec::new();
    for p in &gt {
        t.extend(p.translation.iter().map(|v| v + r.gen_range(-0.05..0.05)));
        let axis: Vec3 = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let nudge = UnitQuaternion::from_axis_angle(axis, r.gen_range(0.02..0.08)).unwrap_or(UnitQuaternion::IDENTITY);
        q.extend(p.rotation.compose(&nudge).as_array().iter().map(|v| v * 1.1));
    }
    let classes: Vec<EquivalenceClass> = (0..3).map(|i| EquivalenceClass { representative: i, members: vec![i] }).collect();
    (
        inputs(vec![(&[3, 3], t), (&[3, 4], q)]),
        Box::new(move |g, x| {
            let qn = g.normalize_rows(x[1])?;
            let ts = (0..3).map(|i| g.row(x[0], i)).collect::<Result<Vec<_>>>()?;
            let qs = (0..3).map(|i| g.row(qn, i)).collect::<Result<Vec<_>>>()?;
            let (nodes, _) = pose_loss_nodes(g, &ts, &qs, &clouds, &gt, &classes, &LossWeights::default())?;
            Ok(nodes.total)
        }),
    )
}

fn tiny_net() -> NetConfig {
    NetConfig {
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
    }
}

/// Gradient of the decoded poses with respect to the node features, through
/// both message-passing phases of a small network.
fn pose_net_check(opts: &VerifyOptions) -> Result<Check> {
    let cfg = tiny_net();
    let mut store = ParamStore::new();
    let net = PoseNet::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6e65_7473))?;
    let d = cfg.node_width();
    let classes = vec![
        EquivalenceClass { representative: 0, members: vec![0, 1] },
        EquivalenceClass { representative: 2, members: vec![2] },
    ];
    let mut worst = 0.0f64;
    let mut failed = 0;
    let instances = opts.grad_instances;
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64) ^ 0x706f_7365);
        let f0 = uniform(&mut rng, 3 * d, -1.0, 1.0);
        let fault = opts.fault;
        let classes = classes.clone();
        let net = net.clone();
        let report = grad_check_with_params(
            Some(&store),
            move |g, x| {
                if let Some(f) = fault {
                    g.inject_fault(f);
                }
                let out = net.forward_from_features(g, x[0], &classes, &PoseSwitches::default())?;
                let mut parts = Vec::new();
                for phase in &out.phases {
                    parts.extend(phase.translations.iter().copied());
                    parts.extend(phase.rotations.iter().copied());
                }
                let all = g.concat(&parts)?;
                Ok(g.sum_sq(all))
            },
            &[CheckInput::new(&[3, d], f0)],
            GRAD_STEP,
            GRAD_TOLERANCE,
        )?;
        worst = worst.max(report.max_rel_error);
        failed += usize::from(!report.passed());
    }
    Ok(check(
        "grad",
        "pose_net_features",
        worst,
        GRAD_TOLERANCE,
        failed == 0,
        format!("{instances} instances, {failed} failed"),
    ))
}

/// Central-difference checks of every differentiable operation.
pub fn gradient_checks(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (i, (name, make)) in op_instances().into_iter().enumerate() {
        let mut worst = 0.0f64;
        let mut failed = 0;
        let mut entries = 0;
        for k in 0..opts.grad_instances {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((i as u64) << 32) ^ k as u64);
            let (inputs, build) = make(&mut rng);
            let fault = opts.fault;
            let report = grad_check_with_params(
                None,
                |g, x| {
                    if let Some(f) = fault {
                        g.inject_fault(f);
                    }
                    build(g, x)
                },
                &inputs,
                GRAD_STEP,
                GRAD_TOLERANCE,
            )?;
            worst = worst.max(report.max_rel_error);
            entries += report.entries;
            failed += usize::from(!report.passed());
        }
        out.push(check(
            "grad",
            name,
            worst,
            GRAD_TOLERANCE,
            failed == 0,
            format!("{} instances, {entries} entries, {failed} failed", opts.grad_instances),
        ));
    }
    out.push(pose_net_check(opts)?);
    Ok(out)
}

/// Hungarian against permutation enumeration on random 7×7 matrices, both
/// continuous and small-integer (tie-heavy).
pub fn assignment_checks(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4855_4e47);
    let mut out = Vec::new();
    for (name, integer) in [("hungarian_vs_enumeration", false), ("hungarian_vs_enumeration_ties", true)] {
        let mut mismatches = 0;
        let mut worst = 0.0f64;
        for _ in 0..opts.assignment_trials {
            let values: Vec<f64> = (0..49)
                .map(|_| if integer { rng.gen_range(0..5) as f64 } else { rng.gen_range(0.0..10.0) })
                .collect();
            let m = CostMatrix::new(7, values)?;
            let fast = m.total(&hungarian(&m));
            let slow = m.total(&brute_force_assignment(&m)?);
            worst = worst.max((fast - slow).abs());
            mismatches += usize::from(fast != slow);
        }
        out.push(check(
            "oracle",
            name,
            worst,
            0.0,
            mismatches == 0,
            format!("{} matrices of 7×7, {mismatches} differ", opts.assignment_trials),
        ));
    }
    Ok(out)
}

fn brute_chamfer(a: &[Vec3], b: &[Vec3], squared: bool) -> f64 {
    let side = |xs: &[Vec3], ys: &[Vec3]| {
        let mut s = 0.0;
        for x in xs {
            let mut best = f64::MAX;
            for y in ys {
                let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
                let d = if squared { d2 } else { d2.sqrt() };
                best = best.min(d);
            }
            s += best;
        }
        s / xs.len() as f64
    };
    side(a, b) + side(b, a)
}

fn sample_shapes(seed: u64) -> Result<Vec<ShapeRecord>> {
    let spec = SyntheticSpec {
        points_per_part: 48,
        dense_factor: 2,
        grid: 8,
        ..SyntheticSpec::default()
    };
    [Template::Table, Template::Chair, Template::Cabinet]
        .iter()
        .enumerate()
        .map(|(i, t)| generate_shape(&spec, *t, seed.wrapping_add(i as u64)))
        .collect()
}

/// Reverses member order inside every class: `out[members[k]] = in[members[n-1-k]]`.
fn permute_within_classes<T: Clone>(items: &[T], classes: &[EquivalenceClass]) -> Vec<T> {
    let mut out = items.to_vec();
    for c in classes {
        for (k, &m) in c.members.iter().enumerate() {
            out[m] = items[c.members[c.members.len() - 1 - k]].clone();
        }
    }
    out
}

fn owned_clouds(record: &ShapeRecord) -> Vec<PointCloud> {
    record.parts.iter().map(|p| p.cloud.clone()).collect()
}

/// Loss identities at the ground truth and under within-class permutation.
pub fn loss_checks(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let shapes = sample_shapes(opts.seed)?;
    let weights = LossWeights::default();
    let mut pose_zero = 0.0f64;
    let mut iou_gap = 0.0f64;
    let mut perm_pose = true;
    let mut perm_iou = true;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4c4f_5353);
    for s in &shapes {
        let clouds = owned_clouds(s);
        pose_zero = pose_zero.max(total_pose_loss(&s.poses, &s.poses, &clouds, &s.classes, &weights)?.total.abs());
        let gt_soft: Vec<Vec<f64>> = s.masks.iter().map(|m| m.to_f64()).collect();
        iou_gap = iou_gap.max((soft_iou_loss(&gt_soft, &s.masks, &s.classes)? + 1.0).abs());

        let random: Vec<PartPose> = (0..s.num_parts())
            .map(|_| PartPose::new(UnitQuaternion::random(&mut rng), [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        for pred in [s.poses.clone(), random] {
            let a = total_pose_loss(&pred, &s.poses, &clouds, &s.classes, &weights)?;
            let b = total_pose_loss(&permute_within_classes(&pred, &s.classes), &s.poses, &clouds, &s.classes, &weights)?;
            perm_pose &= a == b;
        }
        let soft: Vec<Vec<f64>> = (0..s.num_parts()).map(|_| uniform(&mut rng, s.depth.values.len(), 0.0, 1.0)).collect();
        for pred in [gt_soft.clone(), soft] {
            let a = soft_iou_loss(&pred, &s.masks, &s.classes)?;
            let b = soft_iou_loss(&permute_within_classes(&pred, &s.classes), &s.masks, &s.classes)?;
            perm_iou &= a == b;
        }
    }
    let n = shapes.len();
    Ok(vec![
        check("identity", "pose_loss_at_ground_truth", pose_zero, 1e-9, pose_zero <= 1e-9, format!("{n} shapes")),
        check("identity", "soft_iou_loss_at_ground_truth", iou_gap, 1e-6, iou_gap <= 1e-6, format!("{n} shapes, target -1 per part")),
        check("identity", "pose_loss_class_permutation", 0.0, 0.0, perm_pose, format!("{n} shapes, exact equality")),
        check("identity", "soft_iou_class_permutation", 0.0, 0.0, perm_iou, format!("{n} shapes, exact equality")),
    ])
}

/// Metric identities and Chamfer against a double loop.
pub fn metric_checks(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let shapes = sample_shapes(opts.seed ^ 0x11)?;
    let mut pa_ok = true;
    let mut sc_max = 0.0f64;
    for s in &shapes {
        let clouds = owned_clouds(s);
        let pa = part_accuracy(&s.poses, &s.poses, &clouds, &s.classes, &s.visible(), 0.1, ChamferForm::Squared)?;
        pa_ok &= pa.fraction() == 1.0;
        sc_max = sc_max.max(shape_chamfer(&s.poses, &s.poses, &clouds)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4348_414d);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let na = rng.gen_range(1..=50);
        let nb = rng.gen_range(1..=50);
        let a: Vec<Vec3> = (0..na).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let b: Vec<Vec3> = (0..nb).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let mut g = Graph::new();
        let an = g.constant(&[na, 3], a.iter().flatten().copied().collect())?;
        let bn = g.constant(&[nb, 3], b.iter().flatten().copied().collect())?;
        let node = g.chamfer_sq(an, bn)?;
        let sq_ref = brute_chamfer(&a, &b, true);
        worst = worst
            .max((chamfer_sq(&a, &b) - sq_ref).abs())
            .max((g.scalar(node) - sq_ref).abs())
            .max((chamfer_l1(&a, &b) - brute_chamfer(&a, &b, false)).abs());
    }
    Ok(vec![
        check("identity", "part_accuracy_at_ground_truth", if pa_ok { 1.0 } else { 0.0 }, 0.0, pa_ok, "expects 1.0".into()),
        check("identity", "shape_chamfer_at_ground_truth", sc_max, 0.0, sc_max == 0.0, "expects 0".into()),
        check("oracle", "chamfer_vs_double_loop", worst, 1e-12, worst <= 1e-12, "100 cloud pairs of ≤ 50 points".into()),
    ])
}

/// A cylinder sampled in rings of 12 points, so a rotation by a multiple of
/// 30° about its axis maps the sample set onto itself.
pub fn symmetric_cylinder(rings: usize, radius: f64, length: f64) -> PointCloud {
    let mut points = Vec::with_capacity(rings * 12);
    for r in 0..rings {
        let x = -length / 2.0 + length * r as f64 / (rings - 1).max(1) as f64;
        for k in 0..12 {
            let a = std::f64::consts::TAU * k as f64 / 12.0;
            points.push([x, radius * a.cos(), radius * a.sin()]);
        }
    }
    PointCloud::new(points)
}

/// Chamfer rotation loss ignores an error about the symmetry axis while the
/// point-wise form does not.
pub fn symmetry_checks(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let part = symmetric_cylinder(11, 0.15, 1.0);
    let about_axis = rot_x(std::f64::consts::FRAC_PI_2);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5359_4d4d);
    let mut worst_c = 0.0f64;
    let mut least_e = f64::INFINITY;
    for _ in 0..20 {
        let gt = UnitQuaternion::random(&mut rng);
        let pred = UnitQuaternion::from_matrix(&mat_mul(&gt.to_matrix(), &about_axis))?;
        worst_c = worst_c.max(rotation_chamfer_loss(&pred, &gt, &part));
        least_e = least_e.min(rotation_l2_loss(&pred, &gt, &part));
    }
    Ok(vec![
        check("symmetry", "chamfer_rotation_loss", worst_c, 1e-4, worst_c < 1e-4, "90° error about the axis, 20 poses".into()),
        check("symmetry", "l2_rotation_loss", least_e, 0.01, least_e > 0.01, "same errors; must exceed the tolerance".into()),
    ])
}

/// Softmax disjointness, unit quaternions, within-class edges and the
/// isolated-node rule on freshly initialized networks.
pub fn structural_checks(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let shapes = sample_shapes(opts.seed ^ 0x22)?;
    let cfg = tiny_net();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5354_5255);
    let mut seg_store = ParamStore::new();
    let seg = SegNet::new(&mut seg_store, &cfg, &mut rng)?;
    let mut pose_store = ParamStore::new();
    let pose = PoseNet::new(&mut pose_store, &cfg, &mut rng)?;

    let mut sum_dev = 0.0f64;
    let mut quat_dev = 0.0f64;
    let mut edges_ok = true;
    let mut isolated_ok = true;
    for s in &shapes {
        let onehots = build_instance_onehots(&s.classes)?;
        let clouds = s.clouds();
        let mut g = Graph::with_params(&seg_store);
        let out = seg.forward(&mut g, &s.depth.values, &clouds, &onehots, false)?;
        for cell in 0..s.depth.values.len() {
            let total: f64 = std::iter::once(out.background).chain(out.masks.iter().copied()).map(|m| g.value(m)[cell]).sum();
            sum_dev = sum_dev.max((total - 1.0).abs());
        }
        let masks: Vec<Vec<f64>> = out.masks.iter().map(|&m| g.value(m).to_vec()).collect();

        let mut g = Graph::with_params(&pose_store);
        let result = pose.forward(&mut g, &s.depth.values, &masks, &clouds, &onehots, &s.classes, &PoseSwitches::default())?;
        for phase in &result.phases {
            for &q in &phase.rotations {
                let n = g.value(q).iter().map(|v| v * v).sum::<f64>().sqrt();
                quat_dev = quat_dev.max((n - 1.0).abs());
            }
        }
        let e1 = build_within_class_edges(&s.classes);
        let expected: usize = s.classes.iter().map(|c| c.len() * (c.len() - 1)).sum();
        edges_ok &= e1.len() == expected
            && e1.iter().all(|&(i, j)| i != j && s.parts[i].class_id == s.parts[j].class_id);

        let isolated = pose.forward(
            &mut g,
            &s.depth.values,
            &masks,
            &clouds,
            &onehots,
            &s.classes,
            &PoseSwitches { no_graph: true, ..PoseSwitches::default() },
        )?;
        let f0 = g.value(isolated.node_features).to_vec();
        isolated_ok &= isolated.phases.iter().all(|p| g.value(p.hidden[1]) == f0.as_slice() && g.value(p.hidden[0]) == f0.as_slice());
    }
    debug_assert!(shapes.iter().all(|s| s.num_parts() <= MAX_PARTS));
    Ok(vec![
        check("structure", "mask_softmax_sums_to_one", sum_dev, 1e-6, sum_dev <= 1e-6, "every pixel".into()),
        check("structure", "unit_quaternions", quat_dev, 1e-6, quat_dev <= 1e-6, "both phases".into()),
        check("structure", "within_class_edges", 0.0, 0.0, edges_ok, "pairs share a class, no self-edges".into()),
        check("structure", "isolated_nodes_keep_features", 0.0, 0.0, isolated_ok, "f² = f¹ = f⁰ exactly".into()),
    ])
}

fn timed(report: &mut Report, start: Instant, checks: Result<Vec<Check>>) -> Result<()> {
    report.checks.extend(checks?);
    report.seconds = start.elapsed().as_secs_f64();
    Ok(())
}

/// Gradient checks only.
pub fn run_gradcheck(opts: &VerifyOptions) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::default();
    timed(&mut report, start, gradient_checks(opts))?;
    Ok(report)
}

/// Assignment and Chamfer oracles only.
pub fn run_oracles(opts: &VerifyOptions) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::default();
    timed(&mut report, start, assignment_checks(opts))?;
    timed(&mut report, start, metric_checks(opts).map(|v| v.into_iter().filter(|c| c.group == "oracle").collect()))?;
    Ok(report)
}

pub fn run_all(opts: &VerifyOptions) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::default();
    timed(&mut report, start, gradient_checks(opts))?;
    timed(&mut report, start, assignment_checks(opts))?;
    timed(&mut report, start, loss_checks(opts))?;
    timed(&mut report, start, metric_checks(opts))?;
    timed(&mut report, start, symmetry_checks(opts))?;
    timed(&mut report, start, structural_checks(opts))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            grad_instances: 8,
            assignment_trials: 10,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn clean_build_passes() {
        let report = run_all(&quick()).unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn flipped_norm_gradient_is_caught() {
        let report = run_gradcheck(&VerifyOptions {
            fault: Some(Fault::FlipNormGrad),
            ..quick()
        })
        .unwrap();
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"translation_loss"), "{}", report.render());
    }

    #[test]
    fn permutation_helper_reverses_classes() {
        let classes = vec![
            EquivalenceClass { representative: 0, members: vec![0, 2, 3] },
            EquivalenceClass { representative: 1, members: vec![1] },
        ];
        assert_eq!(permute_within_classes(&[10, 11, 12, 13], &classes), vec![13, 11, 12, 10]);
    }
}
