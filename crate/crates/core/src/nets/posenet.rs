//! Two-phase graph message passing over parts, decoded into 6-DoF poses.
//!
//! Phase 1 connects parts of the same equivalence class. Its decoded
//! translations define a k-nearest-neighbour graph that phase 2 adds, with a
//! scalar edge flag telling the two edge kinds apart. Both phases start from
//! the same node features `f⁰` and share one pose decoder.

use rand::Rng;

use super::layers::{Dense, GridEncoder, PartEncoder};
use super::NetConfig;
use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::parts::EquivalenceClass;

/// Ordered within-class pairs `(i, j)`, `i ≠ j`, sorted.
pub fn build_within_class_edges(classes: &[EquivalenceClass]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for class in classes {
        for &i in &class.members {
            for &j in &class.members {
                if i != j {
                    edges.push((i, j));
                }
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Each node's `k` nearest other nodes by center distance, capped at
/// `n − 1`, lower index first on ties.
pub fn nearest_neighbours(centers: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let n = centers.len();
    let k = k.min(n.saturating_sub(1));
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((0..3).map(|a| (centers[i][a] - centers[j][a]).powi(2)).sum::<f64>(), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Nearest-neighbour edges made symmetric by adding every reverse edge. Sorted.
pub fn build_knn_edges(centers: &[[f64; 3]], k: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (i, near) in nearest_neighbours(centers, k).into_iter().enumerate() {
        for j in near {
            edges.push((i, j));
            edges.push((j, i));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

#[derive(Debug, Clone, Copy)]
enum MessageLayers {
    /// `[phase][iteration]`.
    Separate([[Dense; 2]; 2]),
    /// One layer per phase, fed a full-width edge feature from the start.
    Shared([Dense; 2]),
}

/// Which parts of the pose network are switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoseSwitches {
    pub no_graph: bool,
    pub no_second_phase: bool,
    pub no_image: bool,
    pub no_global: bool,
}

#[derive(Debug, Clone)]
pub struct PhaseOutput {
    /// Graph the phase ran on, with per-edge flags.
    pub edges: Vec<(usize, usize)>,
    pub flags: Vec<f64>,
    /// `f¹` and `f²`, `[parts, node_width]` each.
    pub hidden: [NodeId; 2],
    /// `[f⁰; f¹; f²]`.
    pub features: NodeId,
    /// `[3]` per part.
    pub translations: Vec<NodeId>,
    /// Unit `[4]` per part, `(w, x, y, z)`.
    pub rotations: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct PoseOutput {
    pub node_features: NodeId,
    pub phases: Vec<PhaseOutput>,
}

impl PoseOutput {
    /// Model output: the last phase that ran.
    pub fn last(&self) -> &PhaseOutput {
        self.phases.last().expect("at least one phase")
    }
}

#[derive(Debug, Clone)]
pub struct PoseNet {
    pub config: NetConfig,
    pub parts: PartEncoder,
    image: GridEncoder,
    mask: GridEncoder,
    messages: MessageLayers,
    hidden: Dense,
    translation: Dense,
    rotation: Dense,
}

impl PoseNet {
    pub const PREFIX: &'static str = "pose";

    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let p = Self::PREFIX;
        let d = cfg.node_width();
        let parts = PartEncoder::new(store, &format!("{p}.f3d"), cfg, rng)?;
        let image = GridEncoder::new(store, &format!("{p}.image"), cfg, cfg.image_width, rng)?;
        let mask = GridEncoder::new(store, &format!("{p}.mask"), cfg, cfg.mask_width, rng)?;
        let messages = if cfg.share_message_weights {
            MessageLayers::Shared([
                Dense::new(store, &format!("{p}.phase1.message"), 3 * d, d, rng)?,
                Dense::new(store, &format!("{p}.phase2.message"), 3 * d, d, rng)?,
            ])
        } else {
            MessageLayers::Separate([
                [
                    Dense::new(store, &format!("{p}.phase1.message1"), 2 * d, d, rng)?,
                    Dense::new(store, &format!("{p}.phase1.message2"), 3 * d, d, rng)?,
                ],
                [
                    Dense::new(store, &format!("{p}.phase2.message1"), 2 * d + 1, d, rng)?,
                    Dense::new(store, &format!("{p}.phase2.message2"), 3 * d, d, rng)?,
                ],
            ])
        };
        Ok(Self {
            config: *cfg,
            parts,
            image,
            mask,
            messages,
            hidden: Dense::new(store, &format!("{p}.decoder.hidden"), 3 * d, cfg.pose_hidden, rng)?,
            translation: Dense::new(store, &format!("{p}.decoder.translation"), cfg.pose_hidden, 3, rng)?,
            rotation: Dense::new(store, &format!("{p}.decoder.rotation"), cfg.pose_hidden, 4, rng)?,
        })
    }

    /// Node features `f⁰ = [f_img; f_mask; f_3d]`, `[parts, node_width]`.
    pub fn encode_parts(
        &self,
        g: &mut Graph<'_>,
        depth: &[f64],
        masks: &[Vec<f64>],
        clouds: &[&PointCloud],
        onehots: &[Vec<f64>],
        switches: &PoseSwitches,
    ) -> Result<NodeId> {
        let n = clouds.len();
        if masks.len() != n || n == 0 {
            return Err(Error::shape("pose encoder", format!("{n} parts but {} masks", masks.len())));
        }
        let image = if switches.no_image {
            g.constant(&[n, self.image.width()], vec![0.0; n * self.image.width()])?
        } else {
            let row = self.image.encode(g, &[depth])?;
            let v = g.reshape(row, &[self.image.width()])?;
            g.tile_rows(v, n)?
        };
        let mask_refs: Vec<&[f64]> = masks.iter().map(Vec::as_slice).collect();
        let mask = self.mask.encode(g, &mask_refs)?;
        let f3d = self.parts.encode(g, clouds, onehots, switches.no_global)?.f3d;
        g.concat_cols(&[image, mask, f3d])
    }

    fn message_layer(&self, phase: usize, iteration: usize) -> Dense {
        match self.messages {
            MessageLayers::Separate(l) => l[phase][iteration],
            MessageLayers::Shared(l) => l[phase],
        }
    }

    /// Two iterations of edge-feature message passing.
    ///
    /// `flags` are the initial edge features for phase 2 and must be `None`
    /// in phase 1. Nodes without outgoing edges keep their feature.
    pub fn message_pass(
        &self,
        g: &mut Graph<'_>,
        f0: NodeId,
        edges: &[(usize, usize)],
        flags: Option<&[f64]>,
        phase: usize,
    ) -> Result<[NodeId; 2]> {
        if edges.is_empty() {
            return Ok([f0, f0]);
        }
        let d = self.config.node_width();
        let e_count = edges.len();
        let sources: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let targets: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let shared = matches!(self.messages, MessageLayers::Shared(_));
        let mut edge_feature = match (flags, shared) {
            (Some(f), false) => Some(g.constant(&[e_count, 1], f.to_vec())?),
            (flags, true) => {
                let mut wide = vec![0.0; e_count * d];
                if let Some(f) = flags {
                    for (k, &v) in f.iter().enumerate() {
                        wide[k * d] = v;
                    }
                }
                Some(g.constant(&[e_count, d], wide)?)
            }
            (None, false) => None,
        };
        let mut f = f0;
        let mut out = [f0; 2];
        for (t, slot) in out.iter_mut().enumerate() {
            let from = g.gather_rows(f, &sources)?;
            let to = g.gather_rows(f, &targets)?;
            let mut inputs = vec![from, to];
            inputs.extend(edge_feature);
            let joined = g.concat_cols(&inputs)?;
            let e = self.message_layer(phase, t).forward_relu(g, joined)?;
            f = g.scatter_mean(e, &sources, f)?;
            edge_feature = Some(e);
            *slot = f;
        }
        Ok(out)
    }

    /// Shared pose decoder on `[f⁰; f¹; f²]` rows.
    pub fn decode(&self, g: &mut Graph<'_>, features: NodeId) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        let n = g.shape(features)[0];
        let h = self.hidden.forward_relu(g, features)?;
        let t = self.translation.forward(g, h)?;
        let q_raw = self.rotation.forward(g, h)?;
        let q = g.normalize_rows(q_raw)?;
        let translations = (0..n).map(|i| g.row(t, i)).collect::<Result<Vec<_>>>()?;
        let rotations = (0..n).map(|i| g.row(q, i)).collect::<Result<Vec<_>>>()?;
        Ok((translations, rotations))
    }

    fn run_phase(
        &self,
        g: &mut Graph<'_>,
        f0: NodeId,
        edges: Vec<(usize, usize)>,
        flags: Vec<f64>,
        phase: usize,
    ) -> Result<PhaseOutput> {
        let hidden = self.message_pass(g, f0, &edges, (phase == 1).then_some(flags.as_slice()), phase)?;
        let features = g.concat_cols(&[f0, hidden[0], hidden[1]])?;
        let (translations, rotations) = self.decode(g, features)?;
        Ok(PhaseOutput {
            edges,
            flags,
            hidden,
            features,
            translations,
            rotations,
        })
    }

    /// Runs both phases from precomputed node features.
    pub fn forward_from_features(
        &self,
        g: &mut Graph<'_>,
        f0: NodeId,
        classes: &[EquivalenceClass],
        switches: &PoseSwitches,
    ) -> Result<PoseOutput> {
        let e1 = if switches.no_graph { Vec::new() } else { build_within_class_edges(classes) };
        let flags1 = vec![0.0; e1.len()];
        let first = self.run_phase(g, f0, e1.clone(), flags1, 0)?;
        let mut phases = vec![first];
        if !(switches.no_second_phase || switches.no_graph) {
            let centers: Vec<[f64; 3]> = phases[0]
                .translations
                .iter()
                .map(|&t| {
                    let v = g.value(t);
                    [v[0], v[1], v[2]]
                })
                .collect();
            let knn = build_knn_edges(&centers, self.config.k_neighbors);
            let mut edges: Vec<(usize, usize)> = e1.iter().chain(&knn).copied().collect();
            edges.sort_unstable();
            edges.dedup();
            let flags = edges.iter().map(|e| if knn.binary_search(e).is_ok() { 1.0 } else { 0.0 }).collect();
            phases.push(self.run_phase(g, f0, edges, flags, 1)?);
        }
        Ok(PoseOutput {
            node_features: f0,
            phases,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        depth: &[f64],
        masks: &[Vec<f64>],
        clouds: &[&PointCloud],
        onehots: &[Vec<f64>],
        classes: &[EquivalenceClass],
        switches: &PoseSwitches,
    ) -> Result<PoseOutput> {
        let f0 = self.encode_parts(g, depth, masks, clouds, onehots, switches)?;
        self.forward_from_features(g, f0, classes, switches)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(shared: bool) -> NetConfig {
        NetConfig {
            grid: 8,
            patch: 4,
            patch_width: 4,
            point_hidden: 8,
            feature: 6,
            image_width: 5,
            mask_width: 4,
            mask_decoder_hidden: 8,
            pose_hidden: 12,
            k_neighbors: 5,
            share_message_weights: shared,
        }
    }

    fn class(members: &[usize]) -> EquivalenceClass {
        EquivalenceClass { representative: members[0], members: members.to_vec() }
    }

    fn features(g: &mut Graph<'_>, n: usize, d: usize, seed: u64) -> NodeId {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.constant(&[n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn within_class_edges() {
        let e = build_within_class_edges(&[class(&[0, 2, 3, 5]), class(&[1]), class(&[4])]);
        assert_eq!(e.len(), 12);
        let same = |i: usize| [0, 2, 3, 5].contains(&i);
        assert!(e.iter().all(|&(i, j)| i != j && same(i) && same(j)));
        assert!(build_within_class_edges(&[class(&[0]), class(&[1])]).is_empty());
    }

    #[test]
    fn knn_edges() {
        let centers = [[0.0; 3], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let e = build_knn_edges(&centers, 5);
        assert_eq!(e.len(), 6);
        let line: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(nearest_neighbours(&line, 2)[2], vec![1, 3]);
        let e = build_knn_edges(&line, 2);
        assert!(e.iter().all(|&(i, j)| i != j && e.contains(&(j, i))));
    }

    #[test]
    fn isolated_nodes_keep_features() {
        for shared in [false, true] {
            let cfg = small(shared);
            let mut store = ParamStore::new();
            let net = PoseNet::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let mut g = Graph::with_params(&store);
            let f0 = features(&mut g, 3, cfg.node_width(), 2);
            let [f1, f2] = net.message_pass(&mut g, f0, &[], None, 0).unwrap();
            assert_eq!(g.value(f1), g.value(f0));
            assert_eq!(g.value(f2), g.value(f0));

            // Node 2 has no outgoing edge and keeps f⁰ through both iterations.
            let [f1, f2] = net.message_pass(&mut g, f0, &[(0, 1), (1, 0)], None, 0).unwrap();
            let d = cfg.node_width();
            assert_eq!(&g.value(f1)[2 * d..], &g.value(f0)[2 * d..]);
            assert_eq!(&g.value(f2)[2 * d..], &g.value(f0)[2 * d..]);
        }
    }

    #[test]
    fn single_edge_message_is_the_node_update() {
        let cfg = small(false);
        let mut store = ParamStore::new();
        let net = PoseNet::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut g = Graph::with_params(&store);
        let f0 = features(&mut g, 2, cfg.node_width(), 4);
        let [f1, _] = net.message_pass(&mut g, f0, &[(0, 1)], None, 0).unwrap();
        let from = g.row(f0, 0).unwrap();
        let to = g.row(f0, 1).unwrap();
        let joined = g.concat(&[from, to]).unwrap();
        let e = net.message_layer(0, 0).forward_relu(&mut g, joined).unwrap();
        assert_eq!(&g.value(f1)[..cfg.node_width()], g.value(e));
    }

    #[test]
    fn relabeling_nodes_permutes_poses() {
        let cfg = small(false);
        let mut store = ParamStore::new();
        let net = PoseNet::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let d = cfg.node_width();
        let mut g = Graph::with_params(&store);
        let f0 = features(&mut g, 5, d, 6);
        let classes = vec![class(&[0, 1, 3]), class(&[2]), class(&[4])];
        let base = net.forward_from_features(&mut g, f0, &classes, &PoseSwitches::default()).unwrap();

        // new index k holds old node perm[k]
        let perm = [4, 3, 0, 2, 1];
        let mut inverse = [0; 5];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        let moved_f0 = g.gather_rows(f0, &perm).unwrap();
        let relabel = |c: &[usize]| {
            let mut m: Vec<usize> = c.iter().map(|&i| inverse[i]).collect();
            m.sort_unstable();
            m
        };
        let moved_classes: Vec<EquivalenceClass> = classes.iter().map(|c| class(&relabel(&c.members))).collect();
        let moved = net.forward_from_features(&mut g, moved_f0, &moved_classes, &PoseSwitches::default()).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            assert_eq!(g.value(moved.last().translations[k]), g.value(base.last().translations[old]));
            assert_eq!(g.value(moved.last().rotations[k]), g.value(base.last().rotations[old]));
        }
    }

    #[test]
    fn symmetric_neighbours_get_identical_messages() {
        let cfg = small(false);
        let mut store = ParamStore::new();
        let net = PoseNet::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let d = cfg.node_width();
        let mut g = Graph::with_params(&store);
        let row = features(&mut g, 1, d, 8);
        let single = g.row(row, 0).unwrap();
        let f0 = g.tile_rows(single, 4).unwrap();
        let edges = build_within_class_edges(&[class(&[0, 1, 2, 3])]);
        let [f1, _] = net.message_pass(&mut g, f0, &edges, None, 0).unwrap();
        let v = g.value(f1);
        for i in 1..4 {
            assert_eq!(&v[i * d..(i + 1) * d], &v[..d]);
        }
    }

    #[test]
    fn quaternions_are_unit_and_phase_two_uses_flags() {
        let cfg = small(false);
        let mut store = ParamStore::new();
        let net = PoseNet::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut g = Graph::with_params(&store);
        let f0 = features(&mut g, 4, cfg.node_width(), 10);
        let classes = vec![class(&[0, 1]), class(&[2]), class(&[3])];
        let out = net.forward_from_features(&mut g, f0, &classes, &PoseSwitches::default()).unwrap();
        assert_eq!(out.phases.len(), 2);
        for phase in &out.phases {
            for &q in &phase.rotations {
                let n: f64 = g.value(q).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
        let p2 = &out.phases[1];
        assert_eq!(p2.edges.len(), 12);
        assert!(p2.flags.iter().all(|&f| f == 1.0));
        let skip = PoseSwitches { no_second_phase: true, ..Default::default() };
        assert_eq!(net.forward_from_features(&mut g, f0, &classes, &skip).unwrap().phases.len(), 1);
    }
}
