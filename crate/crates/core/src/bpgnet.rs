//! Body pose graph network: expressive-edge adjacency, graph convolutions and
//! the per-joint axis-angle head.
//!
//! Each layer rebuilds its dynamic adjacency from the layer's own input:
//! a skeleton-masked matrix (one learned value per bone) and a latent matrix
//! (one learned value per upper-triangle entry), both symmetric, added to the
//! normalized static skeleton adjacency.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::rc::Rc;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Chain, Graph, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{BpgError, Result};
use crate::featinit::{self, assemble_features, NodeFeatureSet, SensorFeatureBlock};
use crate::params::ParamStore;
use crate::rotmath::AxisAngle;
use crate::sensorio::{SensorFrame, SensorWindow};
use crate::skeleton::{forward_kinematics, PoseEstimate, SkeletonModel, HEAD, NUM_JOINTS};

pub const BLOCK_EDGE_DS: &str = "edge_mlp_ds";
pub const BLOCK_EDGE_L: &str = "edge_mlp_l";
pub const BLOCK_GCN: &str = "gcn_layer";
pub const BLOCK_HEAD: &str = "output_head";

/// Number of latent-edge values: the upper triangle including the diagonal.
pub const LATENT_SLOTS: usize = NUM_JOINTS * (NUM_JOINTS + 1) / 2;

/// Adjacency matrices of one graph layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySet {
    pub a_ss: Array2<f64>,
    pub a_ds: Array2<f64>,
    pub a_l: Array2<f64>,
    pub a_h: Array2<f64>,
}

/// Unnormalized skeleton adjacency with self-loops.
pub fn skeleton_adjacency(skel: &SkeletonModel) -> Array2<f64> {
    let mut a = Array2::eye(NUM_JOINTS);
    for (p, c) in skel.bones() {
        a[(p, c)] = 1.0;
        a[(c, p)] = 1.0;
    }
    a
}

/// `D^{-1/2} (A + I) D^{-1/2}` over the skeleton edges.
pub fn static_adjacency(skel: &SkeletonModel) -> Array2<f64> {
    let a = skeleton_adjacency(skel);
    let d: Vec<f64> = a.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    Array2::from_shape_fn(a.dim(), |(i, j)| a[(i, j)] * d[i] * d[j])
}

/// Bone slots `(parent, child)` for the skeleton-masked adjacency.
pub fn bone_slots(skel: &SkeletonModel) -> Vec<(usize, usize)> {
    skel.bones()
}

pub fn latent_slots() -> Vec<(usize, usize)> {
    (0..NUM_JOINTS)
        .flat_map(|i| (i..NUM_JOINTS).map(move |j| (i, j)))
        .collect()
}

pub fn compose_adjacency(a_ss: &Array2<f64>, a_ds: &Array2<f64>, a_l: &Array2<f64>) -> Result<Array2<f64>> {
    for (name, m) in [("A_ss", a_ss), ("A_ds", a_ds), ("A_l", a_l)] {
        if m.dim() != (NUM_JOINTS, NUM_JOINTS) {
            return Err(BpgError::shape(name, "22 x 22", format!("{} x {}", m.nrows(), m.ncols())));
        }
    }
    Ok(a_ss + a_ds + a_l)
}

fn edge_names(prefix: &str) -> [String; 4] {
    ["w0", "b0", "w1", "b1"].map(|s| format!("{prefix}.{s}"))
}

/// Registers an edge MLP `x ↦ W_1 ReLU(W_0 x + B_0) + B_1` (stored transposed
/// for row vectors). The output layer starts at zero so the network begins
/// as a static-skeleton GCN.
pub fn init_edge_mlp(
    store: &mut ParamStore,
    prefix: &str,
    block: &str,
    n_in: usize,
    hidden: usize,
    n_out: usize,
    rng: &mut ChaCha8Rng,
) {
    let [w0, b0, w1, b1] = edge_names(prefix);
    store.uniform(w0, block, (n_in, hidden), n_in, rng);
    store.uniform(b0, block, (1, hidden), n_in, rng);
    store.zeros(w1, block, (hidden, n_out));
    store.zeros(b1, block, (1, n_out));
}

/// Edge MLP on the flattened node features, scattered symmetrically onto
/// `slots` of a 22 x 22 matrix.
pub fn edge_mlp_g(g: &mut Graph, prefix: &str, x: Var, slots: Rc<Vec<(usize, usize)>>) -> Var {
    let [w0, b0, w1, b1] = edge_names(prefix);
    let flat = g.flatten(x);
    let w0 = g.param(&w0);
    let b0 = g.param(&b0);
    let w1 = g.param(&w1);
    let b1 = g.param(&b1);
    let h = g.matmul(flat, w0);
    let h = g.add_row(h, b0);
    let h = g.relu(h);
    let raw = g.matmul(h, w1);
    let raw = g.add_row(raw, b1);
    g.scatter_sym(raw, NUM_JOINTS, slots)
}

/// `σ(A · X · W)` plus `X` when the widths agree, σ = leaky ReLU.
pub fn gcn_layer_g(g: &mut Graph, a_h: Var, x: Var, w: Var, slope: f64) -> Var {
    let xw = g.matmul(x, w);
    let mixed = g.matmul(a_h, xw);
    let act = g.leaky_relu(mixed, slope);
    if g.shape(act) == g.shape(x) {
        g.add(act, x)
    } else {
        act
    }
}

/// Plain-value graph convolution.
pub fn gcn_layer(x: &Tensor, a_h: &Tensor, w: &Tensor, slope: f64) -> Result<Tensor> {
    if a_h.dim() != (x.nrows(), x.nrows()) || w.nrows() != x.ncols() {
        return Err(BpgError::shape(
            "gcn_layer",
            format!("A {n}x{n}, W {}xN", x.ncols(), n = x.nrows()),
            format!("A {:?}, W {:?}", a_h.dim(), w.dim()),
        ));
    }
    let store = ParamStore::default();
    let mut g = Graph::new(&store);
    let (xv, av, wv) = (g.input(x.clone()), g.input(a_h.clone()), g.input(w.clone()));
    let y = gcn_layer_g(&mut g, av, xv, wv, slope);
    Ok(g.value(y).clone())
}

/// Plain-value edge MLP.
pub fn edge_mlp(store: &ParamStore, prefix: &str, x: &NodeFeatureSet, slots: &[(usize, usize)]) -> Result<Tensor> {
    let [w0, _, w1, _] = edge_names(prefix);
    let w0 = store
        .get(&w0)
        .ok_or_else(|| BpgError::InvalidArgument(format!("no edge MLP `{prefix}`")))?;
    if w0.value.nrows() != x.0.len() {
        return Err(BpgError::shape("edge_mlp input", w0.value.nrows(), x.0.len()));
    }
    let out = store.get(&w1).map(|p| p.value.ncols()).unwrap_or(0);
    if out != slots.len() {
        return Err(BpgError::shape("edge_mlp slots", out, slots.len()));
    }
    let mut g = Graph::new(store);
    let xv = g.input(x.0.clone());
    let a = edge_mlp_g(&mut g, prefix, xv, Rc::new(slots.to_vec()));
    Ok(g.value(a).clone())
}

/// Parameters, configuration and skeleton of a complete model.
#[derive(Debug, Clone, PartialEq)]
pub struct BpgModel {
    pub cfg: ModelConfig,
    pub skel: SkeletonModel,
    pub store: ParamStore,
}

/// Graph nodes produced by one forward pass.
pub struct ForwardVars {
    pub node_features: Var,
    pub adjacency: Vec<(Var, Var, Var)>,
    pub axis_angles: Var,
    pub positions: Var,
}

impl BpgModel {
    /// Fresh model with parameters drawn from `cfg.seed`.
    pub fn new(cfg: ModelConfig, skel: SkeletonModel) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        featinit::init_params(&mut store, &cfg, &mut rng);
        init_graph_params(&mut store, &cfg, &mut rng);
        Ok(BpgModel { cfg, skel, store })
    }

    pub fn chain(&self) -> Rc<Chain> {
        Rc::new(Chain {
            parents: self.skel.parents().to_vec(),
            offsets: self.skel.offsets().to_vec(),
        })
    }

    /// Records the graph network on `g` starting from node features `x0`.
    pub fn graph_g(&self, g: &mut Graph, x0: Var, head: &Vector3<f64>) -> ForwardVars {
        let a_ss = g.input(static_adjacency(&self.skel));
        let bones = Rc::new(bone_slots(&self.skel));
        let latent = Rc::new(latent_slots());
        let mut x = x0;
        let mut adjacency = Vec::with_capacity(self.cfg.gcn_layers);
        for l in 0..self.cfg.gcn_layers {
            let a_ds = edge_mlp_g(g, &format!("edge_ds{l}"), x, bones.clone());
            let a_l = edge_mlp_g(g, &format!("edge_l{l}"), x, latent.clone());
            let s = g.add(a_ss, a_ds);
            let a_h = g.add(s, a_l);
            let w = g.param(&format!("gcn{l}.w"));
            x = gcn_layer_g(g, a_h, x, w, self.cfg.leaky_slope);
            adjacency.push((a_ds, a_l, a_h));
        }
        let hw = g.param("head.w");
        let hb = g.param("head.b");
        let axis_angles = g.node_linear(x, hw, hb);
        let local = g.rodrigues(axis_angles);
        let rel = g.kinematics(local, self.chain());
        let head_row = g.row(rel, HEAD);
        let head_rows = g.gather_rows(head_row, Rc::new(vec![0; NUM_JOINTS]));
        let centered = g.sub(rel, head_rows);
        let target = g.input(Array2::from_shape_vec((1, 3), head.iter().copied().collect()).expect("1x3"));
        let positions = g.add_row(centered, target);
        ForwardVars {
            node_features: x0,
            adjacency,
            axis_angles,
            positions,
        }
    }

    /// Full forward pass on precomputed sensor features.
    pub fn forward_g(&self, g: &mut Graph, block: &SensorFeatureBlock, head: &Vector3<f64>) -> ForwardVars {
        let x0 = featinit::node_features_g(g, &self.cfg, &self.skel, block);
        self.graph_g(g, x0, head)
    }

    fn check_window(&self, w: &SensorWindow) -> Result<()> {
        if w.len() != self.cfg.k_window {
            return Err(BpgError::shape("sensor window", self.cfg.k_window, w.len()));
        }
        Ok(())
    }

    pub fn forward(&self, w: &SensorWindow) -> Result<PoseEstimate> {
        self.forward_traced(w).map(|(p, _)| p)
    }

    /// Forward pass that also returns each layer's adjacency matrices.
    pub fn forward_traced(&self, w: &SensorWindow) -> Result<(PoseEstimate, Vec<AdjacencySet>)> {
        self.check_window(w)?;
        let block = assemble_features(w);
        let mut g = Graph::new(&self.store);
        let vars = self.forward_g(&mut g, &block, &w.head_position());
        Ok((self.read_pose(&g, &vars), self.read_adjacency(&g, &vars)))
    }

    /// Graph network only, from given node features.
    pub fn bpg_forward(&self, x0: &NodeFeatureSet, head_sensor_pos: &Vector3<f64>) -> Result<PoseEstimate> {
        if x0.0.dim() != (NUM_JOINTS, self.cfg.d_node) {
            return Err(BpgError::shape(
                "node features",
                format!("22 x {}", self.cfg.d_node),
                format!("{} x {}", x0.0.nrows(), x0.0.ncols()),
            ));
        }
        let mut g = Graph::new(&self.store);
        let x = g.input(x0.0.clone());
        let vars = self.graph_g(&mut g, x, head_sensor_pos);
        Ok(self.read_pose(&g, &vars))
    }

    pub fn read_pose(&self, g: &Graph, vars: &ForwardVars) -> PoseEstimate {
        let aa = g.value(vars.axis_angles);
        let local_rot: Vec<AxisAngle> = aa
            .rows()
            .into_iter()
            .map(|r| AxisAngle::new(r[0], r[1], r[2]))
            .collect();
        let pos = g.value(vars.positions);
        let positions: Vec<Vector3<f64>> = pos
            .rows()
            .into_iter()
            .map(|r| Vector3::new(r[0], r[1], r[2]))
            .collect();
        let root_translation = positions[0];
        let (_, global_rot) = forward_kinematics(&local_rot, &root_translation, &self.skel);
        PoseEstimate {
            local_rot,
            root_translation,
            positions,
            global_rot,
        }
    }

    pub fn read_adjacency(&self, g: &Graph, vars: &ForwardVars) -> Vec<AdjacencySet> {
        let a_ss = static_adjacency(&self.skel);
        vars.adjacency
            .iter()
            .map(|&(ds, l, h)| AdjacencySet {
                a_ss: a_ss.clone(),
                a_ds: g.value(ds).clone(),
                a_l: g.value(l).clone(),
                a_h: g.value(h).clone(),
            })
            .collect()
    }

    /// Zeros both edge MLPs of every layer, leaving a static-skeleton GCN.
    pub fn zero_dynamic_edges(&mut self) {
        self.store.zero_matching(&["edge_ds", "edge_l"]);
    }
}

/// Registers the graph layers, their edge MLPs and the output head.
pub fn init_graph_params(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let n_in = NUM_JOINTS * cfg.d_node;
    for l in 0..cfg.gcn_layers {
        init_edge_mlp(store, &format!("edge_ds{l}"), BLOCK_EDGE_DS, n_in, cfg.edge_hidden, NUM_JOINTS - 1, rng);
        init_edge_mlp(store, &format!("edge_l{l}"), BLOCK_EDGE_L, n_in, cfg.edge_hidden, LATENT_SLOTS, rng);
        store.uniform(format!("gcn{l}.w"), BLOCK_GCN, (cfg.d_node, cfg.d_node), cfg.d_node, rng);
    }
    store.uniform("head.w", BLOCK_HEAD, (NUM_JOINTS * cfg.d_node, 3), cfg.d_node, rng);
    store.zeros("head.b", BLOCK_HEAD, (NUM_JOINTS, 3));
}

/// Causal frame-by-frame inference: buffers the last `K` sensor frames and
/// emits one pose per frame once the buffer is full.
pub struct OnlinePredictor<'m> {
    model: &'m BpgModel,
    fps: f64,
    buffer: VecDeque<SensorFrame>,
    next_index: usize,
}

impl<'m> OnlinePredictor<'m> {
    pub fn new(model: &'m BpgModel, fps: f64) -> Self {
        OnlinePredictor {
            model,
            fps,
            buffer: VecDeque::with_capacity(model.cfg.k_window),
            next_index: 0,
        }
    }

    /// Feeds one frame; returns `(frame index, pose)` once `K` frames have
    /// been seen.
    pub fn push(&mut self, frame: SensorFrame) -> Result<Option<(usize, PoseEstimate)>> {
        let k = self.model.cfg.k_window;
        if self.buffer.len() == k {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        let index = self.next_index;
        self.next_index += 1;
        if self.buffer.len() < k {
            return Ok(None);
        }
        let window = SensorWindow {
            frames: self.buffer.iter().cloned().collect(),
            fps: self.fps,
            target: index,
        };
        Ok(Some((index, self.model.forward(&window)?)))
    }
}

/// `index rx ry rz` followed by the 66 axis-angle components.
pub fn format_pose_line(index: usize, pose: &PoseEstimate) -> String {
    let mut s = index.to_string();
    let r = pose.root_translation;
    for v in [r.x, r.y, r.z] {
        let _ = write!(s, " {v}");
    }
    for a in &pose.local_rot {
        for v in a.0.iter() {
            let _ = write!(s, " {v}");
        }
    }
    s
}

/// Inverse of [`format_pose_line`]: frame index, root translation and local
/// rotations.
pub fn parse_pose_line(line: &str) -> Result<(usize, Vector3<f64>, Vec<AxisAngle>)> {
    let mut it = line.split_whitespace();
    let bad = |m: &str| BpgError::InvalidArgument(format!("bad pose line: {m}"));
    let index = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("missing frame index"))?;
    let vals: Vec<f64> = it
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(&e.to_string()))?;
    if vals.len() != 3 + 3 * NUM_JOINTS {
        return Err(bad(&format!("expected {} floats, got {}", 3 + 3 * NUM_JOINTS, vals.len())));
    }
    let root = Vector3::new(vals[0], vals[1], vals[2]);
    let rot = vals[3..]
        .chunks_exact(3)
        .map(|c| AxisAngle::new(c[0], c[1], c[2]))
        .collect();
    Ok((index, root, rot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensorio::{extract_sensors, make_windows, synth_generate, SynthKind};
    use crate::skeleton::default_skeleton;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            k_window: 9,
            d_mix: 4,
            c1: 5,
            d_t: 6,
            d_g: 6,
            d_node: 4,
            edge_hidden: 5,
            ..ModelConfig::default()
        }
    }

    fn window(k: usize, seed: u64) -> SensorWindow {
        let skel = default_skeleton();
        let seq = synth_generate(SynthKind::Walk, k + 5, 60.0, seed).unwrap();
        make_windows(&extract_sensors(&seq, &skel), k, 60.0).pop().unwrap()
    }

    fn wake_edges(model: &mut BpgModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = model
            .store
            .iter()
            .filter(|(_, p)| p.name.starts_with("edge_"))
            .map(|(_, p)| p.name.clone())
            .collect();
        for n in names {
            model.store.by_name_mut(&n).unwrap().mapv_inplace(|_| rng.gen_range(-0.3..0.3));
        }
    }

    #[test]
    fn online_predictor_matches_windows() {
        let model = BpgModel::new(small(), default_skeleton()).unwrap();
        let seq = synth_generate(SynthKind::Kick, 14, 60.0, 3).unwrap();
        let sensors = extract_sensors(&seq, &model.skel);
        let windows = make_windows(&sensors, 9, 60.0);
        let mut online = OnlinePredictor::new(&model, 60.0);
        let mut out = Vec::new();
        for f in sensors {
            if let Some(p) = online.push(f).unwrap() {
                out.push(p);
            }
        }
        assert_eq!(out.len(), 14 - 9 + 1);
        for ((i, pose), w) in out.iter().zip(&windows) {
            assert_eq!(*i, w.target);
            assert_eq!(pose, &model.forward(w).unwrap());
        }
        let line = format_pose_line(out[0].0, &out[0].1);
        let (i, root, rot) = parse_pose_line(&line).unwrap();
        assert_eq!((i, root, rot), (8, out[0].1.root_translation, out[0].1.local_rot.clone()));
        assert!(parse_pose_line("3 1 2").is_err());
    }

    #[test]
    fn static_adjacency_structure() {
        let skel = default_skeleton();
        let raw = skeleton_adjacency(&skel);
        let a = static_adjacency(&skel);
        assert!(a[(0, 1)] > 0.0);
        assert_eq!(a[(0, 21)], 0.0);
        assert_eq!(a, a.t());
        for i in 0..NUM_JOINTS {
            let degree = skel.bones().iter().filter(|(p, c)| *p == i || *c == i).count();
            assert_eq!(raw.row(i).sum(), (degree + 1) as f64);
        }
        // pelvis (degree 3) to left hip (degree 2): 1/sqrt(4·3)
        assert_abs_diff_eq!(a[(0, 1)], 1.0 / 12f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn edge_mlp_zero_output_layer_gives_zero() {
        let model = BpgModel::new(small(), default_skeleton()).unwrap();
        let x = NodeFeatureSet(Array2::from_elem((NUM_JOINTS, 4), 0.7));
        let a = edge_mlp(&model.store, "edge_ds0", &x, &bone_slots(&model.skel)).unwrap();
        assert_eq!(a, Array2::<f64>::zeros((NUM_JOINTS, NUM_JOINTS)));
    }

    #[test]
    fn edge_mlp_masks_and_symmetry() {
        let mut model = BpgModel::new(small(), default_skeleton()).unwrap();
        wake_edges(&mut model, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = NodeFeatureSet(Array2::from_shape_fn((NUM_JOINTS, 4), |_| rng.gen_range(-1.0..1.0)));
        let ds = edge_mlp(&model.store, "edge_ds0", &x, &bone_slots(&model.skel)).unwrap();
        let off_diag = ds.indexed_iter().filter(|((i, j), v)| i != j && **v != 0.0).count();
        assert_eq!(off_diag, 42);
        let mask = skeleton_adjacency(&model.skel);
        assert!(ds.indexed_iter().all(|(ij, v)| *v == 0.0 || mask[ij] != 0.0));
        assert_eq!(ds, ds.t());
        let l = edge_mlp(&model.store, "edge_l0", &x, &latent_slots()).unwrap();
        assert_eq!(l, l.t());
        assert!(edge_mlp(&model.store, "edge_l0", &x, &bone_slots(&model.skel)).is_err());
    }

    #[test]
    fn compose_is_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = || Array2::from_shape_fn((NUM_JOINTS, NUM_JOINTS), |_| rng.gen_range(-1.0..1.0));
        let (a, b, c) = (r(), r(), r());
        let h = compose_adjacency(&a, &b, &c).unwrap();
        for i in 0..NUM_JOINTS {
            for j in 0..NUM_JOINTS {
                assert_eq!(h[(i, j)], a[(i, j)] + b[(i, j)] + c[(i, j)]);
            }
        }
        let z = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
        assert_eq!(compose_adjacency(&a, &z, &z).unwrap(), a);
        assert!(compose_adjacency(&a, &Array2::zeros((3, 3)), &z).is_err());
    }

    #[test]
    fn gcn_layer_identity_and_hand_oracle() {
        let x = Array2::from_shape_fn((3, 3), |(i, j)| 1.0 + (i * 3 + j) as f64);
        let eye = Array2::eye(3);
        // identity adjacency and weights on positive input: σ(X) + X = 2X
        let y = gcn_layer(&x, &eye, &eye, 0.2).unwrap();
        assert_eq!(y, &x * 2.0);

        // 3-node path graph, 2 → 1 features, hand-expanded
        let a = Array2::from_shape_vec((3, 3), vec![1.0, 0.5, 0.0, 0.5, 1.0, 0.5, 0.0, 0.5, 1.0]).unwrap();
        let x = Array2::from_shape_vec((3, 2), vec![1.0, -2.0, 0.5, 0.0, -3.0, 1.0]).unwrap();
        let w = Array2::from_shape_vec((2, 1), vec![2.0, 1.0]).unwrap();
        // XW = [0, 1, -5]; AXW = [0.5, -1.5, -4.5]
        let y = gcn_layer(&x, &a, &w, 0.2).unwrap();
        for (got, want) in y.column(0).iter().zip([0.5, -0.3, -0.9]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }

        let zero = Array2::zeros((3, 3));
        let x = Array2::from_elem((3, 3), 1.5);
        assert_eq!(gcn_layer(&x, &zero, &eye, 0.2).unwrap(), x);
        assert!(gcn_layer(&x, &Array2::zeros((2, 2)), &eye, 0.2).is_err());
    }

    #[test]
    fn forward_aligns_head_and_is_deterministic() {
        let mut model = BpgModel::new(small(), default_skeleton()).unwrap();
        wake_edges(&mut model, 4);
        let w = window(9, 5);
        let a = model.forward(&w).unwrap();
        assert_eq!(a, model.forward(&w).unwrap());
        assert_eq!(a.positions[HEAD], w.head_position());
        assert_eq!(a.local_rot.len(), NUM_JOINTS);
        let (fk_pos, _) = forward_kinematics(&a.local_rot, &a.root_translation, &model.skel);
        for (p, q) in fk_pos.iter().zip(&a.positions) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-12);
        }
        assert!(model.forward(&window(8, 5)).is_err());
    }

    #[test]
    fn adjacency_invariants() {
        let mut model = BpgModel::new(small(), default_skeleton()).unwrap();
        wake_edges(&mut model, 6);
        let (_, adj) = model.forward_traced(&window(9, 7)).unwrap();
        assert_eq!(adj.len(), 3);
        let mask = skeleton_adjacency(&model.skel);
        for set in &adj {
            assert_eq!(set.a_ss, set.a_ss.t());
            assert!(set.a_ds.indexed_iter().all(|(ij, v)| *v == 0.0 || mask[ij] != 0.0));
            let h = compose_adjacency(&set.a_ss, &set.a_ds, &set.a_l).unwrap();
            assert_abs_diff_eq!(h, set.a_h, epsilon = 1e-12);
            assert_eq!(set.a_h, set.a_h.t());
        }
        // each layer rebuilds its own dynamic edges
        assert_ne!(adj[0].a_l, adj[1].a_l);
    }

    /// Plain ndarray static-skeleton GCN with the same head and alignment.
    fn vanilla_gcn(model: &BpgModel, x0: &Array2<f64>, head: &Vector3<f64>) -> Vec<Vector3<f64>> {
        let a = static_adjacency(&model.skel);
        let mut x = x0.clone();
        for l in 0..model.cfg.gcn_layers {
            let w = &model.store.get(&format!("gcn{l}.w")).unwrap().value;
            let z = a.dot(&x.dot(w));
            x = z.mapv(|v| if v > 0.0 { v } else { 0.2 * v }) + &x;
        }
        let hw = &model.store.get("head.w").unwrap().value;
        let hb = &model.store.get("head.b").unwrap().value;
        let d = model.cfg.d_node;
        let rot: Vec<AxisAngle> = (0..NUM_JOINTS)
            .map(|j| {
                let wj = hw.slice(ndarray::s![j * d..(j + 1) * d, ..]);
                let o = x.row(j).dot(&wj) + hb.row(j);
                AxisAngle::new(o[0], o[1], o[2])
            })
            .collect();
        let (pos, _) = forward_kinematics(&rot, &Vector3::zeros(), &model.skel);
        pos.iter().map(|p| (p - pos[HEAD]) + head).collect()
    }

    #[test]
    fn zero_edges_reduce_to_vanilla_gcn() {
        let mut model = BpgModel::new(small(), default_skeleton()).unwrap();
        wake_edges(&mut model, 8);
        model.zero_dynamic_edges();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = Array2::from_shape_fn((NUM_JOINTS, 4), |_| rng.gen_range(-1.0..1.0));
        let head = Vector3::new(0.2, 1.7, 3.0);
        let got = model.bpg_forward(&NodeFeatureSet(x0.clone()), &head).unwrap();
        let want = vanilla_gcn(&model, &x0, &head);
        for (p, q) in got.positions.iter().zip(&want) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-12);
        }
    }
}
