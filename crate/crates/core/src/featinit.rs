//! Initial node features of the body pose graph.
//!
//! A sensor window is turned into per-frame translation features (position,
//! velocity) and rotation features (6-D orientation, 6-D angular velocity),
//! fused by dual interactive learning, summarized by two temporal pyramids
//! (trunk and limb branch), coupled trunk-to-limb and finally mapped onto the
//! 22 nodes with one affine map per node.
//!
//! Every learned piece is available both as a graph builder (`*_g`, used for
//! training) and as a plain function returning values.

use std::rc::Rc;

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::autograd::{ConvPadding, Graph, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{BpgError, Result};
use crate::params::ParamStore;
use crate::rotmath::{angular_velocity_sixd, matrix_to_sixd};
use crate::sensorio::{finite_diff_velocity, SensorWindow, NUM_SENSORS};
use crate::skeleton::{SkeletonModel, NUM_JOINTS};

pub const P_CHANNELS: usize = 6;
pub const A_CHANNELS: usize = 12;

pub const BLOCK_FEATURE_INTEGRATION: &str = "feature_integration";
pub const BLOCK_SCI: &str = "sci_block";
pub const BLOCK_PYRAMID: &str = "temporal_pyramid";
pub const BLOCK_SPATIAL: &str = "spatial_split";
pub const BLOCK_ASSIGN: &str = "node_assign";

pub const FI: &str = "fi";
pub const PYR_TRUNK: &str = "pyr_trunk";
pub const PYR_LIMB: &str = "pyr_limb";
pub const SPLIT: &str = "split";
pub const ASSIGN: &str = "assign";

const INTERACTIVE_MAPS: [&str; 4] = ["phi", "psi", "rho", "eta"];

/// Per-frame sensor features: `fp` is `K × S × 6` (position, velocity), `fa`
/// is `K × S × 12` (6-D rotation, 6-D angular velocity).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFeatureBlock {
    pub fp: Array3<f64>,
    pub fa: Array3<f64>,
}

impl SensorFeatureBlock {
    pub fn frames(&self) -> usize {
        self.fp.dim().0
    }

    /// `K × 6` translation features of sensor `s`.
    pub fn translation(&self, s: usize) -> Tensor {
        self.fp.index_axis(ndarray::Axis(1), s).to_owned()
    }

    /// `K × 12` rotation features of sensor `s`.
    pub fn rotation(&self, s: usize) -> Tensor {
        self.fa.index_axis(ndarray::Axis(1), s).to_owned()
    }
}

/// Initial node features, `22 × d_node`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureSet(pub Array2<f64>);

pub fn assemble_features(w: &SensorWindow) -> SensorFeatureBlock {
    let k = w.frames.len();
    let mut fp = Array3::zeros((k, NUM_SENSORS, P_CHANNELS));
    let mut fa = Array3::zeros((k, NUM_SENSORS, A_CHANNELS));
    for t in 0..k {
        // the first frame borrows the second frame's velocities
        let (prev, cur) = match t {
            0 if k > 1 => (0, 1),
            0 => (0, 0),
            t => (t - 1, t),
        };
        let frame = &w.frames[t];
        for s in 0..NUM_SENSORS {
            let p = frame.positions[s];
            let v = finite_diff_velocity(&w.frames[prev].positions[s], &w.frames[cur].positions[s], w.fps);
            let theta = matrix_to_sixd(&frame.rotations[s]);
            let omega = angular_velocity_sixd(&w.frames[prev].rotations[s], &w.frames[cur].rotations[s]);
            for c in 0..3 {
                fp[(t, s, c)] = p[c];
                fp[(t, s, 3 + c)] = v[c];
            }
            for c in 0..6 {
                fa[(t, s, c)] = theta.0[c];
                fa[(t, s, 6 + c)] = omega.0[c];
            }
        }
    }
    SensorFeatureBlock { fp, fa }
}

fn conv_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.w"), format!("{prefix}.b"))
}

fn init_conv(
    store: &mut ParamStore,
    prefix: &str,
    block: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    zero: bool,
    rng: &mut impl Rng,
) {
    let (w, b) = conv_names(prefix);
    let fan_in = kernel * c_in;
    if zero {
        store.zeros(w, block, (fan_in, c_out));
        store.zeros(b, block, (1, c_out));
    } else {
        store.uniform(w, block, (fan_in, c_out), fan_in, rng);
        store.uniform(b, block, (1, c_out), fan_in, rng);
    }
}

fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    block: &str,
    d_in: usize,
    d_out: usize,
    zero: bool,
    rng: &mut impl Rng,
) {
    init_conv(store, prefix, block, d_in, d_out, 1, zero, rng);
}

fn conv_g(g: &mut Graph, prefix: &str, x: Var, kernel: usize, padding: ConvPadding) -> Var {
    let (w, b) = conv_names(prefix);
    let w = g.param(&w);
    let b = g.param(&b);
    g.conv1d(x, w, b, kernel, padding)
}

/// `x · W + b` for a `1 × d` row.
pub(crate) fn linear_g(g: &mut Graph, prefix: &str, x: Var) -> Var {
    let (w, b) = conv_names(prefix);
    let w = g.param(&w);
    let b = g.param(&b);
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

/// Registers the entry projections and the four interaction maps.
pub fn init_feature_integration(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    let k = cfg.kernel_size;
    let blk = BLOCK_FEATURE_INTEGRATION;
    init_conv(store, &format!("{FI}.entry_p"), blk, P_CHANNELS, cfg.d_mix, k, false, rng);
    init_conv(store, &format!("{FI}.entry_a"), blk, A_CHANNELS, cfg.d_mix, k, false, rng);
    for m in INTERACTIVE_MAPS {
        init_conv(store, &format!("{FI}.{m}"), blk, cfg.d_mix, cfg.d_mix, k, true, rng);
    }
}

/// Dual interactive learning on `K × d_mix` translation/rotation features of
/// one sensor.
pub fn dual_interactive_g(g: &mut Graph, cfg: &ModelConfig, fp: Var, fa: Var) -> (Var, Var) {
    let k = cfg.kernel_size;
    let same = ConvPadding::Same;
    let phi_a = conv_g(g, &format!("{FI}.phi"), fa, k, same);
    let psi_p = conv_g(g, &format!("{FI}.psi"), fp, k, same);
    let gate_a = g.exp_clamped(phi_a, cfg.clamp);
    let gate_p = g.exp_clamped(psi_p, cfg.clamp);
    let p_gated = g.mul(fp, gate_a);
    let a_gated = g.mul(fa, gate_p);
    let rho = conv_g(g, &format!("{FI}.rho"), a_gated, k, same);
    let eta = conv_g(g, &format!("{FI}.eta"), p_gated, k, same);
    let p_out = g.sub(p_gated, rho);
    let a_out = g.add(a_gated, eta);
    (p_out, a_out)
}

/// Entry projections, dual interaction and fusion for all sensors:
/// returns `K × (S · d_mix)`, sensors side by side.
pub fn integrate_g(g: &mut Graph, cfg: &ModelConfig, block: &SensorFeatureBlock) -> Var {
    let k = cfg.kernel_size;
    let fused: Vec<Var> = (0..NUM_SENSORS)
        .map(|s| {
            let p_in = g.input(block.translation(s));
            let a_in = g.input(block.rotation(s));
            let p = conv_g(g, &format!("{FI}.entry_p"), p_in, k, ConvPadding::Same);
            let a = conv_g(g, &format!("{FI}.entry_a"), a_in, k, ConvPadding::Same);
            let (p2, a2) = dual_interactive_g(g, cfg, p, a);
            g.add(p2, a2)
        })
        .collect();
    g.concat_cols(&fused)
}

/// Registers one SCI block. A projection to `c_out` is added only when the
/// width changes.
pub fn init_sci_block(
    store: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut impl Rng,
) {
    for m in INTERACTIVE_MAPS {
        init_conv(store, &format!("{prefix}.{m}"), BLOCK_SCI, c_in, c_in, kernel, true, rng);
    }
    if c_in != c_out {
        init_conv(store, &format!("{prefix}.proj"), BLOCK_SCI, c_in, c_out, kernel, false, rng);
    }
}

/// Even/odd split, cross-scale exponential gating, additive coupling and
/// re-interleaving along time. Odd lengths are padded with the last frame
/// and the pad is dropped again afterwards.
pub fn sci_block_g(g: &mut Graph, prefix: &str, x: Var, kernel: usize, clamp: f64) -> Var {
    let (t, _) = g.shape(x);
    let padded_len = t + t % 2;
    let xp = if padded_len != t {
        let idx: Vec<usize> = (0..t).chain(std::iter::once(t - 1)).collect();
        g.gather_rows(x, Rc::new(idx))
    } else {
        x
    };
    let half = padded_len / 2;
    let even = g.gather_rows(xp, Rc::new((0..half).map(|i| 2 * i).collect()));
    let odd = g.gather_rows(xp, Rc::new((0..half).map(|i| 2 * i + 1).collect()));
    let same = ConvPadding::Same;

    let phi = conv_g(g, &format!("{prefix}.phi"), even, kernel, same);
    let psi = conv_g(g, &format!("{prefix}.psi"), odd, kernel, same);
    let gate_e = g.exp_clamped(phi, clamp);
    let gate_o = g.exp_clamped(psi, clamp);
    let odd1 = g.mul(odd, gate_e);
    let even1 = g.mul(even, gate_o);
    let rho = conv_g(g, &format!("{prefix}.rho"), even1, kernel, same);
    let eta = conv_g(g, &format!("{prefix}.eta"), odd1, kernel, same);
    let odd2 = g.add(odd1, rho);
    let even2 = g.sub(even1, eta);

    let stacked = g.concat_rows(&[even2, odd2]);
    let order: Vec<usize> = (0..t)
        .map(|r| if r % 2 == 0 { r / 2 } else { half + r / 2 })
        .collect();
    let merged = g.gather_rows(stacked, Rc::new(order));
    let proj = format!("{prefix}.proj");
    if g.store().id(&format!("{proj}.w")).is_some() {
        conv_g(g, &proj, merged, kernel, same)
    } else {
        merged
    }
}

/// Registers the three extractors and the causal aggregation of one pyramid.
pub fn init_pyramid(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut impl Rng) {
    let c_in = NUM_SENSORS * cfg.d_mix;
    let k = cfg.kernel_size;
    init_sci_block(store, &format!("{prefix}.ext1"), c_in, cfg.c1, k, rng);
    init_sci_block(store, &format!("{prefix}.ext2"), c_in, cfg.c1, k, rng);
    init_sci_block(store, &format!("{prefix}.ext3"), 2 * cfg.c1, 2 * cfg.c1, k, rng);
    init_conv(store, &format!("{prefix}.agg"), BLOCK_PYRAMID, 2 * cfg.c1, cfg.d_t, k, false, rng);
}

/// `ceil(t/2) × t` averaging matrix over consecutive frame pairs.
fn pool_matrix(t: usize) -> Tensor {
    let rows = t.div_ceil(2);
    let mut m = Array2::zeros((rows, t));
    for r in 0..rows {
        let a = 2 * r;
        if a + 1 < t {
            m[(r, a)] = 0.5;
            m[(r, a + 1)] = 0.5;
        } else {
            m[(r, a)] = 1.0;
        }
    }
    m
}

/// Frame-level and clip-level features, interleaved channel by channel,
/// refined and collapsed to the current frame: `K × C` in, `1 × d_t` out.
pub fn temporal_pyramid_g(g: &mut Graph, prefix: &str, cfg: &ModelConfig, f: Var) -> Var {
    let (t, _) = g.shape(f);
    let k = cfg.kernel_size;
    let frame_level = sci_block_g(g, &format!("{prefix}.ext1"), f, k, cfg.clamp);
    let pool = g.input(pool_matrix(t));
    let pooled = g.matmul(pool, f);
    let coarse = sci_block_g(g, &format!("{prefix}.ext2"), pooled, k, cfg.clamp);
    let clip_level = g.gather_rows(coarse, Rc::new((0..t).map(|r| r / 2).collect()));
    let both = g.concat_cols(&[frame_level, clip_level]);
    let c1 = cfg.c1;
    let interleave: Vec<usize> = (0..2 * c1)
        .map(|c| if c % 2 == 0 { c / 2 } else { c1 + c / 2 })
        .collect();
    let mixed = g.gather_cols(both, Rc::new(interleave));
    let refined = sci_block_g(g, &format!("{prefix}.ext3"), mixed, k, cfg.clamp);
    let agg = conv_g(g, &format!("{prefix}.agg"), refined, k, ConvPadding::Causal);
    g.row(agg, t - 1)
}

pub fn init_spatial_split(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    if cfg.d_t != cfg.d_g {
        init_linear(store, &format!("{SPLIT}.proj_t"), BLOCK_SPATIAL, cfg.d_t, cfg.d_g, false, rng);
        init_linear(store, &format!("{SPLIT}.proj_l"), BLOCK_SPATIAL, cfg.d_t, cfg.d_g, false, rng);
    }
    for m in ["phi", "psi", "rho"] {
        init_linear(store, &format!("{SPLIT}.{m}"), BLOCK_SPATIAL, cfg.d_g, cfg.d_g, true, rng);
    }
}

/// Trunk-guided rewrite of the limb feature; the trunk feature passes through.
pub fn spatial_split_g(g: &mut Graph, cfg: &ModelConfig, ft: Var, fl: Var) -> (Var, Var) {
    let (ft, fl) = if g.store().id(&format!("{SPLIT}.proj_t.w")).is_some() {
        (
            linear_g(g, &format!("{SPLIT}.proj_t"), ft),
            linear_g(g, &format!("{SPLIT}.proj_l"), fl),
        )
    } else {
        (ft, fl)
    };
    let phi = linear_g(g, &format!("{SPLIT}.phi"), ft);
    let psi = linear_g(g, &format!("{SPLIT}.psi"), fl);
    let gate_t = g.exp_clamped(phi, cfg.clamp);
    let gate_l = g.exp_clamped(psi, cfg.clamp);
    let limb_gated = g.mul(fl, gate_t);
    let trunk_gated = g.mul(ft, gate_l);
    let rho = linear_g(g, &format!("{SPLIT}.rho"), trunk_gated);
    let fl_out = g.add(limb_gated, rho);
    (ft, fl_out)
}

pub fn init_assign(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    store.uniform(
        format!("{ASSIGN}.w"),
        BLOCK_ASSIGN,
        (NUM_JOINTS * cfg.d_g, cfg.d_node),
        cfg.d_g,
        rng,
    );
    store.uniform(format!("{ASSIGN}.b"), BLOCK_ASSIGN, (NUM_JOINTS, cfg.d_node), cfg.d_g, rng);
}

/// Trunk nodes receive `W_j F_T + b_j`, limb nodes `W_j F_L + b_j`.
pub fn assign_nodes_g(g: &mut Graph, skel: &SkeletonModel, ft: Var, fl: Var) -> Var {
    let both = g.concat_rows(&[ft, fl]);
    let pick: Vec<usize> = (0..NUM_JOINTS)
        .map(|j| if skel.is_trunk(j) { 0 } else { 1 })
        .collect();
    let per_node = g.gather_rows(both, Rc::new(pick));
    let w = g.param(&format!("{ASSIGN}.w"));
    let b = g.param(&format!("{ASSIGN}.b"));
    g.node_linear(per_node, w, b)
}

/// Registers every feature-initialization parameter.
pub fn init_params(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    init_feature_integration(store, cfg, rng);
    init_pyramid(store, PYR_TRUNK, cfg, rng);
    init_pyramid(store, PYR_LIMB, cfg, rng);
    init_spatial_split(store, cfg, rng);
    init_assign(store, cfg, rng);
}

/// Full feature initialization: `22 × d_node` node features.
pub fn node_features_g(
    g: &mut Graph,
    cfg: &ModelConfig,
    skel: &SkeletonModel,
    block: &SensorFeatureBlock,
) -> Var {
    let fused = integrate_g(g, cfg, block);
    let trunk = temporal_pyramid_g(g, PYR_TRUNK, cfg, fused);
    let limb = temporal_pyramid_g(g, PYR_LIMB, cfg, fused);
    let (ft, fl) = spatial_split_g(g, cfg, trunk, limb);
    assign_nodes_g(g, skel, ft, fl)
}

/// Zeros every exponential-interaction map (feature integration, SCI blocks
/// and the trunk/limb coupling).
pub fn zero_interactive(store: &mut ParamStore) {
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| {
            let mut parts = p.name.rsplit('.');
            let _leaf = parts.next();
            parts.next().is_some_and(|m| INTERACTIVE_MAPS.contains(&m))
        })
        .map(|(_, p)| p.name.clone())
        .collect();
    for n in names {
        if let Some(v) = store.by_name_mut(&n) {
            v.fill(0.0);
        }
    }
}

fn check_block(block: &SensorFeatureBlock) -> Result<()> {
    let (k, s, c) = block.fp.dim();
    if s != NUM_SENSORS || c != P_CHANNELS {
        return Err(BpgError::shape("translation features", format!("K x {NUM_SENSORS} x {P_CHANNELS}"), format!("{k} x {s} x {c}")));
    }
    if block.fa.dim() != (k, NUM_SENSORS, A_CHANNELS) {
        let (a, b, c) = block.fa.dim();
        return Err(BpgError::shape("rotation features", format!("{k} x {NUM_SENSORS} x {A_CHANNELS}"), format!("{a} x {b} x {c}")));
    }
    if k < 2 {
        return Err(BpgError::InvalidArgument("window needs at least 2 frames".into()));
    }
    Ok(())
}

fn expect_cols(context: &str, t: &Tensor, cols: usize) -> Result<()> {
    if t.ncols() != cols || t.nrows() == 0 {
        return Err(BpgError::shape(context, format!("N x {cols}"), format!("{} x {}", t.nrows(), t.ncols())));
    }
    Ok(())
}

/// Dual interactive learning applied to already projected `K × S × d_mix`
/// features.
pub fn dual_interactive(
    store: &ParamStore,
    cfg: &ModelConfig,
    fp: &Array3<f64>,
    fa: &Array3<f64>,
) -> Result<(Array3<f64>, Array3<f64>)> {
    let (k, s, c) = fp.dim();
    if fa.dim() != (k, s, c) || c != cfg.d_mix {
        return Err(BpgError::shape(
            "dual_interactive",
            format!("{k} x {s} x {}", cfg.d_mix),
            format!("{:?} and {:?}", fp.dim(), fa.dim()),
        ));
    }
    let mut p_out = Array3::zeros((k, s, c));
    let mut a_out = Array3::zeros((k, s, c));
    for si in 0..s {
        let mut g = Graph::new(store);
        let p = g.input(fp.index_axis(ndarray::Axis(1), si).to_owned());
        let a = g.input(fa.index_axis(ndarray::Axis(1), si).to_owned());
        let (p2, a2) = dual_interactive_g(&mut g, cfg, p, a);
        p_out.index_axis_mut(ndarray::Axis(1), si).assign(g.value(p2));
        a_out.index_axis_mut(ndarray::Axis(1), si).assign(g.value(a2));
    }
    Ok((p_out, a_out))
}

pub fn sci_block(store: &ParamStore, prefix: &str, cfg: &ModelConfig, x: &Tensor) -> Result<Tensor> {
    let c_in = store
        .get(&format!("{prefix}.phi.w"))
        .map(|p| p.value.nrows() / cfg.kernel_size)
        .ok_or_else(|| BpgError::InvalidArgument(format!("no SCI block `{prefix}`")))?;
    expect_cols("sci_block", x, c_in)?;
    let mut g = Graph::new(store);
    let xv = g.input(x.clone());
    let y = sci_block_g(&mut g, prefix, xv, cfg.kernel_size, cfg.clamp);
    Ok(g.value(y).clone())
}

pub fn temporal_pyramid(store: &ParamStore, prefix: &str, cfg: &ModelConfig, f: &Tensor) -> Result<Tensor> {
    expect_cols("temporal_pyramid", f, NUM_SENSORS * cfg.d_mix)?;
    let mut g = Graph::new(store);
    let fv = g.input(f.clone());
    let y = temporal_pyramid_g(&mut g, prefix, cfg, fv);
    Ok(g.value(y).clone())
}

pub fn spatial_split(store: &ParamStore, cfg: &ModelConfig, ft: &Tensor, fl: &Tensor) -> Result<(Tensor, Tensor)> {
    for (name, t) in [("trunk feature", ft), ("limb feature", fl)] {
        if t.dim() != (1, cfg.d_t) {
            return Err(BpgError::shape(name, format!("1 x {}", cfg.d_t), format!("{} x {}", t.nrows(), t.ncols())));
        }
    }
    let mut g = Graph::new(store);
    let a = g.input(ft.clone());
    let b = g.input(fl.clone());
    let (x, y) = spatial_split_g(&mut g, cfg, a, b);
    Ok((g.value(x).clone(), g.value(y).clone()))
}

pub fn assign_nodes(
    store: &ParamStore,
    cfg: &ModelConfig,
    ft: &Tensor,
    fl: &Tensor,
    skel: &SkeletonModel,
) -> Result<NodeFeatureSet> {
    for (name, t) in [("trunk feature", ft), ("limb feature", fl)] {
        if t.dim() != (1, cfg.d_g) {
            return Err(BpgError::shape(name, format!("1 x {}", cfg.d_g), format!("{} x {}", t.nrows(), t.ncols())));
        }
    }
    let mut g = Graph::new(store);
    let a = g.input(ft.clone());
    let b = g.input(fl.clone());
    let x = assign_nodes_g(&mut g, skel, a, b);
    Ok(NodeFeatureSet(g.value(x).clone()))
}

pub fn node_features(
    store: &ParamStore,
    cfg: &ModelConfig,
    skel: &SkeletonModel,
    block: &SensorFeatureBlock,
) -> Result<NodeFeatureSet> {
    check_block(block)?;
    let mut g = Graph::new(store);
    let x = node_features_g(&mut g, cfg, skel, block);
    Ok(NodeFeatureSet(g.value(x).clone()))
}
