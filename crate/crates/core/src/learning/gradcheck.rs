//! Central-difference gradient verification for every learned block.
//!
//! Each registered block is instantiated at a small size with randomized
//! parameters and random inputs, reduced to a scalar `Σ out ⊙ R` with a fixed
//! random `R`, and for every parameter tensor the analytic gradient is
//! compared with central differences (step `1e-6`) on sampled entries.
//!
//! The error of one tensor is `‖g_analytic − g_numeric‖ / max(‖g_analytic‖,
//! ‖g_numeric‖, floor)` over the sampled entries, where `floor = 1e-5 ·
//! max(1, |f|)` sits above the round-off of the difference quotient.

use std::fmt::Write as _;
use std::rc::Rc;

use ndarray::{Array2, Array3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Chain, Graph, Tensor, Var};
use crate::bpgnet::{self, BpgModel};
use crate::config::ModelConfig;
use crate::error::{BpgError, Result};
use crate::featinit::{self, SensorFeatureBlock, A_CHANNELS, P_CHANNELS};
use crate::params::ParamStore;
use crate::sensorio::NUM_SENSORS;
use crate::skeleton::{default_skeleton, NUM_JOINTS};

use super::losses::{loss_bone_g, loss_pos_g, loss_rot_g, total_loss_g, LossWeights};

pub const FD_STEP: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 2;
const ENTRIES_PER_TENSOR: usize = 8;
const FLOOR: f64 = 1e-5;
const ODD_LEN: usize = 7;

/// Blocks covered by `gradcheck all`.
pub const BLOCKS: [&str; 15] = [
    featinit::BLOCK_FEATURE_INTEGRATION,
    featinit::BLOCK_SCI,
    featinit::BLOCK_PYRAMID,
    featinit::BLOCK_SPATIAL,
    featinit::BLOCK_ASSIGN,
    bpgnet::BLOCK_EDGE_DS,
    bpgnet::BLOCK_EDGE_L,
    bpgnet::BLOCK_GCN,
    bpgnet::BLOCK_HEAD,
    "loss_rot",
    "loss_pos",
    "loss_bone",
    "fk",
    "full_network",
    "linear",
];

/// A linear map whose weight gradient is deliberately scaled by 1.01; used
/// to show that the harness catches a 1 % error.
pub const CORRUPT_BLOCK: &str = "corrupt_linear";

pub fn is_registered(block: &str) -> bool {
    BLOCKS.contains(&block) || block == CORRUPT_BLOCK
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub rel_err: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub block: String,
    pub tol: f64,
    /// Worst error per tensor over all trials.
    pub checks: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.rel_err < self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.checks.iter().filter(|c| c.rel_err >= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} (max rel err {:.3e}, tol {:.0e})\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.block,
            self.max_rel_err(),
            self.tol
        );
        for c in &self.checks {
            let mark = if c.rel_err < self.tol { "ok  " } else { "FAIL" };
            let _ = writeln!(s, "  {mark} {:<28} rel err {:.3e} ({} entries)", c.name, c.rel_err, c.entries);
        }
        s
    }
}

type Builder = Box<dyn Fn(&mut Graph) -> Var>;

struct Case {
    store: ParamStore,
    build: Builder,
}

/// Sizes small enough for finite differences yet exercising every branch
/// (projections present, more than one graph layer). The standalone SCI
/// block and pyramid checks use an odd length to cover the padding path.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        k_window: 8,
        d_mix: 3,
        c1: 3,
        d_t: 5,
        d_g: 4,
        d_node: 3,
        edge_hidden: 4,
        gcn_layers: 2,
        ..ModelConfig::default()
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Tensor {
    Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn rand_block(rng: &mut ChaCha8Rng, k: usize) -> SensorFeatureBlock {
    SensorFeatureBlock {
        fp: Array3::from_shape_fn((k, NUM_SENSORS, P_CHANNELS), |_| rng.gen_range(-1.0..1.0)),
        fa: Array3::from_shape_fn((k, NUM_SENSORS, A_CHANNELS), |_| rng.gen_range(-1.0..1.0)),
    }
}

fn input(store: &mut ParamStore, name: &str, shape: (usize, usize), rng: &mut ChaCha8Rng) {
    store.insert(format!("input.{name}"), "input", rand_tensor(rng, shape));
}

fn make_case(block: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let cfg = gradcheck_config();
    let skel = default_skeleton();
    let mut store = ParamStore::new();
    let n = NUM_JOINTS;
    let build: Builder = match block {
        featinit::BLOCK_FEATURE_INTEGRATION => {
            featinit::init_feature_integration(&mut store, &cfg, rng);
            store.randomize(0.5, rng);
            let fb = rand_block(rng, cfg.k_window);
            Box::new(move |g| featinit::integrate_g(g, &cfg, &fb))
        }
        featinit::BLOCK_SCI => {
            featinit::init_sci_block(&mut store, "sci", 4, 5, cfg.kernel_size, rng);
            store.randomize(0.5, rng);
            input(&mut store, "x", (ODD_LEN, 4), rng);
            Box::new(move |g| {
                let x = g.param("input.x");
                featinit::sci_block_g(g, "sci", x, cfg.kernel_size, cfg.clamp)
            })
        }
        featinit::BLOCK_PYRAMID => {
            featinit::init_pyramid(&mut store, "pyr", &cfg, rng);
            store.randomize(0.5, rng);
            input(&mut store, "x", (ODD_LEN, NUM_SENSORS * cfg.d_mix), rng);
            Box::new(move |g| {
                let x = g.param("input.x");
                featinit::temporal_pyramid_g(g, "pyr", &cfg, x)
            })
        }
        featinit::BLOCK_SPATIAL => {
            featinit::init_spatial_split(&mut store, &cfg, rng);
            store.randomize(0.5, rng);
            input(&mut store, "ft", (1, cfg.d_t), rng);
            input(&mut store, "fl", (1, cfg.d_t), rng);
            Box::new(move |g| {
                let (ft, fl) = (g.param("input.ft"), g.param("input.fl"));
                let (a, b) = featinit::spatial_split_g(g, &cfg, ft, fl);
                g.concat_cols(&[a, b])
            })
        }
        featinit::BLOCK_ASSIGN => {
            featinit::init_assign(&mut store, &cfg, rng);
            input(&mut store, "ft", (1, cfg.d_g), rng);
            input(&mut store, "fl", (1, cfg.d_g), rng);
            Box::new(move |g| {
                let (ft, fl) = (g.param("input.ft"), g.param("input.fl"));
                featinit::assign_nodes_g(g, &skel, ft, fl)
            })
        }
        bpgnet::BLOCK_EDGE_DS | bpgnet::BLOCK_EDGE_L => {
            let slots = if block == bpgnet::BLOCK_EDGE_DS {
                bpgnet::bone_slots(&skel)
            } else {
                bpgnet::latent_slots()
            };
            let slots = Rc::new(slots);
            bpgnet::init_edge_mlp(&mut store, "edge", block, n * cfg.d_node, cfg.edge_hidden, slots.len(), rng);
            store.randomize(0.5, rng);
            input(&mut store, "x", (n, cfg.d_node), rng);
            Box::new(move |g| {
                let x = g.param("input.x");
                bpgnet::edge_mlp_g(g, "edge", x, slots.clone())
            })
        }
        bpgnet::BLOCK_GCN => {
            store.uniform("gcn.w", bpgnet::BLOCK_GCN, (cfg.d_node, cfg.d_node), cfg.d_node, rng);
            input(&mut store, "x", (n, cfg.d_node), rng);
            let a = rand_tensor(rng, (n, n));
            let a_sym = &a + &a.t();
            Box::new(move |g| {
                let (x, w) = (g.param("input.x"), g.param("gcn.w"));
                let a = g.input(a_sym.clone());
                bpgnet::gcn_layer_g(g, a, x, w, cfg.leaky_slope)
            })
        }
        bpgnet::BLOCK_HEAD => {
            store.uniform("head.w", bpgnet::BLOCK_HEAD, (n * cfg.d_node, 3), cfg.d_node, rng);
            store.uniform("head.b", bpgnet::BLOCK_HEAD, (n, 3), cfg.d_node, rng);
            input(&mut store, "x", (n, cfg.d_node), rng);
            let chain = chain(&skel);
            Box::new(move |g| {
                let (x, w, b) = (g.param("input.x"), g.param("head.w"), g.param("head.b"));
                let aa = g.node_linear(x, w, b);
                let r = g.rodrigues(aa);
                let p = g.kinematics(r, chain.clone());
                g.concat_cols(&[aa, p])
            })
        }
        "loss_rot" | "loss_pos" => {
            input(&mut store, "pred", (n, 3), rng);
            let gt = rand_tensor(rng, (n, 3));
            let rot = block == "loss_rot";
            Box::new(move |g| {
                let p = g.param("input.pred");
                let t = g.input(gt.clone());
                if rot {
                    loss_rot_g(g, p, t)
                } else {
                    loss_pos_g(g, p, t)
                }
            })
        }
        "loss_bone" => {
            input(&mut store, "pos", (n, 3), rng);
            Box::new(move |g| {
                let p = g.param("input.pos");
                loss_bone_g(g, p, &skel)
            })
        }
        "fk" => {
            input(&mut store, "axis", (n, 3), rng);
            let chain = chain(&skel);
            Box::new(move |g| {
                let a = g.param("input.axis");
                let r = g.rodrigues(a);
                g.kinematics(r, chain.clone())
            })
        }
        "full_network" => {
            // keep the model's own initialization (random scales are easily
            // large enough to blow the activations up) and only wake up the
            // tensors that start at zero
            let mut model = BpgModel::new(cfg.clone(), skel.clone())?;
            let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
            for id in ids {
                let v = model.store.value_mut(id);
                if v.iter().all(|&x| x == 0.0) {
                    v.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
                }
            }
            store = model.store.clone();
            let fb = rand_block(rng, cfg.k_window);
            let head = nalgebra::Vector3::new(0.1, 1.6, -0.2);
            let gt_axis = rand_tensor(rng, (n, 3));
            let gt_pos = rand_tensor(rng, (n, 3));
            Box::new(move |g| {
                let out = model.forward_g(g, &fb, &head);
                let ga = g.input(gt_axis.clone());
                let gp = g.input(gt_pos.clone());
                let l = total_loss_g(g, out.axis_angles, out.positions, ga, gp, &model.skel, &LossWeights::default());
                l.total
            })
        }
        "linear" | CORRUPT_BLOCK => {
            store.uniform("lin.w", block, (4, 3), 4, rng);
            store.uniform("lin.b", block, (1, 3), 4, rng);
            let x = rand_tensor(rng, (2, 4));
            let corrupt = block == CORRUPT_BLOCK;
            Box::new(move |g| {
                let xv = g.input(x.clone());
                let mut w = g.param("lin.w");
                if corrupt {
                    w = g.grad_scale(w, 1.01);
                }
                let b = g.param("lin.b");
                let y = g.matmul(xv, w);
                g.add_row(y, b)
            })
        }
        other => {
            return Err(BpgError::InvalidArgument(format!(
                "unknown gradcheck block `{other}` (known: {}, {CORRUPT_BLOCK}, all)",
                BLOCKS.join(", ")
            )))
        }
    };
    Ok(Case { store, build })
}

fn chain(skel: &crate::skeleton::SkeletonModel) -> Rc<Chain> {
    Rc::new(Chain {
        parents: skel.parents().to_vec(),
        offsets: skel.offsets().to_vec(),
    })
}

fn objective(case: &Case, store: &ParamStore, weights: &Option<Tensor>) -> (f64, Option<Tensor>) {
    let mut g = Graph::new(store);
    let out = (case.build)(&mut g);
    let r = weights.clone().unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        rand_tensor(&mut rng, g.shape(out))
    });
    let rv = g.input(r.clone());
    let m = g.mul(out, rv);
    let s = g.sum(m);
    (g.scalar(s), Some(r))
}

fn check_case(case: &Case, rng: &mut ChaCha8Rng) -> Vec<ParamCheck> {
    let (f0, weights) = objective(case, &case.store, &None);
    let mut g = Graph::new(&case.store);
    let out = (case.build)(&mut g);
    let rv = g.input(weights.clone().expect("weights"));
    let m = g.mul(out, rv);
    let s = g.sum(m);
    let back = g.backward(s);
    let mut analytic = case.store.zero_grads();
    g.param_grads(&back, &mut analytic);
    let floor = FLOOR * f0.abs().max(1.0);

    let mut scratch = case.store.clone();
    case.store
        .iter()
        .map(|(id, p)| {
            let len = p.value.len();
            let picks: Vec<usize> = if len <= ENTRIES_PER_TENSOR {
                (0..len).collect()
            } else {
                let mut v = sample(rng, len, ENTRIES_PER_TENSOR).into_vec();
                v.sort_unstable();
                v
            };
            let cols = p.value.ncols();
            let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
            for &k in &picks {
                let idx = (k / cols, k % cols);
                let orig = p.value[idx];
                scratch.value_mut(id)[idx] = orig + FD_STEP;
                let (fp, _) = objective(case, &scratch, &weights);
                scratch.value_mut(id)[idx] = orig - FD_STEP;
                let (fm, _) = objective(case, &scratch, &weights);
                scratch.value_mut(id)[idx] = orig;
                let numeric = (fp - fm) / (2.0 * FD_STEP);
                let a = analytic.get(id)[idx];
                diff += (a - numeric).powi(2);
                na += a * a;
                nn += numeric * numeric;
            }
            ParamCheck {
                name: p.name.clone(),
                rel_err: diff.sqrt() / na.sqrt().max(nn.sqrt()).max(floor),
                entries: picks.len(),
            }
        })
        .collect()
}

/// Runs `trials` independently seeded instances of `block`.
pub fn gradcheck(block: &str, trials: usize, tol: f64) -> Result<GradcheckReport> {
    if !is_registered(block) {
        make_case(block, &mut ChaCha8Rng::seed_from_u64(0))?;
    }
    let mut worst: Vec<ParamCheck> = Vec::new();
    for trial in 0..trials.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial as u64);
        let case = make_case(block, &mut rng)?;
        let checks = check_case(&case, &mut rng);
        if worst.is_empty() {
            worst = checks;
        } else {
            for (w, c) in worst.iter_mut().zip(checks) {
                w.rel_err = w.rel_err.max(c.rel_err);
                w.entries += c.entries;
            }
        }
    }
    Ok(GradcheckReport {
        block: block.to_string(),
        tol,
        checks: worst,
    })
}

pub fn gradcheck_all(trials: usize, tol: f64) -> Result<Vec<GradcheckReport>> {
    BLOCKS.iter().map(|b| gradcheck(b, trials, tol)).collect()
}
