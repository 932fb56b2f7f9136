//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are always
//! printed; the process exits non-zero if any criterion fails. Criteria that
//! exercise the command-line contract (training, determinism, causal
//! inference) drive the `bpg` binary itself.
//!
//! Criterion 1 — benchmark-scale scores on licensed mocap data with GPU-scale
//! training — is outside what a desk-scale suite can check. What is checked
//! for it is that the evaluation harness emits the full report (rotation,
//! position and velocity error plus the 22-entry per-joint table) from the
//! same code path used for every other score.

use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bpg_core::bpgnet::{compose_adjacency, skeleton_adjacency, static_adjacency};
use bpg_core::learning::evaluate;
use bpg_core::rotmath::{axis_angle_to_matrix, matrix_to_axis_angle};
use bpg_core::sensorio::{extract_sensors, make_windows, synth_generate};
use bpg_core::skeleton::{default_skeleton, forward_kinematics, HEAD};
use bpg_core::{AxisAngle, BpgModel, MetricReport, ModelConfig, NodeFeatureSet, PoseEstimate};
use bpg_core::{SkeletonModel, SynthKind, NUM_JOINTS};

// ── pinned tolerances and budgets ─────────────────────────────────────────

/// FK against the quaternion oracle, metres.
const FK_TOL: f64 = 1e-9;
const FK_BUDGET: Duration = Duration::from_secs(1);
/// Axis-angle → matrix → axis-angle, per component.
const ROUND_TRIP_TOL: f64 = 1e-8;
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(300);
/// 1 cm offset check, in cm and cm/s.
const OFFSET_TOL: f64 = 1e-9;
const ADJ_TOL: f64 = 1e-12;
const VANILLA_TOL: f64 = 1e-12;
const OVERFIT_MPJPE_CM: f64 = 1.0;
const OVERFIT_LOSS_RATIO: f64 = 10.0;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);

/// Overfit fixture: 200-frame walk, seed 7, 2000 Adam steps. The feature
/// widths are reduced from the defaults so the run fits the time budget on
/// one core; the window stays at 41 frames.
const OVERFIT_CONFIG: &str = "\
k_window = 41
d_mix = 8
c1 = 16
d_t = 32
d_g = 32
d_node = 16
clamp = 5
kernel_size = 3
seed = 7
gcn_layers = 3
edge_hidden = 16
leaky_slope = 0.2
lr = 0.001
batch_size = 16
steps = 2000
beta1 = 0.9
beta2 = 0.999
adam_eps = 1e-8
checkpoint_every = 500
w_rot = 1
w_pos = 1
w_bone = 1
fps = 60
";

fn bpg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bpg"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn bpg");
    assert!(
        out.status.success(),
        "bpg failed ({}): {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn infer_stdin(ckpt: &Path, input: &[u8]) -> Vec<u8> {
    let mut child = bpg()
        .args(["infer", "--checkpoint"])
        .arg(ckpt)
        .args(["--sensors", "-", "--out", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn bpg infer");
    child.stdin.take().unwrap().write_all(input).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn synth(dir: &Path, name: &str, kind: &str, frames: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    run_ok(bpg().args(["synth", "--kind", kind, "--frames", &frames.to_string()]).args([
        "--fps",
        "60",
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]));
    path
}

/// Runs `bpg train`; `threads` pins `BPG_THREADS`, `None` uses every core.
fn train(data: &Path, config: &Path, out: &Path, sets: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = bpg();
    cmd.arg("train")
        .arg("--data")
        .arg(data)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out);
    if let Some(t) = threads {
        cmd.env("BPG_THREADS", t);
    }
    for s in sets {
        cmd.args(["--set", s]);
    }
    run_ok(&mut cmd)
}

fn total_losses(csv: &str) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

fn small_config() -> ModelConfig {
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

fn randomize_edges(model: &mut BpgModel, rng: &mut ChaCha8Rng) {
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

fn gt_poses(kind: SynthKind, frames: usize, seed: u64, skel: &SkeletonModel) -> Vec<PoseEstimate> {
    synth_generate(kind, frames, 60.0, seed)
        .unwrap()
        .frames()
        .iter()
        .map(|f| PoseEstimate::from_local(f.local_rot.clone(), f.root_translation, skel))
        .collect()
}

/// Recursive FK with unit quaternions, independent of the library's matrix
/// path.
fn fk_oracle(j: usize, rot: &[AxisAngle], root: &Vector3<f64>, skel: &SkeletonModel) -> (UnitQuaternion<f64>, Vector3<f64>) {
    let local = UnitQuaternion::from_scaled_axis(rot[j].0);
    match skel.parent(j) {
        None => (local, *root),
        Some(p) => {
            let (q, x) = fk_oracle(p, rot, root, skel);
            (q * local, x + q * skel.offset(j))
        }
    }
}

fn random_axis_angle(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> AxisAngle {
    let axis = loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    AxisAngle(axis * rng.gen_range(lo..hi))
}

// ── criteria ──────────────────────────────────────────────────────────────

fn c1_report_format(tmp: &Path) -> String {
    let data = tmp.join("c1");
    fs::create_dir_all(&data).unwrap();
    synth(&data, "kick.mot", "kick", 30, 2);
    let cfg = tmp.join("c1.cfg");
    fs::write(&cfg, OVERFIT_CONFIG).unwrap();
    let run = tmp.join("c1_run");
    train(&data, &cfg, &run, &["k_window=9", "steps=1", "d_t=8", "d_g=8", "d_node=4"], Some("1"));
    let out = tmp.join("c1_metrics.json");
    run_ok(bpg().args(["eval", "--checkpoint"]).arg(run.join("model.bpg")).arg("--data").arg(&data).arg("--out").arg(&out));
    let r = MetricReport::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r.per_joint_mpjpe_cm.len(), NUM_JOINTS);
    assert!(r.mpjre_deg.is_finite() && r.mpjpe_cm.is_finite() && r.mpjve_cm_s.is_finite());
    "report has MPJRE/MPJPE/MPJVE + 22 per-joint entries; benchmark-scale scores need licensed data and GPU training".into()
}

fn c2_fk_oracle() -> String {
    let skel = default_skeleton();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let poses: Vec<(Vec<AxisAngle>, Vector3<f64>)> = (0..100)
        .map(|_| {
            let rot = (0..NUM_JOINTS).map(|_| random_axis_angle(&mut rng, 0.0, std::f64::consts::PI)).collect();
            let root = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(-2.0..2.0));
            (rot, root)
        })
        .collect();
    let t0 = Instant::now();
    let got: Vec<Vec<Vector3<f64>>> = poses.iter().map(|(r, t)| forward_kinematics(r, t, &skel).0).collect();
    let elapsed = t0.elapsed();
    let mut worst = 0.0f64;
    for ((rot, root), pos) in poses.iter().zip(&got) {
        for (j, p) in pos.iter().enumerate() {
            worst = worst.max((p - fk_oracle(j, rot, root, &skel).1).amax());
        }
    }
    assert!(worst < FK_TOL, "max deviation {worst:e} m");
    assert!(elapsed < FK_BUDGET, "took {elapsed:?}");
    format!("100 poses, max |Δ| {worst:.1e} m < {FK_TOL:e}, {elapsed:.2?}")
}

fn c3_round_trip() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = random_axis_angle(&mut rng, 1e-6, std::f64::consts::PI - 1e-3);
        let back = matrix_to_axis_angle(&axis_angle_to_matrix(&a).unwrap()).unwrap();
        worst = worst.max((back.0 - a.0).amax());
    }
    assert!(worst < ROUND_TRIP_TOL, "max component error {worst:e}");
    format!("1000 rotations, max component error {worst:.1e} < {ROUND_TRIP_TOL:e}")
}

fn c4_gradcheck() -> String {
    let t0 = Instant::now();
    let out = bpg()
        .args(["gradcheck", "all", "--tol", &GRADCHECK_TOL.to_string()])
        .output()
        .unwrap();
    let elapsed = t0.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    for block in [
        "feature_integration",
        "sci_block",
        "temporal_pyramid",
        "spatial_split",
        "node_assign",
        "edge_mlp_ds",
        "edge_mlp_l",
        "gcn_layer",
        "output_head",
        "loss_rot",
        "loss_pos",
        "loss_bone",
    ] {
        assert!(text.contains(&format!("PASS {block} ")), "{block} missing:\n{text}");
    }
    assert!(elapsed < GRADCHECK_BUDGET, "took {elapsed:?}");
    let blocks = text.lines().filter(|l| l.starts_with("PASS ")).count();
    format!("{blocks} blocks pass at rel err < {GRADCHECK_TOL:e}, {elapsed:.1?}")
}

fn c5_metric_identity() -> String {
    let skel = default_skeleton();
    for (kind, seed) in [(SynthKind::Walk, 1), (SynthKind::Kick, 2), (SynthKind::Idle, 3)] {
        let x = gt_poses(kind, 50, seed, &skel);
        let r = evaluate(&x, &x, 60.0).unwrap();
        assert_eq!((r.mpjre_deg, r.mpjpe_cm, r.mpjve_cm_s), (0.0, 0.0, 0.0));
        assert!(r.per_joint_mpjpe_cm.iter().all(|&v| v == 0.0));
    }
    "evaluate(x, x) is exactly zero on walk, kick and idle fixtures".into()
}

fn c6_offset() -> String {
    let skel = default_skeleton();
    let gt = gt_poses(SynthKind::Walk, 60, 4, &skel);
    let shift = Vector3::new(1.0, 2.0, 2.0) / 3.0 * 0.01;
    let pred: Vec<PoseEstimate> = gt
        .iter()
        .map(|p| PoseEstimate::from_local(p.local_rot.clone(), p.root_translation + shift, &skel))
        .collect();
    let r = evaluate(&pred, &gt, 60.0).unwrap();
    assert!((r.mpjpe_cm - 1.0).abs() < OFFSET_TOL, "mpjpe {}", r.mpjpe_cm);
    assert!(r.mpjve_cm_s.abs() < OFFSET_TOL, "mpjve {}", r.mpjve_cm_s);
    format!("MPJPE {:.12} cm, MPJVE {:.1e} cm/s", r.mpjpe_cm, r.mpjve_cm_s)
}

fn c7_adjacency() -> String {
    let skel = default_skeleton();
    let mask = skeleton_adjacency(&skel);
    let mut model = BpgModel::new(small_config(), skel.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kinds = [SynthKind::Walk, SynthKind::Kick, SynthKind::Idle];
    let mut worst = 0.0f64;
    let mut layers = 0;
    for i in 0..1000u64 {
        if i % 50 == 0 {
            randomize_edges(&mut model, &mut rng);
        }
        let seq = synth_generate(kinds[i as usize % 3], 12, 60.0, i).unwrap();
        let windows = make_windows(&extract_sensors(&seq, &skel), 9, 60.0);
        let w = &windows[rng.gen_range(0..windows.len())];
        let (_, adj) = model.forward_traced(w).unwrap();
        for set in &adj {
            assert_eq!(set.a_ss, set.a_ss.t(), "A_ss not symmetric");
            assert!(
                set.a_ds.indexed_iter().all(|(ij, v)| *v == 0.0 || mask[ij] != 0.0),
                "A_ds outside skeleton pattern"
            );
            let h = compose_adjacency(&set.a_ss, &set.a_ds, &set.a_l).unwrap();
            worst = h.iter().zip(&set.a_h).fold(worst, |m, (a, b)| m.max((a - b).abs()));
            layers += 1;
        }
    }
    assert!(worst < ADJ_TOL, "|A_h - sum| = {worst:e}");
    format!("1000 forwards ({layers} layers), max |A_h − ΣA| {worst:.1e}")
}

/// Static-skeleton GCN written directly on ndarray, with its own FK.
fn vanilla_gcn(model: &BpgModel, x0: &Array2<f64>, head: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let a = static_adjacency(&model.skel);
    let slope = model.cfg.leaky_slope;
    let mut x = x0.clone();
    for l in 0..model.cfg.gcn_layers {
        let w = &model.store.get(&format!("gcn{l}.w")).unwrap().value;
        let z = a.dot(&x.dot(w)).mapv(|v| if v > 0.0 { v } else { slope * v });
        x = if z.dim() == x.dim() { z + &x } else { z };
    }
    let hw = &model.store.get("head.w").unwrap().value;
    let hb = &model.store.get("head.b").unwrap().value;
    let d = model.cfg.d_node;
    let rot: Vec<AxisAngle> = (0..NUM_JOINTS)
        .map(|j| {
            let o = x.row(j).dot(&hw.slice(ndarray::s![j * d..(j + 1) * d, ..])) + hb.row(j);
            AxisAngle(Vector3::new(o[0], o[1], o[2]))
        })
        .collect();
    let pos: Vec<Vector3<f64>> = (0..NUM_JOINTS).map(|j| fk_oracle(j, &rot, &Vector3::zeros(), &model.skel).1).collect();
    pos.iter().map(|p| p - pos[HEAD] + head).collect()
}

fn c8_vanilla_gcn() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let cfg = ModelConfig {
            seed: trial,
            ..small_config()
        };
        let mut model = BpgModel::new(cfg, default_skeleton()).unwrap();
        randomize_edges(&mut model, &mut rng);
        model.zero_dynamic_edges();
        let x0 = Array2::from_shape_fn((NUM_JOINTS, model.cfg.d_node), |_| rng.gen_range(-1.0..1.0));
        let head = Vector3::new(rng.gen_range(-1.0..1.0), 1.7, rng.gen_range(-1.0..1.0));
        let got = model.bpg_forward(&NodeFeatureSet(x0.clone()), &head).unwrap();
        for (p, q) in got.positions.iter().zip(vanilla_gcn(&model, &x0, &head)) {
            worst = worst.max((p - q).amax());
        }
    }
    assert!(worst < VANILLA_TOL, "max deviation {worst:e}");
    format!("20 models, max |Δ| {worst:.1e} m < {VANILLA_TOL:e}")
}

fn c9_overfit(tmp: &Path) -> String {
    let data = tmp.join("c9");
    fs::create_dir_all(&data).unwrap();
    synth(&data, "walk.mot", "walk", 200, 7);
    let cfg = tmp.join("overfit.cfg");
    fs::write(&cfg, OVERFIT_CONFIG).unwrap();
    let run = tmp.join("c9_run");
    let t0 = Instant::now();
    train(&data, &cfg, &run, &[], None);
    let elapsed = t0.elapsed();
    let losses = total_losses(&fs::read_to_string(run.join("loss.csv")).unwrap());
    assert_eq!(losses.len(), 2000);
    let tail = &losses[losses.len() - 50..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let ratio = losses[0] / tail_mean;
    let r = MetricReport::from_json(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert!(r.mpjpe_cm < OVERFIT_MPJPE_CM, "training MPJPE {} cm", r.mpjpe_cm);
    assert!(ratio >= OVERFIT_LOSS_RATIO, "loss only fell {ratio:.1}x");
    assert!(elapsed < OVERFIT_BUDGET, "took {elapsed:?}");
    format!(
        "MPJPE {:.3} cm < {OVERFIT_MPJPE_CM}, loss {:.4} → {:.4} ({ratio:.0}x), {elapsed:.0?}",
        r.mpjpe_cm, losses[0], tail_mean
    )
}

fn c10_determinism(tmp: &Path) -> String {
    let data = tmp.join("c10");
    fs::create_dir_all(&data).unwrap();
    synth(&data, "walk.mot", "walk", 70, 11);
    synth(&data, "kick.mot", "kick", 60, 12);
    let cfg = tmp.join("det.cfg");
    fs::write(&cfg, OVERFIT_CONFIG).unwrap();
    let sets = ["k_window=21", "steps=40", "checkpoint_every=20", "d_t=16", "d_g=16", "d_node=8"];
    let a = tmp.join("c10_a");
    let b = tmp.join("c10_b");
    // different worker counts must not change a single bit
    train(&data, &cfg, &a, &sets, Some("1"));
    train(&data, &cfg, &b, &sets, Some("3"));
    let mut compared = 0;
    for f in ["ckpt_000020.bpg", "model.bpg", "loss.csv", "metrics.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
        compared += 1;
    }
    let motion = data.join("walk.mot");
    let infer = |ck: &Path| run_ok(bpg().args(["infer", "--checkpoint"]).arg(ck).arg("--motion").arg(&motion)).stdout;
    let ia = infer(&a.join("model.bpg"));
    assert!(!ia.is_empty());
    assert_eq!(ia, infer(&b.join("model.bpg")), "inference differs");
    format!("{compared} training artifacts and inference output byte-identical across runs (1 vs 3 threads)")
}

fn c11_causality(tmp: &Path) -> String {
    let data = tmp.join("c11");
    fs::create_dir_all(&data).unwrap();
    let motion = synth(&data, "kick.mot", "kick", 90, 13);
    let cfg = tmp.join("c11.cfg");
    fs::write(&cfg, OVERFIT_CONFIG).unwrap();
    let run = tmp.join("c11_run");
    train(&data, &cfg, &run, &["k_window=15", "steps=10", "d_t=16", "d_g=16", "d_node=8"], Some("1"));
    let ckpt = run.join("model.bpg");
    let sensors = String::from_utf8(run_ok(bpg().args(["sensors", "--motion"]).arg(&motion)).stdout).unwrap();
    let lines: Vec<&str> = sensors.lines().collect();
    let full = String::from_utf8(infer_stdin(&ckpt, sensors.as_bytes())).unwrap();
    let full: Vec<&str> = full.lines().collect();
    assert_eq!(full.len(), lines.len() - 15 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cuts: Vec<usize> = (0..10).map(|_| rng.gen_range(14..lines.len())).collect();
    cuts.sort_unstable();
    for &n in &cuts {
        let prefix: String = lines[..=n].iter().map(|l| format!("{l}\n")).collect();
        let out = String::from_utf8(infer_stdin(&ckpt, prefix.as_bytes())).unwrap();
        let out: Vec<&str> = out.lines().collect();
        assert_eq!(out.len(), n - 14 + 1, "truncated at {n}");
        assert_eq!(out.last(), full.get(n - 14), "frame {n} changed after truncation");
        assert_eq!(&out[..], &full[..out.len()], "earlier frames changed at cut {n}");
    }
    format!("frames {cuts:?} unchanged after deleting all later input")
}

type Check<'a> = Box<dyn Fn() -> String + 'a>;

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();
    let criteria: Vec<(u32, &str, Check)> = vec![
        (1, "metric report format", Box::new(|| c1_report_format(tmp))),
        (2, "FK oracle equivalence", Box::new(c2_fk_oracle)),
        (3, "rotation round trips", Box::new(c3_round_trip)),
        (4, "gradient verification", Box::new(c4_gradcheck)),
        (5, "metric identity", Box::new(c5_metric_identity)),
        (6, "constant-offset metrics", Box::new(c6_offset)),
        (7, "adjacency invariants", Box::new(c7_adjacency)),
        (8, "vanilla-GCN reduction", Box::new(c8_vanilla_gcn)),
        (9, "overfit capacity", Box::new(|| c9_overfit(tmp))),
        (10, "determinism", Box::new(|| c10_determinism(tmp))),
        (11, "online causality", Box::new(|| c11_causality(tmp))),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check) in &criteria {
        match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS  criterion {n:>2}  {name}: {detail}"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  criterion {n:>2}  {name}: {msg}");
            }
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
