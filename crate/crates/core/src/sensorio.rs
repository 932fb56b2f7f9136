//! Motion files, the three tracked sensor streams and sliding windows over
//! them, plus a synthetic motion generator for desk-scale experiments.
//!
//! Motion file format (text, LF newlines):
//!
//! ```text
//! fps 60 joints 22
//! tx ty tz  r0x r0y r0z  r1x r1y r1z ... r21x r21y r21z
//! ...
//! ```
//!
//! Each frame line carries 3 root-translation floats followed by 66 local
//! axis-angle floats. Values are written with the shortest representation
//! that round-trips, so `save(load(f))` reproduces canonical files byte for
//! byte.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BpgError, Result};
use crate::rotmath::{AxisAngle, RotMatrix};
use crate::skeleton::{forward_kinematics, SkeletonModel, HEAD, LEFT_WRIST, NUM_JOINTS, RIGHT_WRIST};

/// Number of tracked devices: headset and two hand controllers.
pub const NUM_SENSORS: usize = 3;

/// Joints the devices sit on, in stream order.
pub const SENSOR_JOINTS: [usize; NUM_SENSORS] = [HEAD, LEFT_WRIST, RIGHT_WRIST];

pub const DEFAULT_FPS: f64 = 60.0;

/// Floats per streamed sensor line: 3 positions then 3 row-major rotations.
pub const SENSOR_LINE_FLOATS: usize = NUM_SENSORS * 3 + NUM_SENSORS * 9;

const FRAME_FLOATS: usize = 3 + NUM_JOINTS * 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub root_translation: Vector3<f64>,
    pub local_rot: Vec<AxisAngle>,
}

/// Ground-truth full-body motion at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: f64,
    frames: Vec<MotionFrame>,
}

impl MotionSequence {
    pub fn new(fps: f64, frames: Vec<MotionFrame>) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(BpgError::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        if frames.len() < 2 {
            return Err(BpgError::InvalidArgument(format!(
                "motion needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.local_rot.len() != NUM_JOINTS {
                return Err(BpgError::shape(format!("frame {i}"), NUM_JOINTS, f.local_rot.len()));
            }
            let finite = f.root_translation.iter().all(|v| v.is_finite())
                && f.local_rot.iter().all(AxisAngle::is_finite);
            if !finite {
                return Err(BpgError::InvalidArgument(format!("frame {i} has non-finite values")));
            }
        }
        Ok(MotionSequence { fps, frames })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[MotionFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| BpgError::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "fps" || h[2] != "joints" {
            return Err(err(1, "expected header `fps <float> joints 22`".into()));
        }
        let fps: f64 = h[1]
            .parse()
            .map_err(|_| err(1, format!("bad fps `{}`", h[1])))?;
        if h[3] != "22" {
            return Err(err(1, format!("expected 22 joints, header says {}", h[3])));
        }
        let mut frames = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let vals = parse_floats(line, FRAME_FLOATS).map_err(|m| err(lineno, m))?;
            let root_translation = Vector3::new(vals[0], vals[1], vals[2]);
            let local_rot = vals[3..]
                .chunks_exact(3)
                .map(|c| AxisAngle::new(c[0], c[1], c[2]))
                .collect();
            frames.push(MotionFrame {
                root_translation,
                local_rot,
            });
        }
        MotionSequence::new(fps, frames).map_err(|e| err(0, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("fps {} joints {}\n", self.fps, NUM_JOINTS);
        for f in &self.frames {
            let t = &f.root_translation;
            let _ = write!(out, "{} {} {}", t.x, t.y, t.z);
            for r in &f.local_rot {
                let _ = write!(out, " {} {} {}", r.0.x, r.0.y, r.0.z);
            }
            out.push('\n');
        }
        out
    }
}

fn parse_floats(line: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() != expected {
        return Err(format!("expected {expected} values, found {}", cols.len()));
    }
    cols.iter()
        .map(|c| {
            c.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad value `{c}`"))
        })
        .collect()
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| BpgError::io(path, e))?;
    MotionSequence::parse(&text, &path.display().to_string())
}

pub fn save_motion(seq: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, seq.to_text()).map_err(|e| BpgError::io(path, e))
}

/// Global position and orientation of the three tracked joints in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub positions: [Vector3<f64>; NUM_SENSORS],
    pub rotations: [RotMatrix; NUM_SENSORS],
}

impl SensorFrame {
    /// One stream line: head/left/right positions, then their rotations
    /// row-major.
    pub fn to_line(&self) -> String {
        let mut out = String::new();
        for p in &self.positions {
            let _ = write!(out, "{} {} {} ", p.x, p.y, p.z);
        }
        for r in &self.rotations {
            for v in r.to_row_major() {
                let _ = write!(out, "{v} ");
            }
        }
        out.pop();
        out
    }

    /// Parses a stream line. Rotations are accepted if orthonormal within
    /// `1e-6`, which admits single-precision device output.
    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let vals = parse_floats(line, SENSOR_LINE_FLOATS)?;
        let mut positions = [Vector3::zeros(); NUM_SENSORS];
        for s in 0..NUM_SENSORS {
            positions[s] = Vector3::new(vals[3 * s], vals[3 * s + 1], vals[3 * s + 2]);
        }
        let mut rotations = [RotMatrix::identity(); NUM_SENSORS];
        for s in 0..NUM_SENSORS {
            let base = 9 + 9 * s;
            let m = Matrix3::from_row_slice(&vals[base..base + 9]);
            rotations[s] = RotMatrix::from_matrix_tol(m, 1e-6)
                .map_err(|e| format!("sensor {s}: {e}"))?;
        }
        Ok(SensorFrame {
            positions,
            rotations,
        })
    }
}

/// `K` consecutive sensor frames ending at target frame `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow {
    pub frames: Vec<SensorFrame>,
    pub fps: f64,
    pub target: usize,
}

impl SensorWindow {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Headset position at the target frame.
    pub fn head_position(&self) -> Vector3<f64> {
        self.frames.last().map_or_else(Vector3::zeros, |f| f.positions[0])
    }
}

/// Runs forward kinematics per frame and reads off the tracked joints.
pub fn extract_sensors(seq: &MotionSequence, skel: &SkeletonModel) -> Vec<SensorFrame> {
    seq.frames
        .iter()
        .map(|f| {
            let (pos, rot) = forward_kinematics(&f.local_rot, &f.root_translation, skel);
            SensorFrame {
                positions: SENSOR_JOINTS.map(|j| pos[j]),
                rotations: SENSOR_JOINTS.map(|j| rot[j]),
            }
        })
        .collect()
}

/// One window per target frame `N` in `K-1..len`, stride 1. A stream shorter
/// than `K` yields no windows.
pub fn make_windows(sensors: &[SensorFrame], k: usize, fps: f64) -> Vec<SensorWindow> {
    if k == 0 || sensors.len() < k {
        return Vec::new();
    }
    (k - 1..sensors.len())
        .map(|n| SensorWindow {
            frames: sensors[n + 1 - k..=n].to_vec(),
            fps,
            target: n,
        })
        .collect()
}

/// Backward difference scaled to units per second.
pub fn finite_diff_velocity(prev: &Vector3<f64>, cur: &Vector3<f64>, fps: f64) -> Vector3<f64> {
    (cur - prev) * fps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Walk,
    Kick,
    Idle,
}

impl std::str::FromStr for SynthKind {
    type Err = BpgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk" => Ok(SynthKind::Walk),
            "kick" => Ok(SynthKind::Kick),
            "idle" => Ok(SynthKind::Idle),
            other => Err(BpgError::InvalidArgument(format!(
                "unknown motion kind `{other}` (expected walk, kick or idle)"
            ))),
        }
    }
}

/// Seeded sinusoidal motion. Walk swings the legs in antiphase and moves the
/// root forward along +z; kick repeats a right-leg kick in place; idle stays
/// within 0.05 rad of the rest pose.
pub fn synth_generate(kind: SynthKind, n_frames: usize, fps: f64, seed: u64) -> Result<MotionSequence> {
    if n_frames < 2 {
        return Err(BpgError::InvalidArgument(format!(
            "need at least 2 frames, got {n_frames}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per-joint small oscillations keep every joint moving
    let jitter: Vec<[(f64, f64, f64); 3]> = (0..NUM_JOINTS)
        .map(|_| {
            [0; 3].map(|_| {
                (
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.3..1.5),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
        })
        .collect();
    let freq = rng.gen_range(0.8..1.1);
    let phase0 = rng.gen_range(0.0..2.0 * PI);
    let gain = rng.gen_range(0.9..1.1);
    let omega = 2.0 * PI * freq;

    let frames = (0..n_frames)
        .map(|i| {
            let t = i as f64 / fps;
            let ph = omega * t + phase0;
            let mut rot = vec![Vector3::<f64>::zeros(); NUM_JOINTS];
            let amp = match kind {
                SynthKind::Idle => 0.025,
                _ => 0.04,
            };
            for (j, axes) in jitter.iter().enumerate() {
                for (a, &(scale, rate, off)) in axes.iter().enumerate() {
                    rot[j][a] = amp * scale * (omega * rate * t + off).sin();
                }
            }
            let mut root = Vector3::new(0.0, 0.95, 0.0);
            match kind {
                SynthKind::Idle => {
                    root.x += 0.01 * (0.5 * omega * t).sin();
                }
                SynthKind::Walk => {
                    let hip = 0.45 * gain * ph.sin();
                    rot[1].x = -hip;
                    rot[2].x = hip;
                    rot[4].x = 0.35 * gain * (1.0 + (ph - 0.5 * PI).sin());
                    rot[5].x = 0.35 * gain * (1.0 + (ph + 0.5 * PI).sin());
                    rot[7].x = -0.15 * gain * (ph + 0.3).sin();
                    rot[8].x = 0.15 * gain * (ph + 0.3).sin();
                    rot[16] += Vector3::new(0.35 * gain * ph.sin(), 0.0, -1.2);
                    rot[17] += Vector3::new(-0.35 * gain * ph.sin(), 0.0, 1.2);
                    rot[18] += Vector3::new(0.0, 0.3, 0.0);
                    rot[19] += Vector3::new(0.0, -0.3, 0.0);
                    rot[0].y += 0.08 * ph.sin();
                    rot[3].y -= 0.06 * ph.sin();
                    root.z += 1.2 * gain * freq * t;
                    root.y += 0.02 * (2.0 * ph).cos();
                }
                SynthKind::Kick => {
                    let lift = 0.5 * (1.0 - ph.cos());
                    rot[2].x = -1.1 * gain * lift;
                    rot[5].x = 0.9 * gain * (0.5 * (1.0 - (ph - 0.8).cos())).powi(2);
                    rot[1].x = 0.1 * lift;
                    rot[16] += Vector3::new(-0.3 * lift, 0.0, -1.0);
                    rot[17] += Vector3::new(0.3 * lift, 0.0, 1.0);
                    rot[0].x += 0.12 * lift;
                    root.y -= 0.03 * lift;
                    root.z -= 0.05 * lift;
                }
            }
            MotionFrame {
                root_translation: root,
                local_rot: rot.into_iter().map(AxisAngle).collect(),
            }
        })
        .collect();
    MotionSequence::new(fps, frames)
}

/// Deterministic 90/10 split of whole sequences after a seeded shuffle.
pub fn split_train_test<T>(mut items: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let n_test = (items.len() as f64 * 0.1).round() as usize;
    let test = items.split_off(items.len() - n_test);
    (items, test)
}
