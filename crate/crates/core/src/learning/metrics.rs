//! MPJRE (degrees), MPJPE (cm) and MPJVE (cm/s).
//!
//! Velocities are backward differences within one sequence, so a sequence of
//! `n` frames contributes `n - 1` velocity samples.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BpgError, Result};
use crate::rotmath::{geodesic_deg, rodrigues, RotMatrix};
use crate::skeleton::{PoseEstimate, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjre_deg: f64,
    pub mpjpe_cm: f64,
    pub mpjve_cm_s: f64,
    pub per_joint_mpjpe_cm: Vec<f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| BpgError::InvalidArgument(format!("bad metrics json: {e}")))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| BpgError::io(path, e))
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "mpjre_deg: {}\nmpjpe_cm: {}\nmpjve_cm_s: {}\n",
            self.mpjre_deg, self.mpjpe_cm, self.mpjve_cm_s
        );
        for (j, v) in self.per_joint_mpjpe_cm.iter().enumerate() {
            let _ = writeln!(s, "mpjpe_cm[{j}]: {v}");
        }
        s
    }
}

/// Running sums over any number of sequences.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    rot_sum: f64,
    pos_sum: f64,
    vel_sum: f64,
    per_joint: [f64; NUM_JOINTS],
    frames: usize,
    vel_frames: usize,
}

impl Default for MetricAccumulator {
    fn default() -> Self {
        MetricAccumulator {
            rot_sum: 0.0,
            pos_sum: 0.0,
            vel_sum: 0.0,
            per_joint: [0.0; NUM_JOINTS],
            frames: 0,
            vel_frames: 0,
        }
    }
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one temporally contiguous sequence of aligned predictions. A
    /// single-frame sequence contributes no velocity samples.
    pub fn add_sequence(&mut self, preds: &[PoseEstimate], gts: &[PoseEstimate], fps: f64) -> Result<()> {
        if preds.len() != gts.len() {
            return Err(BpgError::shape("evaluate: frame count", gts.len(), preds.len()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(BpgError::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        for (t, (p, g)) in preds.iter().zip(gts).enumerate() {
            for pose in [p, g] {
                if pose.local_rot.len() != NUM_JOINTS || pose.positions.len() != NUM_JOINTS {
                    return Err(BpgError::shape("evaluate: joints", NUM_JOINTS, pose.positions.len()));
                }
            }
            for j in 0..NUM_JOINTS {
                let rp = RotMatrix::from_matrix_unchecked(rodrigues(&p.local_rot[j].0));
                let rg = RotMatrix::from_matrix_unchecked(rodrigues(&g.local_rot[j].0));
                self.rot_sum += geodesic_deg(&rp, &rg);
                let e = (p.positions[j] - g.positions[j]).norm() * 100.0;
                self.pos_sum += e;
                self.per_joint[j] += e;
                if t > 0 {
                    let vp = (p.positions[j] - preds[t - 1].positions[j]) * fps;
                    let vg = (g.positions[j] - gts[t - 1].positions[j]) * fps;
                    self.vel_sum += (vp - vg).norm() * 100.0;
                }
            }
        }
        self.frames += preds.len();
        self.vel_frames += preds.len() - 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport> {
        if self.vel_frames == 0 {
            return Err(BpgError::InvalidArgument(
                "evaluation needs a sequence of at least 2 frames".into(),
            ));
        }
        let n = (self.frames * NUM_JOINTS) as f64;
        Ok(MetricReport {
            mpjre_deg: self.rot_sum / n,
            mpjpe_cm: self.pos_sum / n,
            mpjve_cm_s: self.vel_sum / (self.vel_frames * NUM_JOINTS) as f64,
            per_joint_mpjpe_cm: self.per_joint.iter().map(|s| s / self.frames as f64).collect(),
        })
    }
}

/// Metrics of one contiguous sequence.
pub fn evaluate(preds: &[PoseEstimate], gts: &[PoseEstimate], fps: f64) -> Result<MetricReport> {
    if preds.len() == gts.len() && preds.len() < 2 {
        return Err(BpgError::InvalidArgument("evaluate needs at least 2 frames".into()));
    }
    let mut acc = MetricAccumulator::new();
    acc.add_sequence(preds, gts, fps)?;
    acc.finish()
}
