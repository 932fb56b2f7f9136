//! (sensor window, target pose) pairs cut from motion sequences.

use nalgebra::Vector3;
use ndarray::Array2;

use crate::autograd::Tensor;
use crate::error::{BpgError, Result};
use crate::featinit::{assemble_features, SensorFeatureBlock};
use crate::sensorio::{extract_sensors, make_windows, MotionSequence};
use crate::skeleton::{PoseEstimate, SkeletonModel};

/// One training/evaluation example with its features precomputed.
#[derive(Debug, Clone)]
pub struct Sample {
    pub target: usize,
    pub features: SensorFeatureBlock,
    pub head: Vector3<f64>,
    pub gt: PoseEstimate,
    pub gt_axis: Tensor,
    pub gt_pos: Tensor,
}

/// Samples of one sequence, in target-frame order.
#[derive(Debug, Clone)]
pub struct Clip {
    pub name: String,
    pub fps: f64,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub clips: Vec<Clip>,
}

pub(crate) fn rows_to_tensor(rows: impl ExactSizeIterator<Item = Vector3<f64>>) -> Tensor {
    let n = rows.len();
    let mut t = Array2::zeros((n, 3));
    for (i, v) in rows.enumerate() {
        for c in 0..3 {
            t[(i, c)] = v[c];
        }
    }
    t
}

impl Clip {
    /// Windows every eligible target frame of `seq`. Sequences shorter than
    /// `k` produce an empty clip.
    pub fn from_sequence(name: &str, seq: &MotionSequence, skel: &SkeletonModel, k: usize) -> Clip {
        let sensors = extract_sensors(seq, skel);
        let samples = make_windows(&sensors, k, seq.fps())
            .into_iter()
            .map(|w| {
                let f = &seq.frames()[w.target];
                let gt = PoseEstimate::from_local(f.local_rot.clone(), f.root_translation, skel);
                Sample {
                    target: w.target,
                    features: assemble_features(&w),
                    head: w.head_position(),
                    gt_axis: rows_to_tensor(gt.local_rot.iter().map(|r| r.0)),
                    gt_pos: rows_to_tensor(gt.positions.iter().copied()),
                    gt,
                }
            })
            .collect();
        Clip {
            name: name.to_string(),
            fps: seq.fps(),
            samples,
        }
    }
}

impl Dataset {
    pub fn from_sequences(seqs: &[(String, MotionSequence)], skel: &SkeletonModel, k: usize) -> Result<Dataset> {
        let clips: Vec<Clip> = seqs
            .iter()
            .map(|(name, s)| Clip::from_sequence(name, s, skel, k))
            .filter(|c| !c.samples.is_empty())
            .collect();
        if clips.is_empty() {
            return Err(BpgError::InvalidArgument(format!(
                "no sequence has at least {k} frames"
            )));
        }
        Ok(Dataset { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.iter().map(|c| c.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample by flat index over all clips.
    pub fn sample(&self, mut i: usize) -> &Sample {
        for c in &self.clips {
            if i < c.samples.len() {
                return &c.samples[i];
            }
            i -= c.samples.len();
        }
        panic!("sample index out of range")
    }
}
