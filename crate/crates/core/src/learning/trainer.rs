//! Mini-batch Adam on the summed L1 objective.
//!
//! Batches are drawn from a per-epoch permutation seeded by `(seed, epoch)`,
//! so step `s` always sees the same samples whether or not the run was
//! resumed. Per-sample gradients are computed in fixed-size chunks (in
//! parallel when allowed) and summed in chunk order, which keeps results
//! bit-identical regardless of the worker count.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::{Graph, Tensor};
use crate::bpgnet::BpgModel;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{BpgError, Result};
use crate::params::ParamGrads;
use crate::skeleton::PoseEstimate;

use super::dataset::{Clip, Dataset, Sample};
use super::losses::{total_loss_g, LossBreakdown, LossWeights};
use super::metrics::{MetricAccumulator, MetricReport};

/// Samples per gradient work unit.
const CHUNK: usize = 4;

pub const LOSS_CSV: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "model.bpg";
pub const METRICS_JSON: &str = "metrics.json";

/// Worker count from `BPG_THREADS`, falling back to the machine's cores.
pub fn worker_threads() -> usize {
    std::env::var("BPG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn thread_pool(threads: usize) -> Arc<rayon::ThreadPool> {
    Arc::new(
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("thread pool"),
    )
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// `(step, batch loss before the update)` for every step run.
    pub curve: Vec<(u64, LossBreakdown)>,
    pub final_metrics: MetricReport,
    pub checkpoints: Vec<PathBuf>,
}

pub struct Trainer {
    pub model: BpgModel,
    pub train: TrainConfig,
    step: u64,
    adam_m: Vec<Tensor>,
    adam_v: Vec<Tensor>,
    pool: Arc<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(model: BpgModel, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        if train.seed != model.cfg.seed {
            return Err(BpgError::InvalidValue {
                key: "seed".into(),
                message: "model and trainer seeds differ".into(),
            });
        }
        let zeros: Vec<Tensor> = model.store.iter().map(|(_, p)| Array2::zeros(p.value.dim())).collect();
        Ok(Trainer {
            model,
            train,
            step: 0,
            adam_m: zeros.clone(),
            adam_v: zeros,
            pool: thread_pool(worker_threads()),
        })
    }

    /// Continues from a checkpoint; `train` may extend the step budget.
    pub fn resume(ck: Checkpoint, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        Ok(Trainer {
            model: ck.model,
            train,
            step: ck.step,
            adam_m: ck.adam_m,
            adam_v: ck.adam_v,
            pool: thread_pool(worker_threads()),
        })
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.pool = thread_pool(threads);
        self
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            rot: self.train.w_rot,
            pos: self.train.w_pos,
            bone: self.train.w_bone,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            adam_m: self.adam_m.clone(),
            adam_v: self.adam_v.clone(),
        }
    }

    fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Flat sample indices used at `step` for a dataset of `n` samples.
    pub fn batch_indices(&self, step: u64, n: usize) -> Vec<usize> {
        let b = self.train.batch_size as u64;
        let n64 = n as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (step * b..(step + 1) * b)
            .map(|i| {
                let epoch = i / n64;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    cached = Some((epoch, self.epoch_order(epoch, n)));
                }
                cached.as_ref().expect("cached order").1[(i % n64) as usize]
            })
            .collect()
    }

    /// Loss of one sample under the current parameters, optionally
    /// accumulating its gradient into `grads`.
    pub fn sample_loss(&self, s: &Sample, grads: Option<&mut ParamGrads>) -> LossBreakdown {
        let w = self.weights();
        let mut g = Graph::new(&self.model.store);
        let out = self.model.forward_g(&mut g, &s.features, &s.head);
        let gt_axis = g.input(s.gt_axis.clone());
        let gt_pos = g.input(s.gt_pos.clone());
        let l = total_loss_g(&mut g, out.axis_angles, out.positions, gt_axis, gt_pos, &self.model.skel, &w);
        if let Some(acc) = grads {
            let back = g.backward(l.total);
            g.param_grads(&back, acc);
        }
        l.breakdown(&g, &w)
    }

    /// Mean loss and mean gradient over `batch`.
    pub fn batch_gradient(&self, data: &Dataset, batch: &[usize]) -> (LossBreakdown, ParamGrads) {
        let chunks: Vec<(Vec<LossBreakdown>, ParamGrads)> = self.pool.install(|| {
            batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grads = self.model.store.zero_grads();
                    let losses = chunk
                        .iter()
                        .map(|&i| self.sample_loss(data.sample(i), Some(&mut grads)))
                        .collect();
                    (losses, grads)
                })
                .collect()
        });
        let mut total = self.model.store.zero_grads();
        let (mut r, mut p, mut b) = (0.0, 0.0, 0.0);
        for (losses, grads) in &chunks {
            total.add_assign(grads);
            for l in losses {
                r += l.l_rot;
                p += l.l_pos;
                b += l.l_bone;
            }
        }
        let k = 1.0 / batch.len() as f64;
        total.scale(k);
        (LossBreakdown::new(r * k, p * k, b * k, &self.weights()), total)
    }

    /// One optimizer step; returns the batch loss measured before the update.
    pub fn step_once(&mut self, data: &Dataset) -> Result<LossBreakdown> {
        let batch = self.batch_indices(self.step, data.len());
        let (loss, grads) = self.batch_gradient(data, &batch);
        if let Some(term) = loss.non_finite_term() {
            return Err(BpgError::NonFiniteLoss { step: self.step, term });
        }
        self.adam_update(&grads);
        self.step += 1;
        Ok(loss)
    }

    fn adam_update(&mut self, grads: &ParamGrads) {
        let TrainConfig {
            lr,
            beta1,
            beta2,
            adam_eps,
            ..
        } = self.train;
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (id, g) in grads.iter() {
            let m = &mut self.adam_m[id.0];
            let v = &mut self.adam_v[id.0];
            let p = self.model.store.value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + adam_eps);
            });
        }
    }

    /// Trains until `train.steps`, writing the loss curve, periodic
    /// checkpoints, the final checkpoint and final training metrics to `out`.
    pub fn run(
        &mut self,
        data: &Dataset,
        out: Option<&Path>,
        mut on_step: impl FnMut(u64, &LossBreakdown),
    ) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(BpgError::InvalidArgument("empty training set".into()));
        }
        let mut csv = match out {
            Some(dir) => Some(open_curve(dir, self.step > 0)?),
            None => None,
        };
        let mut curve = Vec::new();
        let mut checkpoints = Vec::new();
        while self.step < self.train.steps {
            let step = self.step;
            let loss = self.step_once(data)?;
            on_step(step, &loss);
            if let Some((path, w)) = csv.as_mut() {
                writeln!(w, "{}", loss.csv_row(step)).map_err(|e| BpgError::io(path.as_path(), e))?;
            }
            curve.push((step, loss));
            if let Some(dir) = out {
                if self.step.is_multiple_of(self.train.checkpoint_every) && self.step < self.train.steps {
                    let path = dir.join(format!("ckpt_{:06}.bpg", self.step));
                    self.checkpoint().save(&path)?;
                    checkpoints.push(path);
                }
            }
        }
        if let Some((path, mut w)) = csv {
            w.flush().map_err(|e| BpgError::io(&path, e))?;
        }
        let final_metrics = evaluate_model(&self.model, data)?;
        if let Some(dir) = out {
            let path = dir.join(FINAL_CHECKPOINT);
            self.checkpoint().save(&path)?;
            checkpoints.push(path);
            final_metrics.write_json(dir.join(METRICS_JSON))?;
        }
        Ok(TrainReport {
            curve,
            final_metrics,
            checkpoints,
        })
    }
}

fn open_curve(dir: &Path, append: bool) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(LOSS_CSV);
    let existing = append && path.exists();
    let file = if existing {
        OpenOptions::new().append(true).open(&path)
    } else {
        File::create(&path)
    };
    let mut w = BufWriter::new(file.map_err(|e| BpgError::io(&path, e))?);
    if !existing {
        writeln!(w, "step,l_rot,l_pos,l_bone,l_total").map_err(|e| BpgError::io(&path, e))?;
    }
    Ok((path, w))
}

/// Predictions for every sample of a clip, in target order.
pub fn predict_clip(model: &BpgModel, clip: &Clip) -> Vec<PoseEstimate> {
    clip.samples
        .iter()
        .map(|s| {
            let mut g = Graph::new(&model.store);
            let vars = model.forward_g(&mut g, &s.features, &s.head);
            model.read_pose(&g, &vars)
        })
        .collect()
}

/// Metrics of `model` over every clip of `data`, pooled.
pub fn evaluate_model(model: &BpgModel, data: &Dataset) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new();
    for clip in &data.clips {
        let preds = predict_clip(model, clip);
        let gts: Vec<PoseEstimate> = clip.samples.iter().map(|s| s.gt.clone()).collect();
        acc.add_sequence(&preds, &gts, clip.fps)?;
    }
    acc.finish()
}
