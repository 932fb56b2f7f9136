//! Training objective, evaluation metrics, the trainer and gradient checks.

pub mod dataset;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod trainer;

pub use dataset::{Clip, Dataset, Sample};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use losses::{loss_bone, loss_pos, loss_rot, total_loss, LossBreakdown, LossWeights};
pub use metrics::{evaluate, MetricAccumulator, MetricReport};
pub use trainer::{TrainReport, Trainer};
