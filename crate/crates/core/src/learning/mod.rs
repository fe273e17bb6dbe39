//! Weakly supervised losses, pseudo labels and the training loop.

mod gradcheck;
mod loss;
mod objective;
mod optim;
mod pseudo;
mod train;

pub use gradcheck::{gradcheck, random_check_scene, GradcheckOptions, GradcheckReport, GradcheckSuite, TensorCheck};
pub use loss::{bce_grad, bce_logits, loss_global, loss_mean_pool, loss_pairwise, loss_relatedness};
pub use objective::{
    loss_and_grads, loss_only, scene_objective, LossBreakdown, LossWeights, Objective, SceneLabels,
};
pub use optim::Adam;
pub use pseudo::{pseudo_labels, PseudoLabels};
pub use train::{learning_rate, train, write_metrics, Ablation, Checkpoint, MetricRow, TrainConfig, TrainOutput};
