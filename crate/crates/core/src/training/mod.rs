//! Losses, early stopping, metric logs and the training stages of every
//! model family.

mod batch;
mod log;
mod losses;
mod plan;
mod stages;
mod stop;

pub use batch::{
    clean_targets, multitask_step_loss, pretrain_step_loss, reconstruction_loss, triplet_step_loss, ComboBatch,
    Counters, StepLoss, TripletBatch, TripletLossOptions,
};
pub use log::{MetricRecord, MetricsLog};
pub use losses::{l1_loss, mse_loss, triplet_loss, triplet_loss_vec};
pub use plan::{Regime, TrainPlan, VAL_FRACTION};
pub use stages::{
    finetune_e2e, pretrain_direct, run_paft, stream_seed, train_direct, train_extractors, train_mss, PaftReport,
    StageReport,
};
pub use stop::{early_stopper, StopDecision};
