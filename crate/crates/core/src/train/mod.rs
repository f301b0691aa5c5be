//! Optimiser, schedule, configuration, synthetic datasets and the
//! classification and detection training loops.

mod config;
mod data;
mod loops;
mod optim;
#[cfg(test)]
mod tests;

pub use config::{DataSpec, ModelSpec, TrainConfig};
pub use data::{build_dataset, final_boxes, flip_sample, sample_seed, synth_config, Dataset, Sample, Split, MIN_BOX_DIAG, MIN_BOX_SIDE};
pub use loops::{
    build_classifier_model, build_detector_model, classifier_config, classifier_scores, detect_all, detector_configs,
    eval_classifier, eval_detector, train_classifier, train_detector, EpochRecord, FinalMetrics, RunReport, Trained,
};
pub use optim::{adamw_step, clip_grad_norm, clip_store_grads, cosine_lr, AdamState, AdamW, AdamWParams};
