//! Training loops, evaluation protocol and hyperparameter search.

mod config;
mod cv;
mod finetune;
mod metrics;
mod pretrain;
mod report;
mod search;

pub use config::{lr_at_epoch, Phase, TrainConfig, IMPROVEMENT_EPS, LR_DECAY_EVERY, LR_DECAY_FACTOR};
pub use cv::{
    classifier_seeds, cross_validate, cross_validate_features, Access, AuditLog, CvOutcome, CvSettings, Role, Stage,
};
pub use finetune::{extract_features, finetune, finetune_features, predict, Features, FinetuneEpoch, FinetuneOutcome};
pub use metrics::{macro_f1, mean_std, FoldRecord, RunMetrics};
pub use pretrain::{
    contrastive_loss, evaluate_loss, init_backbone, pretrain, pretrain_from, pretraining_sets, PretrainEpoch,
    PretrainOutcome,
};
pub use report::{config_hash, hex_digest, write_finetune_curves, write_pretrain_curve, write_results};
pub use search::{
    horizon_grid, random_search, sample_combinations, Combination, Ranked, SearchSpace, CLASSIFIER_LR,
    HORIZON_PER_TIMESTEP, HORIZON_SINGLE_ANCHOR, NEGATIVES, PRETRAIN_LR, WEIGHT_DECAY,
};
