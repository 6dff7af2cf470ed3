//! Balanced splits, rank metrics, supervised fine-tuning and evaluation.

mod cohort;
mod finetune;
mod metrics;
mod split;

#[cfg(test)]
mod tests;

pub use cohort::{Cohort, DirImages};
pub use finetune::{
    evaluate, finetune, predict, short_hash, Classifier, ClassifierConfig, EvalReport, FinetuneConfig, Init, Method, TaskData,
};
pub use metrics::{auroc, roc_points, trapezoid};
pub use split::{make_balanced_split, stratified_roles, CohortSplit, SplitConfig, SplitRole};
