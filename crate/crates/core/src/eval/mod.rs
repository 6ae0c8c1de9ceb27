//! Cross-validated evaluation: fold construction, ROC AUC, paired
//! significance tests, and the experiment runner.

mod auc;
mod experiment;
mod folds;
mod ttest;

pub use auc::{auc, auc_pair_counting};
pub use experiment::{
    plan_for_cohort, run_experiment, AucCell, Classifier, CnnHyperParams, Comparison, EvalReport,
    ExperimentConfig, FoldPrevalence, Scope, Summary,
};
pub use folds::{make_folds, Fold, FoldPlan};
pub use ttest::{incomplete_beta_regularized, paired_t_test, student_t_two_sided_p, TTest};
