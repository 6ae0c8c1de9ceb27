//! The two headline experiments: classifier comparison at the fullest data
//! layer and the MT CNN data-layer comparison, produced as one cross-validated
//! AUC report with paired significance tests.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{auc, make_folds, paired_t_test, FoldPlan};
use crate::autonet::{ConvSpec, ModelConfig, PoolSpec};
use crate::baselines::{
    aggregate_features, lr_predict, lr_train_from, rf_predict, rf_train, LinearModel, LrConfig,
};
use crate::cohort::{validate_cohort, Cohort, CONDITIONS, MC, MHNS, N_CONDITIONS};
use crate::error::{Error, Result};
use crate::pipeline::{apply_norm, assemble_frames, fit_norm, FeatureFrame, LayerLevel};
use crate::rng::sub_seed;
use crate::train::{train_model, Example, TaskMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classifier {
    MtCnn,
    StCnn,
    LrRaw,
    LrFeat,
    Rf,
}

impl Classifier {
    pub const ALL: [Classifier; 5] = [
        Classifier::MtCnn,
        Classifier::StCnn,
        Classifier::LrRaw,
        Classifier::LrFeat,
        Classifier::Rf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Classifier::MtCnn => "mt_cnn",
            Classifier::StCnn => "st_cnn",
            Classifier::LrRaw => "lr_raw",
            Classifier::LrFeat => "lr_feat",
            Classifier::Rf => "rf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown classifier `{s}`; expected one of: {}",
                    Self::ALL.map(|c| c.name()).join(", ")
                ))
            })
    }
}

/// Task subsets for cluster roll-ups. Labels are never aggregated; only AUCs
/// are averaged within a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    Mhns,
    Mc,
}

impl Scope {
    pub const ALL_SCOPES: [Scope; 3] = [Scope::All, Scope::Mhns, Scope::Mc];

    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Mhns => "mhns",
            Scope::Mc => "mc",
        }
    }

    pub fn contains(self, task: usize) -> bool {
        match self {
            Scope::All => task < N_CONDITIONS,
            Scope::Mhns => MHNS.contains(&task),
            Scope::Mc => MC.contains(&task),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnHyperParams {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub pool: PoolSpec,
    pub dropout_p: f64,
    pub hidden: usize,
    pub share_extractors: bool,
}

impl Default for CnnHyperParams {
    fn default() -> Self {
        let m = ModelConfig::paper_defaults(1, 147, 1);
        Self {
            conv1: m.conv1,
            conv2: m.conv2,
            pool: m.pool,
            dropout_p: m.dropout_p,
            hidden: m.hidden,
            share_extractors: m.share_extractors,
        }
    }
}

impl CnnHyperParams {
    pub fn model_config(&self, n_channels: usize, t_days: usize, n_tasks: usize) -> ModelConfig {
        ModelConfig {
            n_channels,
            t_days,
            conv1: self.conv1,
            conv2: self.conv2,
            pool: self.pool,
            dropout_p: self.dropout_p,
            hidden: self.hidden,
            n_tasks,
            share_extractors: self.share_extractors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub classifiers: Vec<Classifier>,
    /// Layers evaluated by the MT CNN; every other classifier runs at the
    /// fullest (last-ordered) of these.
    pub layers: Vec<LayerLevel>,
    pub seed: u64,
    pub cnn: CnnHyperParams,
    pub train: TrainConfig,
    pub lr_l2_grid: Vec<f64>,
    pub lr_max_iters: usize,
    pub rf_trees: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            classifiers: Classifier::ALL.to_vec(),
            layers: LayerLevel::ALL.to_vec(),
            seed: 0,
            cnn: CnnHyperParams::default(),
            train: TrainConfig::default(),
            lr_l2_grid: vec![0.001, 0.01, 0.1, 1.0, 10.0],
            lr_max_iters: 2000,
            rf_trees: 200,
        }
    }
}

impl ExperimentConfig {
    pub fn fullest_layer(&self) -> LayerLevel {
        self.layers.iter().copied().max().unwrap_or(LayerLevel::MinuteSleep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucCell {
    pub classifier: String,
    pub layer: String,
    pub task: String,
    pub fold: usize,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub classifier: String,
    pub layer: String,
    pub scope: String,
    pub n_cells: usize,
    pub mean_auc: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub kind: String,
    pub scope: String,
    pub a: String,
    pub b: String,
    pub n_pairs: usize,
    pub n_excluded: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_delta: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrevalence {
    pub fold: usize,
    pub task: String,
    pub train_rate: f64,
    pub val_rate: f64,
    pub test_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub fold_seed: u64,
    pub fold_sizes: Vec<(usize, usize, usize)>,
    pub cells: Vec<AucCell>,
    pub summaries: Vec<Summary>,
    pub comparisons: Vec<Comparison>,
    pub fold_prevalence: Vec<FoldPrevalence>,
    pub failed_cells: Vec<String>,
}

impl EvalReport {
    pub fn cell(&self, classifier: Classifier, layer: LayerLevel, task: usize, fold: usize) -> Option<&AucCell> {
        self.cells.iter().find(|c| {
            c.classifier == classifier.name()
                && c.layer == layer.name()
                && c.task == CONDITIONS[task]
                && c.fold == fold
        })
    }

    /// Per-(task, fold) AUCs for one classifier/layer, in (task-major) order.
    pub fn task_fold_aucs(
        &self,
        classifier: Classifier,
        layer: LayerLevel,
        scope: Scope,
    ) -> Vec<(usize, usize, Option<f64>)> {
        let mut out = Vec::new();
        for (task, _) in CONDITIONS.iter().enumerate().filter(|(t, _)| scope.contains(*t)) {
            let mut folds: Vec<usize> = self
                .cells
                .iter()
                .filter(|c| {
                    c.classifier == classifier.name()
                        && c.layer == layer.name()
                        && c.task == CONDITIONS[task]
                })
                .map(|c| c.fold)
                .collect();
            folds.sort_unstable();
            for fold in folds {
                let auc = self.cell(classifier, layer, task, fold).and_then(|c| c.auc);
                out.push((task, fold, auc));
            }
        }
        out
    }

    pub fn mean_auc(&self, classifier: Classifier, layer: LayerLevel, scope: Scope) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| {
                s.classifier == classifier.name()
                    && s.layer == layer.name()
                    && s.scope == scope.name()
            })
            .map(|s| s.mean_auc)
    }

    pub fn summary(&self, classifier: Classifier, layer: LayerLevel, scope: Scope) -> Option<&Summary> {
        self.summaries.iter().find(|s| {
            s.classifier == classifier.name() && s.layer == layer.name() && s.scope == scope.name()
        })
    }

    pub fn comparison(&self, kind: &str, scope: Scope, a: &str, b: &str) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.kind == kind && c.scope == scope.name() && c.a == a && c.b == b)
    }

    pub fn report_csv(&self) -> String {
        let mut out = String::from("classifier,layer,task,fold,auc,error\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.classifier,
                c.layer,
                c.task,
                c.fold,
                c.auc.map(|a| a.to_string()).unwrap_or_default(),
                c.error.clone().unwrap_or_default()
            ));
        }
        out
    }

    pub fn comparisons_csv(&self) -> String {
        let mut out =
            String::from("kind,scope,a,b,n_pairs,n_excluded,mean_a,mean_b,mean_delta,t,p\n");
        for c in &self.comparisons {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                c.kind, c.scope, c.a, c.b, c.n_pairs, c.n_excluded, c.mean_a, c.mean_b,
                c.mean_delta, c.t, c.p
            ));
        }
        out
    }

    /// Writes report.csv, comparisons.csv, and report.json into `dir`.
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.report_csv())?;
        std::fs::write(dir.join("comparisons.csv"), self.comparisons_csv())?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

/// Normalized per-split data for one (layer, fold).
struct SplitData {
    ids: Vec<String>,
    frames: Vec<FeatureFrame>,
    labels: Vec<[bool; N_CONDITIONS]>,
}

impl SplitData {
    fn cnn_examples(&self, task_mode: TaskMode) -> Vec<Example> {
        self.frames
            .iter()
            .zip(&self.labels)
            .map(|(f, labels)| Example {
                input: f.channel_major(),
                labels: match task_mode {
                    TaskMode::Multi => labels.iter().map(|&b| f64::from(b)).collect(),
                    TaskMode::Single(c) => vec![f64::from(labels[c])],
                },
            })
            .collect()
    }

    fn flat_inputs(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.values.clone()).collect()
    }

    fn aggregated_inputs(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(aggregate_features).collect()
    }

    fn task_labels_f64(&self, task: usize) -> Vec<f64> {
        self.labels.iter().map(|l| f64::from(l[task])).collect()
    }

    fn task_labels_bool(&self, task: usize) -> Vec<bool> {
        self.labels.iter().map(|l| l[task]).collect()
    }

    fn positive_rate(&self, task: usize) -> f64 {
        self.labels.iter().filter(|l| l[task]).count() as f64 / self.labels.len().max(1) as f64
    }
}

/// Builds the eligible-user fold plan for a cohort with the spec proportions.
pub fn plan_for_cohort(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldPlan> {
    let eligible = validate_cohort(cohort).eligible_ids();
    make_folds(&eligible, k, seed)
}

/// Runs the full experiment grid: for each fold, fits normalization on the
/// training split, trains every requested classifier, and records per-task
/// test AUCs. The MT CNN runs at every requested layer; all other classifiers
/// run at the fullest layer. Failed cells are recorded without aborting.
pub fn run_experiment(
    cohort: &Cohort,
    plan: &FoldPlan,
    cfg: &ExperimentConfig,
) -> Result<EvalReport> {
    if cfg.classifiers.is_empty() || cfg.layers.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one classifier and one layer are required".into(),
        ));
    }
    let fullest = cfg.fullest_layer();
    let mut needed_layers: Vec<LayerLevel> = Vec::new();
    if cfg.classifiers.contains(&Classifier::MtCnn) {
        needed_layers.extend(&cfg.layers);
    }
    if cfg.classifiers.iter().any(|&c| c != Classifier::MtCnn) && !needed_layers.contains(&fullest)
    {
        needed_layers.push(fullest);
    }
    needed_layers.sort_unstable();
    needed_layers.dedup();

    let labels_by_user: HashMap<&str, [bool; N_CONDITIONS]> = cohort
        .profiles
        .iter()
        .map(|p| (p.user_id.as_str(), p.labels))
        .collect();

    let mut frames_by_layer: HashMap<LayerLevel, HashMap<String, FeatureFrame>> = HashMap::new();
    for &layer in &needed_layers {
        let frames = assemble_frames(cohort, layer)?;
        frames_by_layer.insert(
            layer,
            frames.into_iter().map(|f| (f.user_id.clone(), f)).collect(),
        );
    }

    let mut cells: Vec<AucCell> = Vec::new();
    let mut fold_prevalence = Vec::new();

    for (fold_idx, fold) in plan.folds.iter().enumerate() {
        for &layer in &needed_layers {
            let frames = &frames_by_layer[&layer];
            let split = |ids: &[String]| -> SplitData {
                let mut out = SplitData {
                    ids: Vec::new(),
                    frames: Vec::new(),
                    labels: Vec::new(),
                };
                for id in ids {
                    let Some(frame) = frames.get(id) else {
                        log::warn!("user {id} missing at layer {}; skipped in fold {fold_idx}", layer.name());
                        continue;
                    };
                    out.ids.push(id.clone());
                    out.frames.push(frame.clone());
                    out.labels.push(labels_by_user[id.as_str()]);
                }
                out
            };
            let mut train_split = split(&fold.train);
            let mut val_split = split(&fold.val);
            let mut test_split = split(&fold.test);

            let stats = fit_norm(&train_split.frames)?;
            apply_norm(&mut train_split.frames, &stats);
            apply_norm(&mut val_split.frames, &stats);
            apply_norm(&mut test_split.frames, &stats);

            if layer == fullest {
                for task in 0..N_CONDITIONS {
                    fold_prevalence.push(FoldPrevalence {
                        fold: fold_idx,
                        task: CONDITIONS[task].to_string(),
                        train_rate: train_split.positive_rate(task),
                        val_rate: val_split.positive_rate(task),
                        test_rate: test_split.positive_rate(task),
                    });
                }
            }

            for &classifier in &cfg.classifiers {
                let runs_here = match classifier {
                    Classifier::MtCnn => cfg.layers.contains(&layer),
                    _ => layer == fullest,
                };
                if !runs_here {
                    continue;
                }
                run_cell(
                    classifier,
                    layer,
                    fold_idx,
                    &train_split,
                    &val_split,
                    &test_split,
                    cfg,
                    &mut cells,
                );
            }
        }
    }

    // Deterministic report order: (classifier, layer, task, fold).
    let classifier_rank = |name: &str| {
        Classifier::ALL
            .iter()
            .position(|c| c.name() == name)
            .unwrap_or(usize::MAX)
    };
    let layer_rank = |name: &str| {
        LayerLevel::ALL
            .iter()
            .position(|l| l.name() == name)
            .unwrap_or(usize::MAX)
    };
    let task_rank =
        |name: &str| CONDITIONS.iter().position(|t| *t == name).unwrap_or(usize::MAX);
    cells.sort_by_key(|c| {
        (
            classifier_rank(&c.classifier),
            layer_rank(&c.layer),
            task_rank(&c.task),
            c.fold,
        )
    });

    let failed_cells: Vec<String> = cells
        .iter()
        .filter_map(|c| {
            c.error.as_ref().map(|e| {
                format!(
                    "{}/{}/{}/fold{}: {e}",
                    c.classifier, c.layer, c.task, c.fold
                )
            })
        })
        .collect();

    let summaries = summarize(&cells, cfg, fullest);
    let comparisons = compare(&cells, cfg, fullest, plan.folds.len());

    Ok(EvalReport {
        config: cfg.clone(),
        fold_seed: plan.seed,
        fold_sizes: plan
            .folds
            .iter()
            .map(|f| (f.train.len(), f.val.len(), f.test.len()))
            .collect(),
        cells,
        summaries,
        comparisons,
        fold_prevalence,
        failed_cells,
    })
}

fn train_seed(cfg_seed: u64, classifier: Classifier, layer: LayerLevel, task: usize, fold: usize) -> u64 {
    let l = LayerLevel::ALL.iter().position(|&x| x == layer).unwrap() as u64;
    sub_seed(
        sub_seed(sub_seed(cfg_seed, classifier.name(), l), "task", task as u64),
        "fold",
        fold as u64,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    classifier: Classifier,
    layer: LayerLevel,
    fold_idx: usize,
    train_split: &SplitData,
    val_split: &SplitData,
    test_split: &SplitData,
    cfg: &ExperimentConfig,
    cells: &mut Vec<AucCell>,
) {
    let mut push = |task: usize, result: std::result::Result<f64, String>| {
        let (auc_val, error) = match result {
            Ok(a) => (Some(a), None),
            Err(e) => (None, Some(e)),
        };
        cells.push(AucCell {
            classifier: classifier.name().to_string(),
            layer: layer.name().to_string(),
            task: CONDITIONS[task].to_string(),
            fold: fold_idx,
            auc: auc_val,
            error,
        });
    };

    let t_days = train_split.frames.first().map_or(0, |f| f.t_days);
    let dims = train_split.frames.first().map_or(0, |f| f.dims);

    match classifier {
        Classifier::MtCnn => {
            let model_cfg = cfg.cnn.model_config(dims, t_days, N_CONDITIONS);
            let train_cfg = TrainConfig {
                task_mode: TaskMode::Multi,
                seed: train_seed(cfg.seed, classifier, layer, usize::MAX & 0xff, fold_idx),
                ..cfg.train.clone()
            };
            let trained = train_model(
                &train_split.cnn_examples(TaskMode::Multi),
                &val_split.cnn_examples(TaskMode::Multi),
                &model_cfg,
                &train_cfg,
            );
            let scored = trained.and_then(|(params, _)| {
                crate::train::predict(&params, &model_cfg, &test_split.cnn_examples(TaskMode::Multi))
            });
            match scored {
                Ok(probs) => {
                    for task in 0..N_CONDITIONS {
                        let scores: Vec<f64> = probs.iter().map(|p| p[task]).collect();
                        push(
                            task,
                            auc(&scores, &test_split.task_labels_bool(task))
                                .map_err(|e| e.to_string()),
                        );
                    }
                }
                Err(e) => {
                    let msg = e.to_string();
                    for task in 0..N_CONDITIONS {
                        push(task, Err(msg.clone()));
                    }
                }
            }
        }
        Classifier::StCnn => {
            let model_cfg = cfg.cnn.model_config(dims, t_days, 1);
            for task in 0..N_CONDITIONS {
                let train_cfg = TrainConfig {
                    task_mode: TaskMode::Single(task),
                    seed: train_seed(cfg.seed, classifier, layer, task, fold_idx),
                    ..cfg.train.clone()
                };
                let result = train_model(
                    &train_split.cnn_examples(TaskMode::Single(task)),
                    &val_split.cnn_examples(TaskMode::Single(task)),
                    &model_cfg,
                    &train_cfg,
                )
                .and_then(|(params, _)| {
                    let probs = crate::train::predict(
                        &params,
                        &model_cfg,
                        &test_split.cnn_examples(TaskMode::Single(task)),
                    )?;
                    let scores: Vec<f64> = probs.iter().map(|p| p[0]).collect();
                    auc(&scores, &test_split.task_labels_bool(task))
                });
                push(task, result.map_err(|e| e.to_string()));
            }
        }
        Classifier::LrRaw => {
            let train_x = train_split.flat_inputs();
            let val_x = val_split.flat_inputs();
            let test_x = test_split.flat_inputs();
            for task in 0..N_CONDITIONS {
                push(
                    task,
                    lr_grid_cell(
                        &train_x,
                        &val_x,
                        &test_x,
                        train_split,
                        val_split,
                        test_split,
                        task,
                        cfg,
                    )
                    .map_err(|e| e.to_string()),
                );
            }
        }
        Classifier::LrFeat => {
            let train_x = train_split.aggregated_inputs();
            let val_x = val_split.aggregated_inputs();
            let test_x = test_split.aggregated_inputs();
            for task in 0..N_CONDITIONS {
                push(
                    task,
                    lr_grid_cell(
                        &train_x,
                        &val_x,
                        &test_x,
                        train_split,
                        val_split,
                        test_split,
                        task,
                        cfg,
                    )
                    .map_err(|e| e.to_string()),
                );
            }
        }
        Classifier::Rf => {
            let train_x = train_split.aggregated_inputs();
            let test_x = test_split.aggregated_inputs();
            for task in 0..N_CONDITIONS {
                let seed = train_seed(cfg.seed, classifier, layer, task, fold_idx);
                let result = rf_train(
                    &train_x,
                    &train_split.task_labels_bool(task),
                    cfg.rf_trees,
                    seed,
                )
                .and_then(|forest| {
                    let scores: Vec<f64> =
                        test_x.iter().map(|x| rf_predict(&forest, x)).collect();
                    auc(&scores, &test_split.task_labels_bool(task))
                });
                push(task, result.map_err(|e| e.to_string()));
            }
        }
    }
}

/// Grid-searches the L2 coefficient on validation AUC (largest first, warm
/// starting each refit), then scores the held-out test split.
#[allow(clippy::too_many_arguments)]
fn lr_grid_cell(
    train_x: &[Vec<f64>],
    val_x: &[Vec<f64>],
    test_x: &[Vec<f64>],
    train_split: &SplitData,
    val_split: &SplitData,
    test_split: &SplitData,
    task: usize,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    let labels = train_split.task_labels_f64(task);
    let lr_cfg = LrConfig {
        max_iters: cfg.lr_max_iters,
        ..LrConfig::default()
    };
    let mut grid = cfg.lr_l2_grid.clone();
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut best: Option<(f64, LinearModel)> = None;
    let mut warm: Option<LinearModel> = None;
    for l2 in grid {
        let model = lr_train_from(train_x, &labels, l2, &lr_cfg, warm.as_ref())?;
        let val_scores: Vec<f64> = val_x.iter().map(|x| lr_predict(&model, x)).collect();
        let val_auc = auc(&val_scores, &val_split.task_labels_bool(task)).unwrap_or(0.5);
        if best.as_ref().map_or(true, |(b, _)| val_auc > *b) {
            best = Some((val_auc, model.clone()));
        }
        warm = Some(model);
    }
    let (_, model) = best.expect("grid is non-empty");
    let scores: Vec<f64> = test_x.iter().map(|x| lr_predict(&model, x)).collect();
    auc(&scores, &test_split.task_labels_bool(task))
}

fn summarize(cells: &[AucCell], cfg: &ExperimentConfig, fullest: LayerLevel) -> Vec<Summary> {
    let mut out = Vec::new();
    for &classifier in &cfg.classifiers {
        let layers: Vec<LayerLevel> = match classifier {
            Classifier::MtCnn => cfg.layers.clone(),
            _ => vec![fullest],
        };
        for layer in layers {
            for scope in Scope::ALL_SCOPES {
                let values: Vec<f64> = cells
                    .iter()
                    .filter(|c| {
                        c.classifier == classifier.name()
                            && c.layer == layer.name()
                            && scope.contains(
                                CONDITIONS.iter().position(|t| *t == c.task).unwrap(),
                            )
                    })
                    .filter_map(|c| c.auc)
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                out.push(Summary {
                    classifier: classifier.name().to_string(),
                    layer: layer.name().to_string(),
                    scope: scope.name().to_string(),
                    n_cells: values.len(),
                    mean_auc: mean,
                    se: (var / n).sqrt(),
                });
            }
        }
    }
    out
}

/// Paired t-tests over (task, fold) cells: classifier pairs at the fullest
/// layer and MT CNN layer pairs, each rolled up per cluster scope. Failed
/// cells are excluded pairwise; exclusion counts are reported.
fn compare(
    cells: &[AucCell],
    cfg: &ExperimentConfig,
    fullest: LayerLevel,
    n_folds: usize,
) -> Vec<Comparison> {
    let lookup = |classifier: Classifier, layer: LayerLevel, task: usize, fold: usize| -> Option<f64> {
        cells
            .iter()
            .find(|c| {
                c.classifier == classifier.name()
                    && c.layer == layer.name()
                    && c.task == CONDITIONS[task]
                    && c.fold == fold
            })
            .and_then(|c| c.auc)
    };

    let mut out = Vec::new();
    let mut paired = |kind: &str,
                      scope: Scope,
                      a_name: String,
                      b_name: String,
                      a_of: &dyn Fn(usize, usize) -> Option<f64>,
                      b_of: &dyn Fn(usize, usize) -> Option<f64>| {
        let mut a_vals = Vec::new();
        let mut b_vals = Vec::new();
        let mut excluded = 0usize;
        for task in (0..N_CONDITIONS).filter(|&t| scope.contains(t)) {
            for fold in 0..n_folds {
                match (a_of(task, fold), b_of(task, fold)) {
                    (Some(x), Some(y)) => {
                        a_vals.push(x);
                        b_vals.push(y);
                    }
                    _ => excluded += 1,
                }
            }
        }
        if a_vals.len() < 2 {
            return;
        }
        let test = paired_t_test(&a_vals, &b_vals).expect("n >= 2 checked");
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.push(Comparison {
            kind: kind.to_string(),
            scope: scope.name().to_string(),
            a: a_name,
            b: b_name,
            n_pairs: a_vals.len(),
            n_excluded: excluded,
            mean_a: mean(&a_vals),
            mean_b: mean(&b_vals),
            mean_delta: test.mean_delta,
            t: test.t,
            p: test.p,
        });
    };

    for (i, &ca) in cfg.classifiers.iter().enumerate() {
        for &cb in cfg.classifiers.iter().skip(i + 1) {
            for scope in Scope::ALL_SCOPES {
                paired(
                    "classifier",
                    scope,
                    ca.name().to_string(),
                    cb.name().to_string(),
                    &|task, fold| lookup(ca, fullest, task, fold),
                    &|task, fold| lookup(cb, fullest, task, fold),
                );
            }
        }
    }

    if cfg.classifiers.contains(&Classifier::MtCnn) {
        for (i, &la) in cfg.layers.iter().enumerate() {
            for &lb in cfg.layers.iter().skip(i + 1) {
                for scope in Scope::ALL_SCOPES {
                    paired(
                        "layer",
                        scope,
                        la.name().to_string(),
                        lb.name().to_string(),
                        &|task, fold| lookup(Classifier::MtCnn, la, task, fold),
                        &|task, fold| lookup(Classifier::MtCnn, lb, task, fold),
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortConfig};

    fn quick_experiment_config(classifiers: Vec<Classifier>, layers: Vec<LayerLevel>) -> ExperimentConfig {
        // Conv widths small enough for a 14-day window.
        let cnn = CnnHyperParams {
            conv1: ConvSpec { filters: 4, width: 3, stride: 2 },
            conv2: ConvSpec { filters: 2, width: 2, stride: 1 },
            pool: PoolSpec { width: 2, stride: 2 },
            dropout_p: 0.5,
            hidden: 16,
            share_extractors: false,
        };
        ExperimentConfig {
            classifiers,
            layers,
            seed: 5,
            cnn,
            train: TrainConfig {
                max_epochs: 2,
                patience: 1,
                batch_size: 16,
                ..TrainConfig::default()
            },
            lr_max_iters: 50,
            rf_trees: 10,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn report_has_expected_grid_shape() {
        let cohort = generate_cohort(&CohortConfig::new(40, 14, 9)).unwrap();
        let plan = plan_for_cohort(&cohort, 2, 3).unwrap();
        let cfg = quick_experiment_config(
            vec![Classifier::MtCnn],
            vec![LayerLevel::Demographic, LayerLevel::BasicHealth],
        );
        let report = run_experiment(&cohort, &plan, &cfg).unwrap();
        // 2 layers x 9 tasks x 2 folds.
        assert_eq!(report.cells.len(), 36);
        assert!(report
            .comparisons
            .iter()
            .any(|c| c.kind == "layer" && c.a == "demographic" && c.b == "basic_health"));
        assert_eq!(report.fold_sizes.len(), 2);
    }

    #[test]
    fn classifier_rows_exist_only_at_fullest_layer() {
        let cohort = generate_cohort(&CohortConfig::new(40, 14, 9)).unwrap();
        let plan = plan_for_cohort(&cohort, 2, 3).unwrap();
        let cfg = quick_experiment_config(
            vec![Classifier::LrFeat, Classifier::Rf],
            vec![LayerLevel::Demographic, LayerLevel::DayLevel],
        );
        let report = run_experiment(&cohort, &plan, &cfg).unwrap();
        assert!(report.cells.iter().all(|c| c.layer == "day_level"));
        // 2 classifiers x 9 tasks x 2 folds.
        assert_eq!(report.cells.len(), 36);
        assert!(report
            .comparison("classifier", Scope::All, "lr_feat", "rf")
            .is_some());
    }

    #[test]
    fn run_is_deterministic() {
        let cohort = generate_cohort(&CohortConfig::new(40, 14, 9)).unwrap();
        let plan = plan_for_cohort(&cohort, 2, 3).unwrap();
        let cfg = quick_experiment_config(
            vec![Classifier::LrFeat, Classifier::Rf],
            vec![LayerLevel::BasicHealth],
        );
        let a = run_experiment(&cohort, &plan, &cfg).unwrap();
        let b = run_experiment(&cohort, &plan, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.report_csv(), b.report_csv());
        assert_eq!(a.comparisons_csv(), b.comparisons_csv());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn unknown_classifier_name_is_rejected() {
        let err = Classifier::parse("boosted_trees").unwrap_err();
        assert!(err.to_string().contains("mt_cnn"));
    }
}
