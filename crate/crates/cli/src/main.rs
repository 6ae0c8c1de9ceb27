//! Command-line entry point: cohort generation, featurization, training, and
//! the cross-validated evaluation harness, wired for reproducible runs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.

mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use actinet::cohort::{
    condition_index, generate_cohort, read_cohort, validate_cohort, write_cohort, CohortConfig,
    CONDITIONS, N_CONDITIONS,
};
use actinet::error::Error as CoreError;
use actinet::eval::{plan_for_cohort, run_experiment, Classifier, ExperimentConfig};
use actinet::pipeline::{
    apply_norm, assemble_frames, fit_norm, read_feature_cache, write_feature_cache,
    write_feature_meta, FeatureFrame, LayerLevel,
};
use actinet::rng::{rng, sub_seed};
use actinet::train::{train_model, Example, TaskMode};

use config::{echo_config, FileConfig};

#[derive(Parser)]
#[command(name = "actinet", version, about = "Chronic-condition classification from wearable activity time series", long_about = None)]
struct Cli {
    /// Worker threads for parallel regions (default: hardware threads).
    /// Results are identical for any worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with planted condition effects.
    Generate {
        #[arg(long)]
        n_users: usize,
        /// Observation window in days (minimum 14).
        #[arg(long, default_value_t = 147)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for profiles.jsonl, days.csv, steps.csv,
        /// sleep.csv, and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Override a condition's target prevalence, e.g. insomnia=0.3.
        /// Repeatable.
        #[arg(long, value_name = "COND=P")]
        prevalence: Vec<String>,
    },
    /// Build per-user feature matrices from a cohort directory.
    Featurize {
        /// Cohort directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Data layer: demographic, basic_health, day_level, minute_step, or
        /// minute_sleep.
        #[arg(long)]
        layer: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a CNN on cached features, or run the gradient self-test.
    Train {
        /// Feature directory written by `featurize`.
        #[arg(long, required_unless_present = "self_test")]
        features: Option<PathBuf>,
        /// Layer to load when the directory holds several caches
        /// (default: the fullest one present).
        #[arg(long)]
        layer: Option<String>,
        /// st (single-task; requires --task) or mt (all 9 conditions).
        #[arg(long, default_value = "mt")]
        mode: String,
        /// Condition name for st mode.
        #[arg(long)]
        task: Option<String>,
        /// JSON config file; flags and file values merge into the echoed
        /// effective config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "self_test")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of users held out for early stopping.
        #[arg(long, default_value_t = 0.25)]
        val_fraction: f64,
        /// Run finite-difference gradient verification and exit (0 iff the
        /// max relative error is below 1e-4).
        #[arg(long)]
        self_test: bool,
    },
    /// Run the cross-validated experiment grid and write the AUC report.
    Evaluate {
        /// Cohort directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated classifiers: mt_cnn, st_cnn, lr_raw, lr_feat, rf.
        #[arg(long, default_value = "mt_cnn,st_cnn,lr_raw,lr_feat,rf")]
        classifiers: String,
        /// Comma-separated layers, or `all`.
        #[arg(long, default_value = "all")]
        layers: String,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum CliError {
    /// Bad flags, bad config values, malformed or missing inputs. Exit 2.
    Validation(String),
    /// Failure while doing the work. Exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Core validation-class errors map to exit 2; IO and internal failures to 1.
fn core_err(e: CoreError) -> CliError {
    match &e {
        CoreError::InvalidConfig(_)
        | CoreError::Parse { .. }
        | CoreError::TraceLength { .. }
        | CoreError::UnknownCategory { .. }
        | CoreError::TooFewUsers { .. } => CliError::Validation(e.to_string()),
        _ => CliError::Runtime(anyhow::Error::new(e)),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        // Ignore the error if a pool already exists (tests re-enter main).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let code = match run(cli.command) {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate {
            n_users,
            days,
            seed,
            out,
            prevalence,
        } => cmd_generate(n_users, days, seed, &out, &prevalence),
        Command::Featurize { data, layer, out } => cmd_featurize(&data, &layer, &out),
        Command::Train {
            features,
            layer,
            mode,
            task,
            config,
            out,
            seed,
            val_fraction,
            self_test,
        } => {
            if self_test {
                return cmd_self_test();
            }
            cmd_train(
                features.as_deref().expect("clap enforces --features"),
                layer.as_deref(),
                &mode,
                task.as_deref(),
                config.as_deref(),
                out.as_deref().expect("clap enforces --out"),
                seed,
                val_fraction,
            )
        }
        Command::Evaluate {
            data,
            classifiers,
            layers,
            folds,
            seed,
            out,
            config,
        } => cmd_evaluate(&data, &classifiers, &layers, folds, seed, &out, config.as_deref()),
    }
}

fn cmd_generate(
    n_users: usize,
    days: usize,
    seed: u64,
    out: &Path,
    prevalence_overrides: &[String],
) -> Result<(), CliError> {
    let mut cohort_config = CohortConfig::new(n_users, days, seed);
    for spec in prevalence_overrides {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--prevalence expects COND=P, got `{spec}`")))?;
        let idx = condition_index(name).ok_or_else(|| {
            CliError::Validation(format!(
                "unknown condition `{name}`; expected one of: {}",
                CONDITIONS.join(", ")
            ))
        })?;
        let p: f64 = value
            .parse()
            .map_err(|_| CliError::Validation(format!("cannot parse prevalence `{value}`")))?;
        cohort_config.prevalence[idx] = p;
    }
    cohort_config.validate().map_err(core_err)?;

    let cohort = generate_cohort(&cohort_config).map_err(core_err)?;
    write_cohort(&cohort, out).map_err(core_err)?;
    echo_config(
        out,
        &json!({
            "command": "generate",
            "n_users": n_users,
            "days": days,
            "seed": seed,
            "prevalence": cohort_config.prevalence,
            "effects": cohort_config.effects,
        }),
    )?;
    println!(
        "wrote cohort of {} users x {} days to {}",
        cohort.profiles.len(),
        days,
        out.display()
    );
    Ok(())
}

fn cmd_featurize(data: &Path, layer: &str, out: &Path) -> Result<(), CliError> {
    if !data.is_dir() {
        return Err(CliError::Validation(format!(
            "data directory {} does not exist",
            data.display()
        )));
    }
    let level = LayerLevel::parse(layer).map_err(core_err)?;
    let cohort = read_cohort(data).map_err(core_err)?;
    let report = validate_cohort(&cohort);
    let eligible: std::collections::HashSet<String> = report.eligible_ids().into_iter().collect();
    let dropped = cohort.profiles.len() - eligible.len();
    if dropped > 0 {
        log::warn!("{dropped} users failed the inclusion rule and were dropped");
    }

    let frames: Vec<FeatureFrame> = assemble_frames(&cohort, level)
        .map_err(core_err)?
        .into_iter()
        .filter(|f| eligible.contains(&f.user_id))
        .collect();
    if frames.is_empty() {
        return Err(CliError::Validation("no eligible users to featurize".into()));
    }

    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.into()))?;
    let cache = out.join(format!("features_{}.bin", level.name()));
    let meta = out.join(format!("features_{}.meta.json", level.name()));
    write_feature_cache(&cache, &frames).map_err(core_err)?;
    write_feature_meta(&meta, &frames).map_err(core_err)?;

    let labels_path = out.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| CliError::Runtime(e.into()))?;
    let mut header = vec!["user_id".to_string()];
    header.extend(CONDITIONS.iter().map(|c| c.to_string()));
    w.write_record(&header).map_err(|e| CliError::Runtime(e.into()))?;
    for f in &frames {
        let profile = cohort.profile(&f.user_id).expect("frame users come from profiles");
        let mut row = vec![f.user_id.clone()];
        row.extend(profile.labels.iter().map(|&b| u8::from(b).to_string()));
        w.write_record(&row).map_err(|e| CliError::Runtime(e.into()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.into()))?;

    echo_config(
        out,
        &json!({
            "command": "featurize",
            "data": data.display().to_string(),
            "layer": level.name(),
            "t_days": frames[0].t_days,
            "dims": frames[0].dims,
            "n_users": frames.len(),
        }),
    )?;
    println!(
        "wrote {} users x {} days x {} features to {}",
        frames.len(),
        frames[0].t_days,
        frames[0].dims,
        cache.display()
    );
    Ok(())
}

fn cmd_self_test() -> Result<(), CliError> {
    use actinet::autonet::{grad_check, ConvSpec, ModelConfig, PoolSpec};
    use rand::Rng;

    let mut worst = 0.0f64;
    let mut tested = 0usize;
    let mut seed = 0u64;
    while tested < 20 {
        let mut r = rng(sub_seed(0xAC71_5E1F, "selftest", seed));
        seed += 1;
        let cfg = ModelConfig {
            n_channels: r.gen_range(1..=5),
            t_days: r.gen_range(12..=30),
            conv1: ConvSpec {
                filters: r.gen_range(2..=4),
                width: r.gen_range(2..=5),
                stride: r.gen_range(1..=2),
            },
            conv2: ConvSpec {
                filters: r.gen_range(2..=3),
                width: r.gen_range(2..=3),
                stride: r.gen_range(1..=2),
            },
            pool: PoolSpec { width: 2, stride: 2 },
            dropout_p: if tested % 2 == 0 { 0.5 } else { 0.0 },
            hidden: r.gen_range(3..=10),
            n_tasks: if tested % 3 == 0 { 1 } else { r.gen_range(2..=9) },
            share_extractors: tested % 4 == 0,
        };
        if cfg.validate().is_err() {
            continue;
        }
        let err = grad_check(&cfg, seed, 1e-5).map_err(core_err)?;
        worst = worst.max(err);
        tested += 1;
        println!(
            "config {tested:2}: D={} T={} tasks={} dropout={} -> max relative error {err:.3e}",
            cfg.n_channels, cfg.t_days, cfg.n_tasks, cfg.dropout_p
        );
    }
    println!("worst over {tested} configs: {worst:.3e}");
    if worst < 1e-4 {
        println!("self-test PASS");
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow::anyhow!(
            "gradient self-test failed: max relative error {worst:.3e} >= 1e-4"
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    features: &Path,
    layer: Option<&str>,
    mode: &str,
    task: Option<&str>,
    config: Option<&Path>,
    out: &Path,
    seed: u64,
    val_fraction: f64,
) -> Result<(), CliError> {
    use actinet::autonet::save_checkpoint;

    if !features.is_dir() {
        return Err(CliError::Validation(format!(
            "features directory {} does not exist",
            features.display()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CliError::Validation(format!(
            "--val-fraction {val_fraction} outside [0, 1)"
        )));
    }
    let file_cfg = FileConfig::load(config).map_err(|e| CliError::Validation(format!("{e:#}")))?;

    let level = match layer {
        Some(name) => LayerLevel::parse(name).map_err(core_err)?,
        None => LayerLevel::ALL
            .into_iter()
            .rev()
            .find(|l| features.join(format!("features_{}.bin", l.name())).exists())
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "no features_<layer>.bin cache found in {}",
                    features.display()
                ))
            })?,
    };
    let cache = features.join(format!("features_{}.bin", level.name()));
    if !cache.exists() {
        return Err(CliError::Validation(format!("{} does not exist", cache.display())));
    }

    let task_mode = match mode {
        "mt" => TaskMode::Multi,
        "st" => {
            let name = task.ok_or_else(|| {
                CliError::Validation("st mode requires --task <condition>".into())
            })?;
            let idx = condition_index(name).ok_or_else(|| {
                CliError::Validation(format!(
                    "unknown condition `{name}`; expected one of: {}",
                    CONDITIONS.join(", ")
                ))
            })?;
            TaskMode::Single(idx)
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown mode `{other}`; expected st or mt"
            )))
        }
    };

    let frames = read_feature_cache(&cache).map_err(core_err)?;
    let labels = read_labels(&features.join("labels.csv"))?;

    // Seeded user-level split for early stopping.
    let mut order: Vec<usize> = (0..frames.len()).collect();
    {
        use rand::Rng;
        let mut r = rng(sub_seed(seed, "train-split", 0));
        for i in (1..order.len()).rev() {
            let j = r.gen_range(0..=i);
            order.swap(i, j);
        }
    }
    let n_val = (frames.len() as f64 * val_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);

    let collect = |idx: &[usize]| -> Vec<FeatureFrame> {
        idx.iter().map(|&i| frames[i].clone()).collect()
    };
    let mut train_frames = collect(train_idx);
    let mut val_frames = collect(val_idx);
    let stats = fit_norm(&train_frames).map_err(core_err)?;
    apply_norm(&mut train_frames, &stats);
    apply_norm(&mut val_frames, &stats);

    let to_examples = |frames: &[FeatureFrame]| -> Result<Vec<Example>, CliError> {
        frames
            .iter()
            .map(|f| {
                let user_labels = labels.get(&f.user_id).ok_or_else(|| {
                    CliError::Validation(format!("labels.csv is missing user {}", f.user_id))
                })?;
                let labels = match task_mode {
                    TaskMode::Multi => user_labels.iter().map(|&b| f64::from(b)).collect(),
                    TaskMode::Single(c) => vec![f64::from(user_labels[c])],
                };
                Ok(Example {
                    input: f.channel_major(),
                    labels,
                })
            })
            .collect()
    };
    let train_examples = to_examples(&train_frames)?;
    let val_examples = to_examples(&val_frames)?;

    let n_tasks = match task_mode {
        TaskMode::Multi => N_CONDITIONS,
        TaskMode::Single(_) => 1,
    };
    let cnn = file_cfg.cnn_params();
    let model_cfg = cnn.model_config(frames[0].dims, frames[0].t_days, n_tasks);
    model_cfg.validate().map_err(core_err)?;
    let train_cfg = file_cfg.train_config(seed, task_mode);

    let (params, history) =
        train_model(&train_examples, &val_examples, &model_cfg, &train_cfg).map_err(core_err)?;

    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.into()))?;
    std::fs::write(out.join("history.csv"), history.to_csv())
        .map_err(|e| CliError::Runtime(e.into()))?;
    save_checkpoint(&out.join("best.ckpt"), &model_cfg, &params).map_err(core_err)?;
    echo_config(
        out,
        &json!({
            "command": "train",
            "features": features.display().to_string(),
            "layer": level.name(),
            "mode": mode,
            "task": task,
            "seed": seed,
            "val_fraction": val_fraction,
            "n_train_users": train_examples.len(),
            "n_val_users": val_examples.len(),
            "model": model_cfg,
            "train": train_cfg,
        }),
    )?;
    let best = &history.epochs[history
        .epochs
        .iter()
        .position(|e| e.epoch == history.best_epoch)
        .unwrap_or(0)];
    println!(
        "trained {} epochs; best epoch {} (val mean AUC {:.4}); run written to {}",
        history.epochs.len(),
        history.best_epoch,
        best.val_mean_auc,
        out.display()
    );
    Ok(())
}

fn read_labels(path: &Path) -> Result<HashMap<String, [bool; N_CONDITIONS]>, CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!("{} does not exist", path.display())));
    }
    let mut out = HashMap::new();
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(e.into()))?;
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Runtime(e.into()))?;
        let user = rec
            .get(0)
            .ok_or_else(|| CliError::Validation("labels.csv: missing user_id".into()))?
            .to_string();
        let mut labels = [false; N_CONDITIONS];
        for (i, l) in labels.iter_mut().enumerate() {
            *l = rec.get(i + 1) == Some("1");
        }
        out.insert(user, labels);
    }
    Ok(out)
}

fn cmd_evaluate(
    data: &Path,
    classifiers: &str,
    layers: &str,
    folds: usize,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
) -> Result<(), CliError> {
    if !data.is_dir() {
        return Err(CliError::Validation(format!(
            "data directory {} does not exist",
            data.display()
        )));
    }
    let classifiers: Vec<Classifier> = classifiers
        .split(',')
        .map(|s| Classifier::parse(s.trim()).map_err(core_err))
        .collect::<Result<_, _>>()?;
    let layers: Vec<LayerLevel> = if layers.trim() == "all" {
        LayerLevel::ALL.to_vec()
    } else {
        layers
            .split(',')
            .map(|s| LayerLevel::parse(s.trim()).map_err(core_err))
            .collect::<Result<_, _>>()?
    };
    if folds == 0 {
        return Err(CliError::Validation("--folds must be >= 1".into()));
    }
    let file_cfg = FileConfig::load(config).map_err(|e| CliError::Validation(format!("{e:#}")))?;

    let cohort = read_cohort(data).map_err(core_err)?;
    let plan = plan_for_cohort(&cohort, folds, sub_seed(seed, "folds", 0)).map_err(core_err)?;
    let experiment = ExperimentConfig {
        classifiers,
        layers,
        seed,
        cnn: file_cfg.cnn_params(),
        train: file_cfg.train_config(seed, TaskMode::Multi),
        lr_l2_grid: file_cfg.lr_l2_grid(),
        lr_max_iters: file_cfg.lr_max_iters(),
        rf_trees: file_cfg.rf_trees(),
    };
    let report = run_experiment(&cohort, &plan, &experiment).map_err(core_err)?;
    report.write(out).map_err(core_err)?;
    echo_config(
        out,
        &json!({
            "command": "evaluate",
            "data": data.display().to_string(),
            "folds": folds,
            "seed": seed,
            "experiment": experiment,
        }),
    )?;

    for s in report
        .summaries
        .iter()
        .filter(|s| s.scope == "all")
    {
        println!(
            "{:8} {:13} mean AUC {:.4} (se {:.4}, n {})",
            s.classifier, s.layer, s.mean_auc, s.se, s.n_cells
        );
    }
    println!("report written to {}", out.display());
    Ok(())
}
