//! Implementations of the CLI subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use lmpkit_core::clustering::ClusteringConfig;
use lmpkit_core::metrics::{entropy_report, greedy_pck, MatchMode, PckConfig, PckReport};
use lmpkit_core::pooling::PoolingKernel;
use lmpkit_core::synth::{generate_dataset, SyntheticScene};
use lmpkit_core::tensor::Tensor;
use lmpkit_core::trainer::{
    count_flops, default_backbone, predict_keypoints, train, ToyModel,
};

use crate::checkpoint::{load_model, load_pooling_label, save_model};
use crate::config::{write_resolved, ExperimentConfig};
use crate::dataset_io::save_split;
use crate::error::CliError;
use crate::report::{
    write_entropy_csv, write_eval_summary, write_history_csv, write_keypoints_json,
    write_pck_csv, EvalSummary, ImageKeypoints,
};

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(&cfg.output_dir)
}

/// Regenerates the dataset the config describes. Every command derives the
/// data this way, so results depend only on (config, seed).
fn dataset_of(cfg: &ExperimentConfig) -> Result<(Vec<SyntheticScene>, Vec<SyntheticScene>), CliError> {
    Ok(generate_dataset(
        &cfg.dataset.scene,
        cfg.dataset.train_per_class,
        cfg.dataset.test_per_class,
        cfg.dataset.seed,
    )?)
}

/// `gen`: materialize the dataset splits plus manifests under
/// `output_dir/dataset/{train,test}`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<(), CliError> {
    write_resolved(cfg)?;
    let (train_set, test_set) = dataset_of(cfg)?;
    let base = out_dir(cfg).join("dataset");
    save_split(&base.join("train"), &train_set)?;
    save_split(&base.join("test"), &test_set)?;
    println!(
        "wrote {} train / {} test scenes to {}",
        train_set.len(),
        test_set.len(),
        base.display()
    );
    Ok(())
}

/// `train`: train the primary network (and the replica when mask-out is
/// enabled), then write checkpoints and the history CSV.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    write_resolved(cfg)?;
    let (train_set, _) = dataset_of(cfg)?;
    let train_cfg = cfg.train_config();
    let outcome = train(&train_cfg, &train_set)?;
    let dir = out_dir(cfg);
    let echo = serde_json::to_value(cfg).expect("config serializes");
    save_model(
        &dir.join("checkpoints").join("primary"),
        &outcome.primary,
        train_cfg.epochs,
        train_cfg.seed,
        &echo,
    )?;
    if let Some(replica) = &outcome.replica {
        save_model(
            &dir.join("checkpoints").join("replica"),
            replica,
            train_cfg.epochs,
            train_cfg.seed,
            &echo,
        )?;
    }
    write_history_csv(&dir.join("history.csv"), &outcome.history)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs ({}): final train loss {:.6}, acc {:.4}; checkpoints in {}",
        train_cfg.epochs,
        cfg.pooling_label(),
        last.loss,
        last.accuracy,
        dir.join("checkpoints").display()
    );
    Ok(())
}

/// Accepts either a bare checkpoint directory or a `checkpoints/` root
/// holding `primary/` and optionally `replica/`.
fn resolve_checkpoint(dir: &Path) -> Result<(ToyModel, Option<ToyModel>), CliError> {
    if dir.join("manifest.json").exists() {
        return Ok((load_model(dir)?, None));
    }
    let primary = load_model(&dir.join("primary"))?;
    let replica_dir = dir.join("replica");
    let replica = if replica_dir.join("manifest.json").exists() {
        Some(load_model(&replica_dir)?)
    } else {
        None
    };
    Ok((primary, replica))
}

/// `eval`: run the keypoint pipeline over the test split and write the
/// greedy-PCK report (both match modes), per-image keypoints, and a
/// summary.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(), CliError> {
    write_resolved(cfg)?;
    let (primary, replica) = resolve_checkpoint(checkpoint)?;
    let (_, test_set) = dataset_of(cfg)?;
    let selection = cfg.selection;
    let clustering = cfg.clustering;

    let predictions: Vec<Vec<(f64, f64)>> = test_set
        .par_iter()
        .map(|scene| {
            predict_keypoints(&primary, replica.as_ref(), &scene.image, &selection, &clustering)
        })
        .collect::<Result<_, _>>()?;

    let gts: Vec<Vec<(f64, f64)>> = test_set
        .iter()
        .map(|s| s.keypoints.iter().map(|&(r, c)| (r as f64, c as f64)).collect())
        .collect();
    let sizes: Vec<(usize, usize)> = test_set
        .iter()
        .map(|_| cfg.dataset.scene.image_size)
        .collect();

    let mut rows: Vec<(String, PckReport)> = Vec::new();
    for mode in [MatchMode::GtConsumed, MatchMode::GtReusable] {
        let pck_cfg = PckConfig {
            alpha: cfg.pck.alpha,
            match_mode: mode,
        };
        let label = match mode {
            MatchMode::GtConsumed => "gt_consumed",
            MatchMode::GtReusable => "gt_reusable",
        };
        rows.push((label.into(), greedy_pck(&predictions, &gts, &pck_cfg, &sizes)?));
    }

    let dir = out_dir(cfg);
    write_pck_csv(&dir.join("pck_report.csv"), &rows)?;
    let entries: Vec<ImageKeypoints> = test_set
        .iter()
        .zip(&predictions)
        .enumerate()
        .map(|(index, (scene, preds))| ImageKeypoints {
            index,
            label: scene.label,
            predictions: preds.iter().map(|&(r, c)| [r, c]).collect(),
            ground_truth: scene.keypoints.iter().map(|&(r, c)| [r, c]).collect(),
        })
        .collect();
    write_keypoints_json(&dir.join("keypoints.json"), &entries)?;
    let summary = EvalSummary {
        n_images: test_set.len(),
        k: clustering.k,
        warning: if test_set.is_empty() {
            Some("empty test split: no images were evaluated".into())
        } else {
            None
        },
    };
    write_eval_summary(&dir.join("eval_summary.json"), &summary)?;
    for (label, report) in &rows {
        println!(
            "pck[{label}] avg {:.4} over {} images",
            report.average, report.n_images
        );
    }
    Ok(())
}

/// `entropy`: mean test-split feature entropy for each checkpoint.
pub fn cmd_entropy(cfg: &ExperimentConfig, checkpoints: &[PathBuf]) -> Result<(), CliError> {
    write_resolved(cfg)?;
    let (_, test_set) = dataset_of(cfg)?;
    let mut loaded = Vec::new();
    for dir in checkpoints {
        let (model, _) = resolve_checkpoint(dir)?;
        let label_dir = if dir.join("manifest.json").exists() {
            dir.clone()
        } else {
            dir.join("primary")
        };
        loaded.push((load_pooling_label(&label_dir)?, model));
    }
    let refs: Vec<(&str, &ToyModel)> = loaded
        .iter()
        .map(|(label, model)| (label.as_str(), model))
        .collect();
    let rows = entropy_report(&refs, &test_set)?;
    let path = out_dir(cfg).join("entropy.csv");
    write_entropy_csv(&path, &rows)?;
    for row in &rows {
        println!(
            "entropy[{}] mean {:.6} std {:.6} over {} images",
            row.label, row.mean_entropy, row.std_entropy, row.n_images
        );
    }
    Ok(())
}

fn fmt_value(v: f64) -> String {
    // Collapse accumulation dust so table entries read exactly.
    let rounded = (v * 1e12).round() / 1e12;
    format!("{rounded}")
}

/// The dense/sparse toy table for all three pooling kernels.
pub fn pooldemo_table() -> String {
    let dense = Tensor::full(&[1, 1, 2, 2], 1.0);
    let mut sparse = Tensor::zeros(&[1, 1, 2, 2]);
    sparse.data_mut()[0] = 1.0;
    let kernels = [
        ("avg", PoolingKernel::average()),
        ("max", PoolingKernel::max()),
        (
            "lmp(eps=0.1)",
            PoolingKernel::leaky_max(0.1).expect("0.1 is a valid epsilon"),
        ),
    ];
    let mut out = String::from("kind, input, output\n");
    for (name, kernel) in kernels {
        for (input_name, input) in [("dense", &dense), ("sparse", &sparse)] {
            let (pooled, _) = lmpkit_core::pooling::pool_forward(input, &kernel)
                .expect("2x2 inputs pool cleanly");
            out.push_str(&format!("{name}, {input_name}, {}\n", fmt_value(pooled.data()[0])));
        }
    }
    out
}

/// `pooldemo`: print the toy table.
pub fn cmd_pooldemo() -> Result<(), CliError> {
    print!("{}", pooldemo_table());
    Ok(())
}

/// `flops`: emit the analytic FLOP report as JSON. Without a checkpoint
/// the report describes a freshly initialized model for the configured
/// dataset, which has the same layer geometry as any trained one.
pub fn cmd_flops(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    write_resolved(cfg)?;
    let model = match checkpoint {
        Some(dir) => resolve_checkpoint(dir)?.0,
        None => ToyModel::seeded(
            &default_backbone(),
            cfg.dataset.scene.num_classes,
            cfg.train_config().pooling_kernel()?,
            cfg.train.seed,
        ),
    };
    let report = count_flops(&model, cfg.dataset.scene.image_size)?;
    let path = out_dir(cfg).join("flops.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliError::io(&path.display().to_string(), e))?;
    println!(
        "total {} multiply-adds, pooling overhead {:.6}%",
        report.total_macs,
        report.pooling_overhead_fraction * 100.0
    );
    Ok(())
}

/// Clustering config with a different `k`, used by sweep helpers.
pub fn with_k(clustering: &ClusteringConfig, k: usize) -> ClusteringConfig {
    ClusteringConfig { k, ..*clustering }
}
