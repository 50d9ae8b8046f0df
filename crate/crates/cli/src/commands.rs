//! The seven pipeline commands. Each one reads what it needs through the
//! effective configuration, writes its artifacts under `out_dir` with
//! fixed names, and records a manifest with the configuration hash and
//! seeds. Timestamps live only in manifests, so artifact bytes reproduce
//! for identical configuration and seed.

use crate::config::RunConfig;
use crate::CliError;
use drlearn::conditionals::{fit_ensemble, load_ensemble, save_ensemble};
use drlearn::dataset::{
    load_features, load_labels, make_pseudo_sources, save_features_binary, save_labels,
    synth_generate, FeatureFormat, LabeledSet, PseudoSourcePlan, Standardizer, SynthSpec,
    UnlabeledSet,
};
use drlearn::numeric::{Matrix, ProbVector};
use drlearn::selection::{select_k, sweep_heatmap, GridSpec, SweepInputs};
use drlearn::trainer::{
    evaluate, load_classifier, save_classifier, train, AmbiguityConfig, LinearClassifier,
    Metrics, TrainConfig,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const SOURCE_FEATURES_FILE: &str = "source_features.drlf";
pub const SOURCE_LABELS_FILE: &str = "source_labels.txt";
pub const TARGET_FEATURES_FILE: &str = "target_features.drlf";
pub const TARGET_LABELS_FILE: &str = "target_labels.txt";
pub const PLAN_FILE: &str = "plan.json";
pub const ENSEMBLE_FILE: &str = "ensemble.drle";
pub const CLASSIFIER_FILE: &str = "classifier.drlc";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const SELECTED_K_FILE: &str = "selected_k.json";

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed_override: Option<u64>,
    artifacts: Vec<String>,
    unix_time_secs: u64,
    effective_config: &'a BTreeMap<String, String>,
}

fn write_manifest(cfg: &RunConfig, command: &str, artifacts: &[&str]) -> Result<(), CliError> {
    let out_dir = cfg.require_path("out_dir")?;
    let manifest = Manifest {
        command,
        config_hash: cfg.hash(),
        seed_override: cfg.seed_override,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        unix_time_secs: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        effective_config: cfg.entries(),
    };
    let name = format!("manifest_{}.json", command.replace('-', "_"));
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Runtime(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(out_dir.join(name), body)?;
    Ok(())
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out_dir = cfg.require_path("out_dir")?;
    std::fs::create_dir_all(&out_dir)?;
    Ok(out_dir)
}

fn load_matrix(path: &Path) -> Result<Matrix, CliError> {
    Ok(load_features(path, FeatureFormat::from_path(path))?)
}

fn load_source(cfg: &RunConfig) -> Result<LabeledSet, CliError> {
    let features = load_matrix(&cfg.require_path("source_features")?)?;
    let labels = load_labels(&cfg.require_path("source_labels")?)?;
    Ok(LabeledSet::new(
        features,
        labels,
        cfg.get_usize("class_count")?,
    )?)
}

fn load_target(cfg: &RunConfig) -> Result<UnlabeledSet, CliError> {
    let features = load_matrix(&cfg.require_path("target_features")?)?;
    Ok(UnlabeledSet::new(features)?)
}

/// Source-fitted standardizer when `standardize` is on.
fn maybe_standardizer(cfg: &RunConfig) -> Result<Option<Standardizer>, CliError> {
    if !cfg.get_bool("standardize")? {
        return Ok(None);
    }
    let features = load_matrix(&cfg.require_path("source_features")?)?;
    Ok(Some(Standardizer::fit(&features)?))
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    let tc = TrainConfig {
        eta_z: cfg.get_f64("eta_z")?,
        eta_beta: cfg.get_f64("eta_beta")?,
        eta_theta: cfg.get_f64("eta_theta")?,
        epochs: cfg.get_usize("epochs")?,
        batch_size: cfg.get_usize("batch_size")?,
        pgd_steps: cfg.get_usize("pgd_steps")?,
        seed: cfg.get_u64("train_seed")?,
        log_grad_norms: true,
    };
    tc.validate()
        .map_err(|e| CliError::Usage(format!("invalid training configuration: {e}")))?;
    Ok(tc)
}

fn beta_bar(cfg: &RunConfig, k: usize) -> Result<ProbVector, CliError> {
    let raw = cfg.get_string("beta_bar");
    if raw == "uniform" {
        return Ok(ProbVector::uniform(k)?);
    }
    let values = cfg.get_f64_list("beta_bar")?;
    if values.len() != k {
        return Err(CliError::Usage(format!(
            "beta_bar has {} entries but there are {k} pseudo-sources",
            values.len()
        )));
    }
    ProbVector::new(values)
        .map_err(|e| CliError::Usage(format!("beta_bar is not on the simplex: {e}")))
}

fn grid_spec(cfg: &RunConfig) -> Result<GridSpec, CliError> {
    GridSpec::new(cfg.get_f64_list("eps1_grid")?, cfg.get_f64_list("eps2_grid")?)
        .map_err(|e| CliError::Usage(format!("invalid grid: {e}")))
}

/// Generate the bundled synthetic benchmark and write its four data files.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out_dir = ensure_out_dir(cfg)?;
    let spec = SynthSpec::spurious_benchmark(
        cfg.get_usize("synth_source_count")?,
        cfg.get_usize("synth_target_count")?,
        cfg.get_f64("synth_noise_scale")?,
        cfg.get_u64("synth_seed")?,
    );
    let (source, target, truth) = synth_generate(&spec)?;
    save_features_binary(&out_dir.join(SOURCE_FEATURES_FILE), &source.features)?;
    save_labels(&out_dir.join(SOURCE_LABELS_FILE), &source.labels)?;
    save_features_binary(&out_dir.join(TARGET_FEATURES_FILE), &target.features)?;
    save_labels(&out_dir.join(TARGET_LABELS_FILE), &truth.labels)?;
    write_manifest(
        cfg,
        "synth",
        &[
            SOURCE_FEATURES_FILE,
            SOURCE_LABELS_FILE,
            TARGET_FEATURES_FILE,
            TARGET_LABELS_FILE,
        ],
    )?;
    println!(
        "synth: wrote {} source and {} target samples ({} dims) to {}",
        source.len(),
        target.len(),
        source.dim(),
        out_dir.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PlanArtifact {
    config_hash: String,
    plan: PseudoSourcePlan,
}

/// Draw the bootstrap pseudo-source plan.
pub fn cmd_subsample(cfg: &RunConfig) -> Result<(), CliError> {
    let out_dir = ensure_out_dir(cfg)?;
    let source = load_source(cfg)?;
    let plan = make_pseudo_sources(
        &source,
        cfg.get_usize("k")?,
        cfg.get_f64("fraction")?,
        cfg.get_u64("plan_seed")?,
    )?;
    let artifact = PlanArtifact {
        config_hash: cfg.hash(),
        plan,
    };
    let body = serde_json::to_string_pretty(&artifact)
        .map_err(|e| CliError::Runtime(format!("cannot serialize plan: {e}")))?;
    std::fs::write(out_dir.join(PLAN_FILE), body)?;
    write_manifest(cfg, "subsample", &[PLAN_FILE])?;
    println!(
        "subsample: {} lists of {} indices -> {}",
        artifact.plan.k,
        artifact.plan.subsample_size,
        out_dir.join(PLAN_FILE).display()
    );
    Ok(())
}

fn load_plan(out_dir: &Path) -> Result<PseudoSourcePlan, CliError> {
    let path = out_dir.join(PLAN_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Runtime(format!(
            "missing plan artifact {} (run `subsample` first): {e}",
            path.display()
        ))
    })?;
    let artifact: PlanArtifact = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("malformed plan artifact: {e}")))?;
    Ok(artifact.plan)
}

/// Fit the per-pseudo-source conditional models.
pub fn cmd_fit_cond(cfg: &RunConfig) -> Result<(), CliError> {
    let out_dir = ensure_out_dir(cfg)?;
    let mut source = load_source(cfg)?;
    if let Some(std) = maybe_standardizer(cfg)? {
        source.features = std.apply(&source.features)?;
    }
    let plan = load_plan(&out_dir)?;
    let ensemble = fit_ensemble(
        &source,
        &plan,
        cfg.get_f64("lambda")?,
        cfg.get_usize("fit_max_iters")?,
        cfg.get_f64("fit_tol")?,
    )?;
    save_ensemble(&out_dir.join(ENSEMBLE_FILE), &ensemble, &cfg.hash())?;
    write_manifest(cfg, "fit-cond", &[ENSEMBLE_FILE])?;
    let degenerate = ensemble.models.iter().filter(|m| m.degenerate).count();
    println!(
        "fit-cond: {} conditionals over {} classes, {} dims ({} degenerate)",
        ensemble.k(),
        ensemble.class_count,
        ensemble.feature_dim,
        degenerate
    );
    Ok(())
}

/// Train the robust classifier against the fitted conditionals.
pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let out_dir = ensure_out_dir(cfg)?;
    let ensemble_path = out_dir.join(ENSEMBLE_FILE);
    let (ensemble, _) = load_ensemble(&ensemble_path).map_err(|e| {
        CliError::Runtime(format!(
            "missing or unreadable ensemble {} (run `fit-cond` first): {e}",
            ensemble_path.display()
        ))
    })?;
    let mut target = load_target(cfg)?;
    if let Some(std) = maybe_standardizer(cfg)? {
        target.features = std.apply(&target.features)?;
    }
    let amb = AmbiguityConfig::new(
        cfg.get_f64("eps1")?,
        cfg.get_f64("eps2")?,
        beta_bar(cfg, ensemble.k())?,
    )
    .map_err(|e| CliError::Usage(format!("invalid ambiguity configuration: {e}")))?;
    let tc = train_config(cfg)?;
    let theta0 = LinearClassifier::zeros(ensemble.class_count, ensemble.feature_dim);
    let (theta, trace) = train(&ensemble, &target, &amb, &tc, &theta0)?;
    save_classifier(&out_dir.join(CLASSIFIER_FILE), &theta, &cfg.hash())?;
    trace.save_csv(&out_dir.join(TRACE_FILE))?;
    write_manifest(cfg, "train", &[CLASSIFIER_FILE, TRACE_FILE])?;
    let last = trace.records.last();
    println!(
        "train: {} iterations, final loss {}",
        trace.records.len(),
        last.map(|r| r.loss.to_string()).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricsArtifact {
    accuracy: f64,
    per_class_accuracy: Vec<Option<f64>>,
    n_test: usize,
    config_hash: String,
}

/// Evaluate the trained classifier on labeled features.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let out_dir = ensure_out_dir(cfg)?;
    let classifier_path = out_dir.join(CLASSIFIER_FILE);
    let (theta, _) = load_classifier(&classifier_path).map_err(|e| {
        CliError::Runtime(format!(
            "missing or unreadable classifier {} (run `train` first): {e}",
            classifier_path.display()
        ))
    })?;
    let features = load_matrix(&cfg.require_path("target_features")?)?;
    let labels = load_labels(&cfg.require_path("target_labels")?)?;
    let class_count = cfg.get_usize("class_count")?;
    let mut truth = LabeledSet::new(features, labels, class_count)?;
    if let Some(std) = maybe_standardizer(cfg)? {
        truth.features = std.apply(&truth.features)?;
    }
    if theta.feature_dim() != truth.dim() || theta.class_count() != class_count {
        return Err(CliError::Runtime(format!(
            "refusing classifier artifact: it is ({} classes, {} dims) but the data is ({class_count}, {})",
            theta.class_count(),
            theta.feature_dim(),
            truth.dim()
        )));
    }
    let ensemble_path = out_dir.join(ENSEMBLE_FILE);
    if ensemble_path.exists() {
        let (ensemble, _) = load_ensemble(&ensemble_path)?;
        if ensemble.feature_dim != truth.dim() || ensemble.class_count != class_count {
            return Err(CliError::Runtime(format!(
                "refusing ensemble artifact: it is ({} classes, {} dims) but the data is ({class_count}, {})",
                ensemble.class_count, ensemble.feature_dim, truth.dim()
            )));
        }
    }
    let metrics: Metrics = evaluate(&theta, &truth)?;
    let artifact = MetricsArtifact {
        accuracy: metrics.accuracy,
        per_class_accuracy: metrics.per_class_accuracy,
        n_test: metrics.n_test,
        config_hash: cfg.hash(),
    };
    let body = serde_json::to_string_pretty(&artifact)
        .map_err(|e| CliError::Runtime(format!("cannot serialize metrics: {e}")))?;
    std::fs::write(out_dir.join(METRICS_FILE), body)?;
    write_manifest(cfg, "eval", &[METRICS_FILE])?;
    println!("eval: accuracy {} on {} samples", artifact.accuracy, artifact.n_test);
    Ok(())
}

/// Sensitivity sweep over the (eps1, eps2) grid, averaged over seeds.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let out_dir = ensure_out_dir(cfg)?;
    let mut source = load_source(cfg)?;
    let mut target = load_target(cfg)?;
    let eval_features = load_matrix(&cfg.require_path("target_features")?)?;
    let eval_labels = load_labels(&cfg.require_path("target_labels")?)?;
    let mut eval_set = LabeledSet::new(eval_features, eval_labels, cfg.get_usize("class_count")?)?;
    if let Some(std) = maybe_standardizer(cfg)? {
        source.features = std.apply(&source.features)?;
        target.features = std.apply(&target.features)?;
        eval_set.features = std.apply(&eval_set.features)?;
    }
    let grid = grid_spec(cfg)?;
    let seeds = cfg.get_u64_list("sweep_seeds")?;
    let result = sweep_heatmap(
        &grid,
        &seeds,
        &SweepInputs {
            source: &source,
            target: &target,
            eval: &eval_set,
            k: cfg.get_usize("k")?,
            fraction: cfg.get_f64("fraction")?,
            lambda: cfg.get_f64("lambda")?,
            fit_max_iters: cfg.get_usize("fit_max_iters")?,
            fit_tol: cfg.get_f64("fit_tol")?,
            train: train_config(cfg)?,
        },
    )?;
    let mut body = Vec::new();
    result
        .write_csv(&mut body)
        .map_err(|e| CliError::Runtime(format!("cannot serialize heatmap: {e}")))?;
    std::fs::write(out_dir.join(HEATMAP_FILE), body)?;
    write_manifest(cfg, "sweep", &[HEATMAP_FILE])?;
    let best = result.select_best();
    println!(
        "sweep: {} cells x {} seeds, best cell ({}, {})",
        result.cells.len(),
        seeds.len(),
        best.0,
        best.1
    );
    Ok(())
}

#[derive(Serialize)]
struct SelectedKArtifact {
    selected_k: usize,
    scores: Vec<drlearn::selection::KScore>,
    config_hash: String,
}

/// Choose the pseudo-source count by source-only cross validation.
pub fn cmd_select_k(cfg: &RunConfig) -> Result<(), CliError> {
    let out_dir = ensure_out_dir(cfg)?;
    let mut source = load_source(cfg)?;
    if let Some(std) = maybe_standardizer(cfg)? {
        source.features = std.apply(&source.features)?;
    }
    let selection = select_k(
        &source,
        &cfg.get_usize_list("k_candidates")?,
        cfg.get_usize("cv_folds")?,
        cfg.get_u64("plan_seed")?,
        cfg.get_f64("fraction")?,
        cfg.get_f64("lambda")?,
        cfg.get_usize("fit_max_iters")?,
        cfg.get_f64("fit_tol")?,
    )?;
    let artifact = SelectedKArtifact {
        selected_k: selection.selected,
        scores: selection.scores,
        config_hash: cfg.hash(),
    };
    let body = serde_json::to_string_pretty(&artifact)
        .map_err(|e| CliError::Runtime(format!("cannot serialize selection: {e}")))?;
    std::fs::write(out_dir.join(SELECTED_K_FILE), body)?;
    write_manifest(cfg, "select-k", &[SELECTED_K_FILE])?;
    println!("select-k: chose K = {}", artifact.selected_k);
    Ok(())
}
