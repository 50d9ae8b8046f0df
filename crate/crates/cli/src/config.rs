//! Flat key-value run configuration.
//!
//! Every key has a documented default, can be set in a config file
//! (`key = value` lines, `#` comments), and can be overridden by the
//! matching `--key value` flag. Unknown file keys are errors so typos in
//! radius names cannot pass silently. `--seed N` overrides every embedded
//! seed at once.
//!
//! The configuration hash is the SHA-256 of the sorted effective
//! `key=value` lines, excluding `out_dir` (where artifacts land is not
//! part of the experiment's identity).

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

/// `(key, default, help)`; an empty default means "unset".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("source_features", "", "path to labeled source feature matrix (.csv or binary)"),
    ("source_labels", "", "path to source labels (one per line, or CSV with a `label` column)"),
    ("target_features", "", "path to unlabeled target feature matrix"),
    ("target_labels", "", "path to target truth labels (evaluation only)"),
    ("out_dir", "", "directory artifacts are written to"),
    ("class_count", "2", "number of classes (never inferred from labels)"),
    ("k", "10", "number of bootstrap pseudo-sources"),
    ("fraction", "0.2", "subsample fraction per pseudo-source"),
    ("plan_seed", "0", "seed of the bootstrap plan"),
    ("lambda", "0.0001", "L2 penalty of the conditional logistic fits"),
    ("fit_max_iters", "2000", "iteration cap of each logistic fit"),
    ("fit_tol", "0.000001", "gradient tolerance of each logistic fit"),
    ("eps1", "0", "covariate perturbation radius"),
    ("eps2", "0", "mixture-weight ball radius"),
    ("beta_bar", "uniform", "mixture center: `uniform` or comma-separated weights"),
    ("eta_z", "0.1", "covariate ascent step size"),
    ("eta_beta", "0.1", "mixture ascent step size"),
    ("eta_theta", "0.1", "classifier descent step size"),
    ("epochs", "30", "training epochs"),
    ("batch_size", "64", "minibatch size"),
    ("pgd_steps", "1", "covariate ascent steps per sample"),
    ("train_seed", "0", "seed of the training loop"),
    ("standardize", "false", "z-score features using source statistics"),
    ("synth_seed", "0", "seed of the synthetic benchmark draw"),
    ("synth_source_count", "600", "synthetic source sample count"),
    ("synth_target_count", "60", "synthetic unlabeled target sample count"),
    ("synth_noise_scale", "1", "global noise multiplier of the synthetic draw"),
    ("eps1_grid", "0,0.2,0.4,0.6,0.8,1", "eps1 axis of grid commands"),
    ("eps2_grid", "0,0.2,0.4,0.6,1", "eps2 axis of grid commands"),
    ("sweep_seeds", "0,1,2,3,4", "comma-separated seeds of the sweep"),
    ("k_candidates", "2,4,6,8,10,12", "candidate pseudo-source counts"),
    ("cv_folds", "5", "folds of the pseudo-source count selection"),
];

/// The effective configuration: defaults overlaid by file and flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Set when `--seed` overrode the embedded seeds.
    pub seed_override: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|(k, d, _)| (k.to_string(), d.to_string()))
            .collect();
        Self {
            values,
            seed_override: None,
        }
    }
}

impl RunConfig {
    pub fn is_known_key(key: &str) -> bool {
        KEYS.iter().any(|(k, _, _)| *k == key)
    }

    /// Overlay `key = value` lines from a config file.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {} is not `key = value`: {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !Self::is_known_key(key) {
                return Err(CliError::Usage(format!(
                    "unknown config key {key:?} on line {}",
                    lineno + 1
                )));
            }
            self.values.insert(key.to_string(), value.to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: String) {
        debug_assert!(Self::is_known_key(key));
        self.values.insert(key.to_string(), value);
    }

    /// Replace every embedded seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.set("plan_seed", seed.to_string());
        self.set("train_seed", seed.to_string());
        self.set("synth_seed", seed.to_string());
        self.set("sweep_seeds", seed.to_string());
        self.seed_override = Some(seed);
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .unwrap_or_default()
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let v = self.raw(key);
        if v.is_empty() {
            return Err(CliError::Usage(format!("missing required config key {key:?}")));
        }
        Ok(PathBuf::from(v))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, CliError> {
        self.raw(key)
            .parse()
            .map_err(|_| CliError::Usage(format!("config key {key:?} is not a count: {:?}", self.raw(key))))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, CliError> {
        self.raw(key)
            .parse()
            .map_err(|_| CliError::Usage(format!("config key {key:?} is not a seed: {:?}", self.raw(key))))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, CliError> {
        self.raw(key)
            .parse()
            .map_err(|_| CliError::Usage(format!("config key {key:?} is not a number: {:?}", self.raw(key))))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::Usage(format!(
                "config key {key:?} is not a boolean: {other:?}"
            ))),
        }
    }

    pub fn get_string(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| {
                    CliError::Usage(format!("config key {key:?} has a non-numeric entry: {s:?}"))
                })
            })
            .collect()
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Vec<u64>, CliError> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| {
                    CliError::Usage(format!("config key {key:?} has a non-integer entry: {s:?}"))
                })
            })
            .collect()
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| {
                    CliError::Usage(format!("config key {key:?} has a non-integer entry: {s:?}"))
                })
            })
            .collect()
    }

    /// Sorted effective `key=value` view, for manifests.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// SHA-256 over the sorted effective configuration, `out_dir` excluded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in &self.values {
            if k == "out_dir" {
                continue;
            }
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}
