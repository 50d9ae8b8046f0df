//! Command-line front end of the robust self-training pipeline.
//!
//! Seven subcommands cover the pipeline end to end: `synth`, `subsample`,
//! `fit-cond`, `train`, `eval`, `sweep`, and `select-k`. Every
//! configuration key can come from a `--config` file or the matching
//! `--key value` flag, and `--seed` overrides all embedded seeds. Usage
//! mistakes exit with 2, runtime failures with 1 plus one machine-readable
//! JSON line on stderr.

pub mod commands;
pub mod config;

use config::{RunConfig, KEYS};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! runtime_from {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    };
}

runtime_from!(std::io::Error);
runtime_from!(drlearn::dataset::DatasetError);
runtime_from!(drlearn::conditionals::FitError);
runtime_from!(drlearn::trainer::TrainError);
runtime_from!(drlearn::selection::SelectionError);
runtime_from!(drlearn::numeric::NumericError);

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("synth", "Generate the bundled synthetic subpopulation-shift benchmark"),
    ("subsample", "Draw the bootstrap pseudo-source plan"),
    ("fit-cond", "Fit one conditional label model per pseudo-source"),
    ("train", "Train the distributionally robust classifier"),
    ("eval", "Evaluate the trained classifier on labeled features"),
    ("sweep", "Average test accuracy over the (eps1, eps2) grid and seeds"),
    ("select-k", "Choose the pseudo-source count by cross validation"),
];

fn build_cli() -> clap::Command {
    let mut cmd = clap::Command::new("drlearn")
        .about("Distributionally robust self-training on precomputed feature embeddings")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = clap::Command::new(*name)
            .about(*about)
            .arg(
                clap::Arg::new("config")
                    .long("config")
                    .value_name("PATH")
                    .help("Config file of `key = value` lines"),
            )
            .arg(
                clap::Arg::new("seed")
                    .long("seed")
                    .value_name("N")
                    .value_parser(clap::value_parser!(u64))
                    .help("Override every embedded seed"),
            );
        for (key, default, help) in KEYS {
            let help = if default.is_empty() {
                (*help).to_string()
            } else {
                format!("{help} [default: {default}]")
            };
            sub = sub.arg(
                clap::Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .help(help),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Assemble the effective configuration for one parsed subcommand.
fn effective_config(matches: &clap::ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = matches.get_one::<String>("config") {
        cfg.load_file(std::path::Path::new(path))?;
    }
    for (key, _, _) in KEYS {
        if let Some(value) = matches.get_one::<String>(*key) {
            cfg.set(key, value.clone());
        }
    }
    if let Some(&seed) = matches.get_one::<u64>("seed") {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn dispatch(command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    match command {
        "synth" => commands::cmd_synth(cfg),
        "subsample" => commands::cmd_subsample(cfg),
        "fit-cond" => commands::cmd_fit_cond(cfg),
        "train" => commands::cmd_train(cfg),
        "eval" => commands::cmd_eval(cfg),
        "sweep" => commands::cmd_sweep(cfg),
        "select-k" => commands::cmd_select_k(cfg),
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}

/// Run the CLI on the given argv (including the program name). Returns the
/// process exit code: 0 on success, 2 on usage errors, 1 on runtime
/// failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match build_cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            return 2;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let outcome = effective_config(sub).and_then(|cfg| dispatch(name, &cfg));
    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!(
                "{}",
                serde_json::json!({"kind": "usage", "command": name, "error": msg})
            );
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!(
                "{}",
                serde_json::json!({"kind": "runtime", "command": name, "error": msg})
            );
            1
        }
    }
}
