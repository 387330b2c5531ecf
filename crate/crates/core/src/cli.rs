//! Command-line front end: configuration loading, overrides, output files.
//!
//! Exit codes: 0 success, 1 computation error, 2 configuration error.
//! CSV output is written as `<name>.csv.partial` and renamed on success, so
//! a file without the suffix is always complete.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{self, ModelConfig, SweepKind, SweepSpec};
use crate::parallel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const TOOL: &str = "spinchaos";
pub const WORKERS_ENV: &str = "SPINCHAOS_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "spinchaos", version, about = "Chaos indicators and control sweeps for short spin chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// η from level-spacing ratios over the grid.
    EtaSweep(RunArgs),
    /// Ensemble-averaged probe purity over the grid.
    PuritySweep(RunArgs),
    /// Late-time probe fluctuations versus chain length.
    Fluctuations(RunArgs),
    /// Optimal-control fidelity over the grid.
    ControlSweep(RunArgs),
    /// Purity curves with the environment in Gibbs states.
    TemperatureSweep(RunArgs),
    /// Resolve and check a configuration without running it.
    Validate {
        /// Sweep the configuration is meant for.
        #[arg(value_enum)]
        kind: KindArg,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum KindArg {
    EtaSweep,
    PuritySweep,
    Fluctuations,
    ControlSweep,
    TemperatureSweep,
}

impl From<KindArg> for SweepKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::EtaSweep => SweepKind::EtaSweep,
            KindArg::PuritySweep => SweepKind::PuritySweep,
            KindArg::Fluctuations => SweepKind::Fluctuations,
            KindArg::ControlSweep => SweepKind::ControlSweep,
            KindArg::TemperatureSweep => SweepKind::TemperatureSweep,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// JSON configuration (a run manifest is accepted too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value`; the value is read as JSON, else as a string.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default: `output.dir`, else the working directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Master seed; replaces `sweep.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Provenance written next to every CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: SweepKind,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_sha256: String,
    pub config: SweepSpec,
    pub rows: usize,
    pub notes: Vec<String>,
    pub wall_time_seconds: f64,
}

/// Sets `value` at a dotted `path`, creating objects on the way.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(path, "empty key in override path"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(Error::config(path, format!("`{key}` is not a section")));
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::config(path, "parent is not a section"))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a config file; manifests contribute their `config` section.
fn read_config(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
    match value.get("tool").and_then(Value::as_str) {
        Some(TOOL) => value
            .get("config")
            .cloned()
            .ok_or_else(|| Error::config("config", "manifest has no config section")),
        _ => Ok(value),
    }
}

/// Builds the fully resolved spec from a file, overrides and flags.
pub fn parse_and_validate(kind: SweepKind, args: &RunArgs) -> Result<SweepSpec> {
    let mut root = match &args.config {
        Some(p) => read_config(p)?,
        None => Value::Object(Default::default()),
    };
    for o in &args.overrides {
        apply_override(&mut root, o)?;
    }
    if let Some(seed) = args.seed {
        apply_override(&mut root, &format!("sweep.seed={seed}"))?;
    }
    if let Some(out) = &args.out {
        root.as_object_mut()
            .ok_or_else(|| Error::config("config", "top level must be an object"))?
            .entry("output")
            .or_insert_with(|| Value::Object(Default::default()))
            .as_object_mut()
            .ok_or_else(|| Error::config("output", "must be a section"))?
            .insert("dir".into(), serde_json::to_value(out)?);
    }
    // A model section without `kind` refines the default model.
    if let Some(model) = root.get_mut("model").and_then(Value::as_object_mut) {
        if !model.contains_key("kind") {
            let default = serde_json::to_value(ModelConfig::default())?;
            model.insert("kind".into(), default["kind"].clone());
        }
    }
    let spec: SweepSpec = serde_json::from_value(root).map_err(|e| Error::config("config", e.to_string()))?;
    if args.workers == Some(0) {
        return Err(Error::config("--workers", "must be at least 1"));
    }
    spec.resolve(kind)
}

pub fn config_hash(spec: &SweepSpec) -> Result<String> {
    let canonical = serde_json::to_vec(spec)?;
    Ok(Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect())
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config { .. } | Error::Json(_))
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs a resolved spec and writes its files. Returns the CSV path.
pub fn execute(kind: SweepKind, spec: &SweepSpec, workers: Option<usize>) -> Result<PathBuf> {
    let dir = spec.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::config("output.dir", format!("{}: {e}", dir.display())))?;
    let name = spec.output.name.clone().unwrap_or_else(|| kind.name().into());
    let started = Instant::now();
    let output = parallel::with_workers(workers, || experiments::run(kind, spec))??;
    for note in &output.notes {
        eprintln!("note: {note}");
    }
    let csv = output.table.to_csv();
    let csv_path = experiments::csv_path(&dir, &name, false);
    if let Some(failure) = output.failure {
        std::fs::write(experiments::csv_path(&dir, &name, true), csv)?;
        return Err(failure);
    }
    write_atomic(&csv_path, &csv)?;
    let manifest = Manifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: kind,
        seed: spec.seed()?,
        config_sha256: config_hash(spec)?,
        config: spec.clone(),
        rows: output.table.rows.len(),
        notes: output.notes,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&dir.join(format!("{name}.manifest.json")), &text)?;
    Ok(csv_path)
}

/// Full command dispatch; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (kind, args, dry) = match cli.command {
        Command::EtaSweep(a) => (SweepKind::EtaSweep, a, false),
        Command::PuritySweep(a) => (SweepKind::PuritySweep, a, false),
        Command::Fluctuations(a) => (SweepKind::Fluctuations, a, false),
        Command::ControlSweep(a) => (SweepKind::ControlSweep, a, false),
        Command::TemperatureSweep(a) => (SweepKind::TemperatureSweep, a, false),
        Command::Validate { kind, args } => (kind.into(), args, true),
    };
    let spec = match parse_and_validate(kind, &args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
    };
    if dry {
        match serde_json::to_string_pretty(&spec) {
            Ok(text) => {
                println!("{text}");
                return EXIT_OK;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_COMPUTATION;
            }
        }
    }
    eprintln!("{}", experiments::describe(&spec));
    match execute(kind, &spec, args.workers) {
        Ok(path) => {
            eprintln!("wrote {}", path.display());
            EXIT_OK
        }
        Err(e) if is_config_error(&e) => {
            eprintln!("configuration error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_COMPUTATION
        }
    }
}
