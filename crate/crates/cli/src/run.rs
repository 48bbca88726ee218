//! Run directories and manifests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "strokeforge-manifest/1";
pub const RUNS_ENV: &str = "STROKEFORGE_RUNS";
const BACKEND: &str = "candle-core 0.11";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub source: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub argv: Vec<String>,
    pub status: String,
    pub error: Option<String>,
    pub config: Value,
    pub seeds: Map<String, Value>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub summary: Value,
    pub started_at: String,
    pub wall_clock_secs: f64,
    pub versions: Map<String, Value>,
}

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file, or of a directory's files (sorted relative paths and
/// contents).
pub fn fingerprint_path(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for rel in files {
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(std::fs::read(path.join(&rel))?);
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = std::fs::read(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        Ok(sha256_hex(&bytes))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

fn is_empty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_none()).unwrap_or(false)
}

pub enum OutputKind {
    /// Everything goes into a directory with `manifest.json`.
    Directory,
    /// A single file named by `--out`, manifest at `<file>.manifest.json`;
    /// without `--out` it is created as this name in a fresh run directory.
    File(&'static str),
}

pub struct Run {
    command: String,
    dir: PathBuf,
    manifest_path: PathBuf,
    primary_file: Option<PathBuf>,
    /// Directory created by this run, removed again on usage errors.
    created_dir: Option<PathBuf>,
    config: Value,
    inputs: Vec<InputRecord>,
    outputs: Vec<PathBuf>,
    started_at: String,
    t0: Instant,
}

impl Run {
    /// Claims the output location. Existing outputs are never overwritten.
    pub fn open(command: &str, out: Option<&Path>, kind: OutputKind, config: &Value) -> CliResult<Run> {
        let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
        let (dir, manifest_path, primary_file, created_dir) = match (out, kind) {
            (Some(file), OutputKind::File(_)) => {
                if file.exists() {
                    return Err(CliError::Usage(format!("{} already exists", file.display())));
                }
                let manifest = PathBuf::from(format!("{}.manifest.json", file.display()));
                if manifest.exists() {
                    return Err(CliError::Usage(format!("{} already exists", manifest.display())));
                }
                let dir = file.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
                let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
                std::fs::create_dir_all(&dir)?;
                (dir, manifest, Some(file.to_path_buf()), None)
            }
            (Some(dir), OutputKind::Directory) => {
                if dir.exists() && !is_empty_dir(dir) {
                    return Err(CliError::Usage(format!("output directory {} is not empty", dir.display())));
                }
                let created = (!dir.exists()).then(|| dir.to_path_buf());
                std::fs::create_dir_all(dir)?;
                (dir.to_path_buf(), dir.join("manifest.json"), None, created)
            }
            (None, kind) => {
                let dir = fresh_run_dir(command, config)?;
                let primary = match kind {
                    OutputKind::File(name) => Some(dir.join(name)),
                    OutputKind::Directory => None,
                };
                (dir.clone(), dir.join("manifest.json"), primary, Some(dir))
            }
        };
        let mut run = Run {
            command: command.to_string(),
            dir,
            manifest_path,
            primary_file,
            created_dir,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at,
            t0: Instant::now(),
        };
        if let Some(p) = run.primary_file.clone() {
            run.outputs.push(p);
        }
        Ok(run)
    }

    /// The single output file of a file-output command.
    pub fn primary_file(&self) -> &Path {
        self.primary_file.as_deref().expect("file-output command")
    }

    /// Registers and returns the path of an output inside the run directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn input_path(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let sha256 = fingerprint_path(path)?;
        self.inputs.push(InputRecord {
            role: role.to_string(),
            source: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn input_digest(&mut self, role: &str, source: &str, sha256: String) {
        self.inputs.push(InputRecord {
            role: role.to_string(),
            source: source.to_string(),
            sha256,
        });
    }

    fn write_manifest(&self, status: &str, error: Option<String>, summary: Value) -> CliResult<()> {
        let mut versions = Map::new();
        versions.insert("strokeforge".into(), Value::from(env!("CARGO_PKG_VERSION")));
        versions.insert("backend".into(), Value::from(BACKEND));
        versions.insert("platform".into(), Value::from(format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH)));
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            command: self.command.clone(),
            argv: std::env::args().collect(),
            status: status.into(),
            error,
            seeds: config::seeds(&self.config),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            summary,
            started_at: self.started_at.clone(),
            wall_clock_secs: self.t0.elapsed().as_secs_f64(),
            versions,
        };
        std::fs::write(&self.manifest_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Runs `body`, then writes the manifest (also on failure).
    pub fn execute(mut self, body: impl FnOnce(&mut Run) -> CliResult<Value>) -> CliResult<()> {
        match body(&mut self) {
            Ok(summary) => {
                self.write_manifest("ok", None, summary)?;
                eprintln!("wrote {}", self.manifest_path.display());
                Ok(())
            }
            Err(e @ CliError::Usage(_)) => {
                // Nothing ran; leave no trace.
                for p in &self.outputs {
                    let _ = std::fs::remove_file(p);
                }
                if let Some(d) = &self.created_dir {
                    let _ = std::fs::remove_dir_all(d);
                }
                Err(e)
            }
            Err(e) => {
                self.write_manifest("failed", Some(e.to_string()), Value::Null)?;
                Err(e)
            }
        }
    }
}

fn fresh_run_dir(command: &str, config: &Value) -> CliResult<PathBuf> {
    let root = runs_root();
    std::fs::create_dir_all(&root)?;
    let hash = sha256_hex(format!("{command}\n{config}").as_bytes());
    let stamp = Utc::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-{command}-{}", &hash[..8]);
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let p = root.join(name);
        // create_dir fails on existing paths, so concurrent runs never share one.
        match std::fs::create_dir(&p) {
            Ok(()) => return Ok(p),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}
