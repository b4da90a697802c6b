//! `run.manifest`: the resolved configuration of a run plus what it
//! produced. Replaying a manifest re-executes the same command.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run.manifest";
const HEADER: &str = "fieldrecon-run v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub artifacts: Vec<(String, PathBuf)>,
    /// Stage name and wall-clock seconds.
    pub durations: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn artifact(&mut self, name: &str, path: impl Into<PathBuf>) {
        self.artifacts.push((name.to_string(), path.into()));
    }

    /// Runs `f`, recording its wall-clock time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let start = std::time::Instant::now();
        let out = f()?;
        self.durations.push((stage.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }
}

pub fn render(config: &RunConfig, record: &RunRecord) -> String {
    let mut s = format!("{HEADER}\ncommand {}\nversion {}\n", config.command, env!("CARGO_PKG_VERSION"));
    for (k, v) in &config.values {
        let _ = writeln!(s, "config {k} = {v}");
    }
    for (name, path) in &record.artifacts {
        let _ = writeln!(s, "artifact {name} {}", path.display());
    }
    for (stage, secs) in &record.durations {
        let _ = writeln!(s, "duration {stage} {secs:.3}");
    }
    for w in &record.warnings {
        let _ = writeln!(s, "warning {}", w.replace('\n', " "));
    }
    s
}

/// Write via a temporary file and a rename, so readers never see a
/// partial manifest.
pub fn write(dir: &Path, config: &RunConfig, record: &RunRecord) -> CliResult<PathBuf> {
    let path = dir.join(RUN_MANIFEST);
    let tmp = dir.join(format!(".{RUN_MANIFEST}.tmp"));
    let io = |e: std::io::Error, p: &Path| CliError::Core(fieldrecon_core::Error::Io { path: p.to_path_buf(), source: e });
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    std::fs::write(&tmp, render(config, record)).map_err(|e| io(e, &tmp))?;
    std::fs::rename(&tmp, &path).map_err(|e| io(e, &path))?;
    Ok(path)
}

/// The command and configuration recorded in a manifest.
pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|_| CliError::Missing {
        what: "run manifest",
        path: path.to_path_buf(),
    })?;
    let bad = |m: &str| CliError::Config(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad("not a run manifest"));
    }
    let mut command = None;
    let mut values = std::collections::BTreeMap::new();
    for line in lines {
        if let Some(c) = line.strip_prefix("command ") {
            command = Some(c.to_string());
        } else if let Some(kv) = line.strip_prefix("config ") {
            let (k, v) = kv.split_once(" = ").ok_or_else(|| bad("malformed config line"))?;
            values.insert(k.to_string(), v.to_string());
        }
    }
    let command = command.ok_or_else(|| bad("no command recorded"))?;
    let flags: Vec<(String, String)> = values.into_iter().collect();
    RunConfig::resolve(&command, &[], None, &flags)
}
