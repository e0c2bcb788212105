use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

/// Collects what a subcommand read and wrote, then writes the run record JSON.
/// Records hold no timestamps, so identical runs give identical records.
pub struct Recorder {
    command: &'static str,
    parameters: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    summary: Value,
}

impl Recorder {
    pub fn new(command: &'static str, parameters: &impl Serialize) -> Self {
        Self {
            command,
            parameters: serde_json::to_value(parameters).expect("parameters serialise"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Every data file below `dir` (run records excluded), in sorted order.
    pub fn input_tree(&mut self, dir: &Path) -> CliResult<()> {
        let files = list_files(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        self.inputs.extend(files.into_iter().filter(|p| !p.to_string_lossy().ends_with(".run.json")));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn outputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    pub fn summary(&mut self, value: Value) {
        self.summary = value;
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.parameters.to_string().as_bytes()))
    }

    pub fn write(mut self, path: &Path) -> CliResult<()> {
        self.inputs.sort();
        self.inputs.dedup();
        self.outputs.sort();
        self.outputs.dedup();
        let entries = |paths: &[PathBuf]| -> CliResult<Vec<FileEntry>> { paths.iter().map(|p| file_entry(p)).collect() };
        let record = json!({
            "command": self.command,
            "config_hash": self.config_hash(),
            "parameters": self.parameters,
            "inputs": entries(&self.inputs)?,
            "outputs": entries(&self.outputs)?,
            "summary": self.summary,
            "versions": {
                "burnscan": env!("CARGO_PKG_VERSION"),
                "weight_format": burnscan::segmodel::WEIGHT_FORMAT_VERSION,
            },
        });
        let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }
}

fn file_entry(path: &Path) -> CliResult<FileEntry> {
    let fail = |e: io::Error| CliError::data(format!("{}: {e}", path.display()));
    let mut file = File::open(path).map_err(fail)?;
    let mut hasher = Sha256::new();
    let bytes = io::copy(&mut file, &mut hasher).map_err(fail)?;
    Ok(FileEntry {
        path: path.display().to_string(),
        bytes,
        sha256: hex::encode(hasher.finalize()),
    })
}

pub fn list_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Record location for a command writing into a directory.
pub fn dir_record(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}.run.json"))
}

/// Record location for a command writing a single file: `<file>.run.json`.
pub fn file_record(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    file.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        fs::write(&a, "hello").unwrap();
        let run = |out: &Path| {
            let mut r = Recorder::new("test", &json!({"k": 1}));
            r.input(&a);
            r.output(&a);
            r.write(out).unwrap();
            fs::read(out).unwrap()
        };
        let first = run(&dir.path().join("r1.json"));
        let second = run(&dir.path().join("r1.json"));
        assert_eq!(first, second);
        let v: Value = serde_json::from_slice(&first).unwrap();
        assert_eq!(v["inputs"][0]["sha256"], "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        assert_eq!(file_record(Path::new("x/model.bin")), Path::new("x/model.bin.run.json"));
    }
}
