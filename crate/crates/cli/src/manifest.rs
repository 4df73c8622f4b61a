//! Run manifests: what was run, on which inputs, with which settings.

use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::failure::Failure;
use crate::kv;

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub seed: u64,
    /// Fully resolved settings, defaults included.
    pub config: Vec<(String, String)>,
    /// Input files with their SHA-256 digests.
    pub inputs: Vec<(PathBuf, String)>,
    pub runtime_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            seed,
            config: Vec::new(),
            inputs: Vec::new(),
            runtime_seconds: 0.0,
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.push((key.to_string(), value.to_string()));
        self
    }

    /// Records an input file (or every regular file of an input directory).
    pub fn input(&mut self, path: &Path) -> Result<&mut Self, Failure> {
        let mut files = if path.is_dir() {
            std::fs::read_dir(path)
                .map_err(|e| Failure::from(flowmine::Error::io(path, e)))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != FILE_NAME))
                .collect()
        } else {
            vec![path.to_path_buf()]
        };
        files.sort();
        for f in files {
            let digest = digest_file(&f)?;
            self.inputs.push((f, digest));
        }
        Ok(self)
    }

    pub fn finish(&mut self, elapsed: Duration) -> &mut Self {
        self.runtime_seconds = elapsed.as_secs_f64();
        self
    }

    pub fn render(&self) -> String {
        let mut entries: Vec<(String, String)> = vec![
            ("tool_version".into(), self.tool_version.clone()),
            ("subcommand".into(), self.subcommand.clone()),
            ("seed".into(), self.seed.to_string()),
        ];
        entries.extend(self.config.iter().map(|(k, v)| (format!("config.{k}"), v.clone())));
        entries.extend(
            self.inputs
                .iter()
                .map(|(p, d)| (format!("input.{}", p.display()), format!("sha256:{d}"))),
        );
        entries.push(("runtime_seconds".into(), format!("{:.3}", self.runtime_seconds)));
        kv::render(entries.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }

    /// Writes `manifest.txt` into `dir`, replacing any earlier one.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(flowmine::Error::io(dir, e)))?;
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, self.render()).map_err(|e| Failure::from(flowmine::Error::io(&path, e)))?;
        Ok(path)
    }
}

pub fn digest_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::from(flowmine::Error::io(path, e)))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Directory a manifest belongs in for an output path: the path itself when it
/// is (or will be) a directory, else its parent.
pub fn artifact_dir(output: &Path, output_is_dir: bool) -> PathBuf {
    if output_is_dir {
        return output.to_path_buf();
    }
    match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_known_fields() {
        let mut m = RunManifest::new("mine", 42);
        m.set("theta", 0.75).finish(Duration::from_millis(1500));
        let text = m.render();
        assert!(text.contains("subcommand=mine\n"));
        assert!(text.contains("config.theta=0.75\n"));
        assert!(text.contains("runtime_seconds=1.500\n"));
    }

    #[test]
    fn sha256_of_abc() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            digest_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
