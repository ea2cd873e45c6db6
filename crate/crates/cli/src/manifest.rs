use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Calibrate,
    Collect,
    TrainKlst,
    TrainGrpo,
    Eval,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Calibrate,
        Stage::Collect,
        Stage::TrainKlst,
        Stage::TrainGrpo,
        Stage::Eval,
        Stage::Export,
    ];

    /// Directory under the output root.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Calibrate => "calibrate",
            Stage::Collect => "collect",
            Stage::TrainKlst => "klst",
            Stage::TrainGrpo => "grpo",
            Stage::Eval => "eval",
            Stage::Export => "export",
        }
    }

    /// Config sections whose values determine this stage's outputs.
    pub fn sections(self) -> &'static [&'static str] {
        match self {
            Stage::Calibrate => &["seed", "env", "klst.collect"],
            Stage::Collect => &["seed", "env", "router", "klst.collect"],
            Stage::TrainKlst => &["seed", "env", "router", "klst.collect", "klst.labeling", "klst.train"],
            Stage::TrainGrpo => &["seed", "env", "router", "grpo"],
            Stage::Eval => &["seed", "env", "router", "eval"],
            Stage::Export => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRange {
    pub first: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub sections: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<EpisodeRange>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    #[serde(default)]
    pub details: serde_json::Value,
    /// Resolved config with the output directory blanked.
    pub config: RunConfig,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn entry(root: &Path, path: &Path) -> Result<FileEntry, CliError> {
    Ok(FileEntry {
        path: relative(root, path),
        sha256: sha256_file(path)?,
    })
}

impl Manifest {
    pub fn new(stage: Stage, config: &RunConfig) -> Self {
        let all = config.section_hashes();
        let sections = stage
            .sections()
            .iter()
            .map(|&s| (s.to_string(), all[s].clone()))
            .collect();
        let mut resolved = config.clone();
        resolved.out = PathBuf::new();
        Self {
            stage,
            format_version: MANIFEST_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            sections,
            episodes: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
            config: resolved,
        }
    }

    pub fn path(root: &Path, stage: Stage) -> PathBuf {
        root.join(stage.dir()).join(MANIFEST_FILE)
    }

    pub fn write(&self, root: &Path) -> Result<PathBuf, CliError> {
        let path = Self::path(root, self.stage);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(CliError::io(format!("writing {}", path.display())))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::MissingArtifact {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Provenance {
            path: path.to_path_buf(),
            reason: format!("unreadable manifest: {e}"),
        })
    }

    /// Reads the upstream manifest and checks it against the current config.
    pub fn upstream(root: &Path, stage: Stage, config: &RunConfig) -> Result<Self, CliError> {
        let path = Self::path(root, stage);
        let m = Self::read(&path)?;
        if m.stage != stage {
            return Err(CliError::Provenance {
                path,
                reason: format!("manifest is for stage {:?}, expected {stage:?}", m.stage),
            });
        }
        m.check_sections(&path, config)?;
        Ok(m)
    }

    /// Every section the upstream stage depended on must hash the same now.
    pub fn check_sections(&self, path: &Path, config: &RunConfig) -> Result<(), CliError> {
        let current = config.section_hashes();
        let changed: Vec<&str> = self
            .sections
            .iter()
            .filter(|(k, v)| current.get(*k) != Some(*v))
            .map(|(k, _)| k.as_str())
            .collect();
        if changed.is_empty() {
            Ok(())
        } else {
            Err(CliError::Provenance {
                path: path.to_path_buf(),
                reason: format!(
                    "config sections [{}] differ from the run that produced it; rerun the {} stage",
                    changed.join(", "),
                    self.stage.dir()
                ),
            })
        }
    }

    /// Resolves one of this manifest's outputs and checks its hash.
    pub fn verified_output(&self, root: &Path, rel: &str) -> Result<FileEntry, CliError> {
        let entry = self
            .outputs
            .iter()
            .find(|e| e.path == rel)
            .ok_or_else(|| CliError::MissingArtifact {
                path: root.join(rel),
                reason: format!("not listed in the {} manifest", self.stage.dir()),
            })?;
        verify(root, entry)?;
        Ok(entry.clone())
    }
}

pub fn verify(root: &Path, entry: &FileEntry) -> Result<(), CliError> {
    let path = root.join(&entry.path);
    if !path.is_file() {
        return Err(CliError::MissingArtifact {
            path,
            reason: "file not found".into(),
        });
    }
    let actual = sha256_file(&path)?;
    if actual != entry.sha256 {
        return Err(CliError::Provenance {
            path,
            reason: format!("sha256 {actual}, manifest records {}", entry.sha256),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_change_is_detected() {
        let cfg = RunConfig::default();
        let m = Manifest::new(Stage::TrainKlst, &cfg);
        let p = Path::new("klst/manifest.json");
        assert!(m.check_sections(p, &cfg).is_ok());
        let mut other = cfg.clone();
        other.grpo.train.beta = 1.0;
        assert!(m.check_sections(p, &other).is_ok());
        other.klst.labeling.tau = 0.9;
        let err = m.check_sections(p, &other).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("klst.labeling"));
    }

    #[test]
    fn tampered_file_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        fs::write(&f, "one").unwrap();
        let e = entry(dir.path(), &f).unwrap();
        assert_eq!(e.path, "a.txt");
        verify(dir.path(), &e).unwrap();
        fs::write(&f, "two").unwrap();
        assert_eq!(verify(dir.path(), &e).unwrap_err().exit_code(), 4);
        fs::remove_file(&f).unwrap();
        assert_eq!(verify(dir.path(), &e).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("eval")).unwrap();
        let m = Manifest::new(Stage::Eval, &RunConfig::default());
        let p = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
    }
}
