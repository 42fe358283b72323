use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable naming the directory under which runs are stored.
pub const ARTIFACT_ROOT_ENV: &str = "EPOCHFACE_ARTIFACT_ROOT";

const RUN_FILE: &str = "run.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file, or of a directory as the sorted list of its files' relative paths and
/// hashes.
pub fn sha256_path(path: &Path) -> Result<String> {
    if path.is_file() {
        return Ok(sha256_hex(&std::fs::read(path)?));
    }
    let mut entries = Vec::new();
    collect_files(path, path, &mut entries)?;
    entries.sort();
    let mut h = Sha256::new();
    for (rel, digest) in entries {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(digest.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> Result<()> {
    for e in std::fs::read_dir(dir).map_err(|e| Error::Artifact {
        path: dir.to_path_buf(),
        detail: e.to_string(),
    })? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            out.push((rel, sha256_hex(&std::fs::read(&p)?)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactFile {
    /// Free-form role such as `checkpoint`, `offset`, `report`, or `gallery`.
    pub kind: String,
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub run_id: String,
    pub command: String,
    pub config_digest: String,
    pub files: Vec<ArtifactFile>,
}

impl RunArtifact {
    /// Every listed file exists under `dir` and still matches its hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for f in &self.files {
            let p = dir.join(&f.path);
            if !p.exists() {
                return Err(Error::Artifact {
                    path: p,
                    detail: "listed in the run record but missing".into(),
                });
            }
            let h = sha256_path(&p)?;
            if h != f.sha256 {
                return Err(Error::Artifact {
                    path: p,
                    detail: format!("hash {h} does not match recorded {}", f.sha256),
                });
            }
        }
        Ok(())
    }
}

/// Output directory of one command invocation.
#[derive(Debug)]
pub struct RunDir {
    pub dir: PathBuf,
    record: RunArtifact,
}

impl RunDir {
    pub fn open(dir: &Path, command: &str, config_digest: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let short = &config_digest[..config_digest.len().min(12)];
        Ok(Self {
            dir: dir.to_path_buf(),
            record: RunArtifact {
                run_id: format!("{command}-{short}"),
                command: command.into(),
                config_digest: config_digest.into(),
                files: Vec::new(),
            },
        })
    }

    /// The completed run record in `dir`, if one exists for the same command and digest
    /// and all its files verify.
    pub fn completed(dir: &Path, command: &str, config_digest: &str) -> Option<RunArtifact> {
        let bytes = std::fs::read(dir.join(RUN_FILE)).ok()?;
        let rec: RunArtifact = serde_json::from_slice(&bytes).ok()?;
        (rec.command == command && rec.config_digest == config_digest && rec.verify(dir).is_ok())
            .then_some(rec)
    }

    /// Write `bytes` at `rel` via a temporary file and rename. An existing file with
    /// different content is an error.
    pub fn write(&mut self, kind: &str, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let target = self.dir.join(rel);
        let digest = sha256_hex(bytes);
        if target.exists() {
            let existing = sha256_path(&target)?;
            if existing != digest {
                return Err(Error::Artifact {
                    path: target,
                    detail: "already exists with different content".into(),
                });
            }
        } else {
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut tmp = target.as_os_str().to_owned();
            tmp.push(".tmp");
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, &target)?;
        }
        self.push(kind, rel, digest);
        Ok(target)
    }

    /// Record a file or directory that was written by other means.
    pub fn register(&mut self, kind: &str, rel: &str) -> Result<()> {
        let digest = sha256_path(&self.dir.join(rel))?;
        self.push(kind, rel, digest);
        Ok(())
    }

    fn push(&mut self, kind: &str, rel: &str, sha256: String) {
        self.record.files.retain(|f| f.path != rel);
        self.record.files.push(ArtifactFile {
            kind: kind.into(),
            path: rel.into(),
            sha256,
        });
    }

    /// Persist the run record atomically and return it.
    pub fn finish(self) -> Result<RunArtifact> {
        let tmp = self.dir.join("run.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&self.record)?)?;
        std::fs::rename(&tmp, self.dir.join(RUN_FILE))?;
        Ok(self.record)
    }
}
