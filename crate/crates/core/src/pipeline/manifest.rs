use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decade::Decade;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One face image. Serialized as one JSON object per line with these exact keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub path: String,
    pub decade: Decade,
    pub capture_year: Option<i32>,
    pub birth_year: Option<i32>,
    pub yaw: Option<f64>,
    pub pitch: Option<f64>,
    #[serde(default)]
    pub split: Split,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Strict parse; any malformed line is an error naming the line.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| Error::InvalidInput(format!("manifest line {}: {e}", i + 1)))?,
            );
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn count(&self, decade: Decade, split: Split) -> usize {
        self.records
            .iter()
            .filter(|r| r.decade == decade && r.split == split)
            .count()
    }
}

/// Filters applied by [`curate_manifest`]. `None` disables a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationRules {
    /// Records whose decade precedes this year are dropped.
    pub earliest_decade: Option<u16>,
    /// Inclusive age window at capture time.
    pub age_window: Option<(i32, i32)>,
    /// Maximum absolute yaw and pitch, in degrees.
    pub max_pose_degrees: Option<f64>,
}

impl Default for CurationRules {
    fn default() -> Self {
        Self {
            earliest_decade: Some(1880),
            age_window: Some((18, 80)),
            max_pose_degrees: Some(30.0),
        }
    }
}

impl CurationRules {
    pub fn none() -> Self {
        Self {
            earliest_decade: None,
            age_window: None,
            max_pose_degrees: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RejectionReport {
    /// Rule name to number of rejected records.
    pub rejected: BTreeMap<String, usize>,
    /// Rule name to number of records that lacked the data the rule needs.
    pub skipped: BTreeMap<String, usize>,
    /// `(line number, reason)` for every rejection.
    pub reasons: Vec<(usize, String)>,
}

impl RejectionReport {
    fn reject(&mut self, line: usize, rule: &str, why: String) {
        *self.rejected.entry(rule.into()).or_default() += 1;
        self.reasons.push((line, format!("{rule}: {why}")));
    }

    fn skip(&mut self, rule: &str) {
        *self.skipped.entry(rule.into()).or_default() += 1;
    }
}

/// Parse raw JSONL records and keep those passing every enabled rule.
pub fn curate_manifest(raw: &str, rules: &CurationRules) -> (DatasetManifest, RejectionReport) {
    let mut report = RejectionReport::default();
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.reject(n, "malformed", e.to_string());
                continue;
            }
        };
        if let Some(first) = rules.earliest_decade {
            if rec.decade.year() < first {
                report.reject(n, "earliest_decade", format!("decade {} before {first}", rec.decade));
                continue;
            }
        }
        if let Some((lo, hi)) = rules.age_window {
            match (rec.capture_year, rec.birth_year) {
                (Some(c), Some(b)) => {
                    let age = c - b;
                    if age < lo || age > hi {
                        report.reject(n, "age_window", format!("age {age} outside [{lo}, {hi}]"));
                        continue;
                    }
                }
                _ => report.skip("age_window"),
            }
        }
        if let Some(max) = rules.max_pose_degrees {
            match (rec.yaw, rec.pitch) {
                (None, None) => report.skip("max_pose_degrees"),
                (y, p) => {
                    let worst = y.unwrap_or(0.0).abs().max(p.unwrap_or(0.0).abs());
                    if worst > max {
                        report.reject(n, "max_pose_degrees", format!("pose {worst} deg exceeds {max}"));
                        continue;
                    }
                }
            }
        }
        records.push(rec);
    }
    (DatasetManifest { records }, report)
}

/// Assign exactly `per_decade_test` random test records in every decade that has more
/// records than that; other decades stay entirely in train.
pub fn split_dataset(manifest: &DatasetManifest, per_decade_test: usize, seed: u64) -> DatasetManifest {
    let mut out = manifest.clone();
    let mut by_decade: BTreeMap<Decade, Vec<usize>> = BTreeMap::new();
    for (i, r) in out.records.iter_mut().enumerate() {
        r.split = Split::Train;
        by_decade.entry(r.decade).or_default().push(i);
    }
    if per_decade_test == 0 {
        return out;
    }
    for (d, mut idx) in by_decade {
        if idx.len() <= per_decade_test {
            tracing::warn!(decade = %d, records = idx.len(), per_decade_test, "too few records; decade kept in train");
            continue;
        }
        idx.sort_by(|a, b| out.records[*a].path.cmp(&out.records[*b].path));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(d.year()));
        idx.shuffle(&mut rng);
        for &i in &idx[..per_decade_test] {
            out.records[i].split = Split::Test;
        }
    }
    out
}
