use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{finetune_decade, DecadeDataset, Discriminator, TrainConfig, TrainLog};
use crate::decade::{is_contiguous, Decade};
use crate::error::{Error, Result};
use crate::generator::checkpoint::{load_parameters, save_parameters};
use crate::generator::{GeneratorSpec, ParameterVector};
use crate::perception::FaceEmbedder;

/// A parent generator and one fine-tuned child per decade.
#[derive(Debug, Clone)]
pub struct GeneratorFamily {
    pub spec: GeneratorSpec,
    pub parent: ParameterVector,
    pub children: BTreeMap<Decade, ParameterVector>,
    /// Digest of the training configuration.
    pub provenance: String,
}

impl GeneratorFamily {
    pub fn new(
        spec: GeneratorSpec,
        parent: ParameterVector,
        children: BTreeMap<Decade, ParameterVector>,
        provenance: String,
    ) -> Result<Self> {
        parent.check_spec(&spec)?;
        for c in children.values() {
            c.check_spec(&spec)?;
        }
        let decades: Vec<Decade> = children.keys().copied().collect();
        if !is_contiguous(&decades) {
            return Err(Error::InvalidInput(format!(
                "family decades {decades:?} are not contiguous"
            )));
        }
        Ok(Self {
            spec,
            parent,
            children,
            provenance,
        })
    }

    pub fn decades(&self) -> Vec<Decade> {
        self.children.keys().copied().collect()
    }

    pub fn child(&self, decade: Decade) -> Result<&ParameterVector> {
        self.children
            .get(&decade)
            .ok_or(Error::UnknownDecade(decade.year()))
    }

    pub fn spec_hash(&self) -> String {
        self.spec.spec_hash()
    }
}

/// Per-decade training outcome kept alongside the family.
#[derive(Debug, Clone, Default)]
pub struct FamilyReport {
    pub logs: BTreeMap<Decade, TrainLog>,
}

/// Fine-tune every decade independently from the same parent.
pub fn train_family(
    spec: &GeneratorSpec,
    parent: &ParameterVector,
    parent_disc: Option<&Discriminator>,
    datasets: &BTreeMap<Decade, DecadeDataset>,
    cfg: &TrainConfig,
    embedder: &dyn FaceEmbedder,
) -> Result<(GeneratorFamily, FamilyReport)> {
    if datasets.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a family needs at least 2 decades, got {}",
            datasets.len()
        )));
    }
    let mut children = BTreeMap::new();
    let mut report = FamilyReport::default();
    for (decade, data) in datasets {
        let mut dcfg = cfg.clone();
        dcfg.seed = cfg.seed.wrapping_add(decade.year() as u64);
        match finetune_decade(spec, parent, parent_disc, data, &dcfg, embedder) {
            Ok(out) => {
                tracing::info!(%decade, skip_rate = out.log.skip_rate(), "decade fine-tuned");
                children.insert(*decade, out.params);
                report.logs.insert(*decade, out.log);
            }
            Err(e) => {
                let done: Vec<String> = children.keys().map(|d: &Decade| d.to_string()).collect();
                return Err(Error::InvalidInput(format!(
                    "family training failed at decade {decade} (completed: [{}]): {e}",
                    done.join(", ")
                )));
            }
        }
    }
    let family = GeneratorFamily::new(spec.clone(), parent.clone(), children, cfg.digest())?;
    Ok((family, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyManifest {
    pub format: String,
    pub spec_hash: String,
    pub decades: Vec<Decade>,
    pub provenance: String,
}

const FAMILY_FILE: &str = "family.json";
const FAMILY_FORMAT: &str = "epochface-family/1";

/// One checkpoint directory per member plus `family.json`.
pub fn save_family(dir: &Path, family: &GeneratorFamily) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_parameters(&dir.join("parent"), &family.parent, &family.spec, None)?;
    for (d, p) in &family.children {
        save_parameters(&dir.join(d.year().to_string()), p, &family.spec, Some(*d))?;
    }
    let m = FamilyManifest {
        format: FAMILY_FORMAT.into(),
        spec_hash: family.spec_hash(),
        decades: family.decades(),
        provenance: family.provenance.clone(),
    };
    let tmp = dir.join("family.json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&m)?)?;
    std::fs::rename(&tmp, dir.join(FAMILY_FILE))?;
    Ok(())
}

pub fn load_family(dir: &Path) -> Result<GeneratorFamily> {
    let path = dir.join(FAMILY_FILE);
    let m: FamilyManifest =
        serde_json::from_slice(&std::fs::read(&path).map_err(|e| Error::Artifact {
            path: path.clone(),
            detail: e.to_string(),
        })?)?;
    if m.format != FAMILY_FORMAT {
        return Err(Error::Artifact {
            path,
            detail: format!("unsupported format `{}`", m.format),
        });
    }
    let (spec, parent, _) = load_parameters(&dir.join("parent"), None)?;
    if spec.spec_hash() != m.spec_hash {
        return Err(Error::IncompatibleParameters {
            expected: m.spec_hash,
            found: spec.spec_hash(),
        });
    }
    let mut children = BTreeMap::new();
    for d in &m.decades {
        let (_, p, label) = load_parameters(&dir.join(d.year().to_string()), Some(&spec))?;
        if label != Some(*d) {
            return Err(Error::Artifact {
                path: dir.join(d.year().to_string()),
                detail: format!("checkpoint labelled {label:?}, expected {d}"),
            });
        }
        children.insert(*d, p);
    }
    GeneratorFamily::new(spec, parent, children, m.provenance)
}
