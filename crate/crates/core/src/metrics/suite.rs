use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    compute_dca, compute_fid, compute_id_acc, compute_kmmd, Bandwidth, DecadeClassifier,
    FeatureSet, FeatureSource,
};
use crate::decade::Decade;
use crate::error::{Error, Result};
use crate::generator::TmtOffset;
use crate::image::Image;
use crate::inversion::{transform_across_decades, InversionResult};
use crate::perception::{FaceEmbedder, PerceptualNet};
use crate::training::GeneratorFamily;

/// Fraction of the side kept by the center crop before feature extraction.
pub const CROP_RATIO: f64 = 0.625;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecadeMetrics {
    pub fid: f64,
    pub kmmd: f64,
    pub dca0: f64,
    pub dca1: f64,
    pub dca2: f64,
    pub id_acc: f64,
}

/// Full-scale published numbers, kept for side-by-side display only.
pub const REFERENCE_ROW: DecadeMetrics = DecadeMetrics {
    fid: 66.98,
    kmmd: 0.40,
    dca0: 0.47,
    dca1: 0.78,
    dca2: 0.90,
    id_acc: 0.99,
};

impl DecadeMetrics {
    fn mean(rows: &[DecadeMetrics]) -> Option<DecadeMetrics> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&DecadeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(DecadeMetrics {
            fid: avg(|r| r.fid),
            kmmd: avg(|r| r.kmmd),
            dca0: avg(|r| r.dca0),
            dca1: avg(|r| r.dca1),
            dca2: avg(|r| r.dca2),
            id_acc: avg(|r| r.id_acc),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_decade: BTreeMap<Decade, DecadeMetrics>,
    /// Arithmetic mean over the decades in `per_decade`.
    pub average: Option<DecadeMetrics>,
    /// Decades that were requested but could not be evaluated, with the reason.
    pub gaps: BTreeMap<Decade, String>,
    pub id_threshold: f64,
    /// Pairs without an embedding, per decade.
    pub id_absent: BTreeMap<Decade, usize>,
    pub items: usize,
}

impl MetricReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "decade", "FID", "KMMD", "DCA_0", "DCA_1", "DCA_2", "ID_acc"
        );
        let row = |s: &mut String, label: &str, m: &DecadeMetrics| {
            let _ = writeln!(
                s,
                "{label:<10} {:>9.2} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
                m.fid, m.kmmd, m.dca0, m.dca1, m.dca2, m.id_acc
            );
        };
        for (d, m) in &self.per_decade {
            row(&mut s, &d.to_string(), m);
        }
        if let Some(a) = &self.average {
            row(&mut s, "average", a);
        }
        row(&mut s, "reference", &REFERENCE_ROW);
        for (d, why) in &self.gaps {
            let _ = writeln!(s, "gap {d}: {why}");
        }
        let _ = writeln!(
            s,
            "ID_acc threshold {:.3} (cosine scale, not comparable to the reference row)",
            self.id_threshold
        );
        s
    }
}

/// One test input after projection and tuning.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub input: Image,
    pub inversion: InversionResult,
    pub offset: TmtOffset,
}

pub struct SuiteInputs<'a> {
    pub family: &'a GeneratorFamily,
    pub items: &'a [EvalItem],
    /// Held-out real images per target decade; the keys are the requested decades.
    pub real: &'a BTreeMap<Decade, Vec<Image>>,
    pub classifier: &'a DecadeClassifier,
    pub embedder: &'a dyn FaceEmbedder,
    pub features: &'a PerceptualNet,
    pub id_threshold: f64,
    pub bandwidth: Bandwidth,
}

fn features(net: &PerceptualNet, images: &[Image], decade: Decade, source: FeatureSource) -> Result<FeatureSet> {
    let cropped: Vec<Image> = images.iter().map(|i| i.center_crop(CROP_RATIO)).collect();
    FeatureSet::from_rows(&net.image_features(&cropped)?, Some(decade), source)
}

/// Transform every item into every requested decade and score the results.
pub fn evaluate_suite(inputs: &SuiteInputs) -> Result<MetricReport> {
    if inputs.items.is_empty() {
        return Err(Error::EmptyDataset("no evaluation items".into()));
    }
    let mut gaps = BTreeMap::new();
    let mut targets = Vec::new();
    for (d, real) in inputs.real {
        if inputs.family.child(*d).is_err() {
            gaps.insert(*d, "no generator for this decade".to_string());
        } else if real.len() < 2 {
            gaps.insert(*d, format!("{} real images, need at least 2", real.len()));
        } else {
            targets.push(*d);
        }
    }
    let mut outputs: BTreeMap<Decade, Vec<Image>> = BTreeMap::new();
    for item in inputs.items {
        let t = transform_across_decades(&item.inversion, &item.offset, inputs.family, &targets)?;
        for (d, img) in t {
            outputs.entry(d).or_default().push(img);
        }
    }
    let mut per_decade = BTreeMap::new();
    let mut id_absent = BTreeMap::new();
    for d in &targets {
        let gen = &outputs[d];
        let fake = features(inputs.features, gen, *d, FeatureSource::Generated)?;
        let real = features(inputs.features, &inputs.real[d], *d, FeatureSource::Real)?;
        let pred = inputs.classifier.predict(gen)?;
        let truth = vec![*d; gen.len()];
        let pairs: Vec<(Image, Image)> = inputs
            .items
            .iter()
            .zip(gen)
            .map(|(it, g)| (it.input.clone(), g.clone()))
            .collect();
        let id = compute_id_acc(&pairs, inputs.embedder, inputs.id_threshold)?;
        id_absent.insert(*d, id.absent);
        let m = DecadeMetrics {
            fid: compute_fid(&fake, &real)?,
            kmmd: compute_kmmd(&fake, &real, inputs.bandwidth)?,
            dca0: compute_dca(&pred, &truth, 0)?,
            dca1: compute_dca(&pred, &truth, 1)?,
            dca2: compute_dca(&pred, &truth, 2)?,
            id_acc: id.accuracy,
        };
        tracing::info!(decade = %d, fid = m.fid, dca0 = m.dca0, id_acc = m.id_acc, "decade evaluated");
        per_decade.insert(*d, m);
    }
    let rows: Vec<DecadeMetrics> = per_decade.values().copied().collect();
    Ok(MetricReport {
        average: DecadeMetrics::mean(&rows),
        per_decade,
        gaps,
        id_threshold: inputs.id_threshold,
        id_absent,
        items: inputs.items.len(),
    })
}
