use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use epochface_core::clustering::{cluster_faces, read_face_table, ClusterConfig};
use epochface_core::generator::checkpoint::{load_offset, save_offset};
use epochface_core::generator::{offset_diff, GeneratorSpec, ParameterVector};
use epochface_core::inversion::{project, transform_across_decades, tune_pivotal, InversionResult};
use epochface_core::metrics::{
    calibrate_threshold, evaluate_suite, Bandwidth, DecadeClassifier, EvalItem, SuiteInputs,
};
use epochface_core::perception::{
    cosine_similarity, segment_to_mask, ConvEmbedder, FaceClass, FaceEmbedder, PerceptualNet,
    Segmenter, UniformSegmenter, DEFAULT_PERCEPTUAL_SEED,
};
use epochface_core::pipeline::{emit_gallery, DatasetManifest, GalleryRow, RunDir, Split};
use epochface_core::toy::{oracle_for, ToyWorld};
use epochface_core::training::{
    load_family, save_family, train_family, train_parent, DecadeDataset,
};
use epochface_core::weightspace::{
    offset_direction_similarity, pca_embed_weights, WeightLabel, WeightPoint,
};
use epochface_core::{Decade, Error, Image};
use epochface_core::pipeline::{sha256_hex, sha256_path};
use serde::Serialize;

use crate::config::Config;

/// Stable digest of a command's effective inputs.
fn digest_of<T: Serialize>(command: &str, value: &T) -> String {
    let bytes = serde_json::to_vec(&(command, value)).expect("inputs serialize");
    sha256_hex(&bytes)
}

const EMBEDDER_FILE: &str = "embedder.safetensors";

fn json<T: Serialize>(v: &T) -> anyhow::Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(v)?)
}

fn png(img: &Image) -> anyhow::Result<Vec<u8>> {
    Ok(img.encode_png()?)
}

fn decades(years: &[u16]) -> anyhow::Result<Vec<Decade>> {
    Ok(years.iter().map(|y| Decade::new(*y)).collect::<Result<_, _>>()?)
}

/// True when a previous run with the same inputs is complete. A finished run with
/// other inputs is never overwritten.
fn already_done(out: &Path, command: &str, digest: &str) -> anyhow::Result<bool> {
    if RunDir::completed(out, command, digest).is_some() {
        tracing::info!(out = %out.display(), "inputs unchanged and artifacts verified; skipping");
        println!("{command}: up to date in {}", out.display());
        return Ok(true);
    }
    if out.join("run.json").exists() {
        return Err(Error::Artifact {
            path: out.to_path_buf(),
            detail: "holds a finished run with different inputs; choose a new --out".into(),
        }
        .into());
    }
    Ok(false)
}

/// Accepts either a family directory or a `train-family` output directory.
fn family_dir(p: &Path) -> PathBuf {
    if p.join("family.json").exists() {
        p.to_path_buf()
    } else {
        p.join("family")
    }
}

fn load_embedder(family: &Path, explicit: Option<&Path>) -> anyhow::Result<ConvEmbedder> {
    let candidates = [
        explicit.map(Path::to_path_buf),
        Some(family.join(EMBEDDER_FILE)),
        family.parent().map(|p| p.join(EMBEDDER_FILE)),
    ];
    for c in candidates.into_iter().flatten() {
        if c.exists() {
            return Ok(ConvEmbedder::load(&c)?);
        }
    }
    Err(Error::Backend(format!(
        "no identity embedder found next to {}; pass --embedder",
        family.display()
    ))
    .into())
}

fn train_images(cfg: &Config) -> anyhow::Result<BTreeMap<Decade, Vec<Image>>> {
    let mut out = BTreeMap::new();
    if let Some(m) = &cfg.data.manifest {
        let manifest = DatasetManifest::load(m)?;
        let root = m.parent().unwrap_or(Path::new("."));
        for r in manifest.records.iter().filter(|r| r.split == Split::Train) {
            let img = Image::load(&root.join(&r.path))?;
            out.entry(r.decade).or_insert_with(Vec::new).push(img);
        }
        return Ok(out);
    }
    let world = ToyWorld::new(cfg.data.resolution, cfg.data.world_seed)?;
    for d in decades(&cfg.data.decades)? {
        out.insert(d, world.dataset(d, 0..cfg.data.train_identities)?.images);
    }
    Ok(out)
}

pub fn train_family_cmd(cfg: &Config, out: &Path) -> anyhow::Result<()> {
    let digest = digest_of("train-family", cfg);
    if already_done(out, "train-family", &digest)? {
        return Ok(());
    }
    let images = train_images(cfg)?;
    let res = images
        .values()
        .flatten()
        .next()
        .ok_or_else(|| Error::EmptyDataset("no training images".into()))?
        .height();
    let spec = GeneratorSpec::toy(res);
    let mut run = RunDir::open(out, "train-family", &digest)?;

    let embedder = match &cfg.embedder.path {
        Some(p) => ConvEmbedder::load(p)?,
        None => {
            if cfg.data.manifest.is_some() {
                return Err(Error::Backend(
                    "a manifest corpus has no identity labels; set embedder.path".into(),
                )
                .into());
            }
            let world = ToyWorld::new(cfg.data.resolution, cfg.data.world_seed)?;
            let corpus = world.identity_corpus(0..cfg.embedder.identities, cfg.embedder.variants)?;
            println!("training identity embedder on {} images", corpus.len());
            ConvEmbedder::train(&corpus, &cfg.embedder.train)?
        }
    };
    embedder.save(&out.join(EMBEDDER_FILE))?;
    run.register("embedder", EMBEDDER_FILE)?;

    let pooled: Vec<Image> = images.values().flatten().cloned().collect();
    println!("training parent on {} images for {} iterations", pooled.len(), cfg.parent.iterations);
    let parent = train_parent(&spec, &pooled, &cfg.parent)?;
    run.write("log", "logs/parent.jsonl", parent.log.to_jsonl()?.as_bytes())?;
    parent.discriminator.save(&out.join("parent_disc.safetensors"))?;
    run.register("checkpoint", "parent_disc.safetensors")?;

    let mut datasets = BTreeMap::new();
    for (d, imgs) in images {
        datasets.insert(d, DecadeDataset::new(d, imgs)?);
    }
    println!("fine-tuning {} decades", datasets.len());
    let (family, report) = train_family(
        &spec,
        &parent.params,
        Some(&parent.discriminator),
        &datasets,
        &cfg.family,
        &embedder,
    )?;
    for (d, log) in &report.logs {
        run.write("log", &format!("logs/{}.jsonl", d.year()), log.to_jsonl()?.as_bytes())?;
    }
    save_family(&out.join("family"), &family)?;
    run.register("checkpoint", "family")?;
    let rec = run.finish()?;
    println!("train-family: {} ({} files) in {}", rec.run_id, rec.files.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct InvertInputs<'a> {
    cfg: &'a epochface_core::inversion::ProjectConfig,
    image: String,
    decade: Decade,
    spec: String,
}

pub fn invert_cmd(cfg: &Config, family: &Path, image: &Path, decade: u16, out: &Path) -> anyhow::Result<()> {
    let fam = load_family(&family_dir(family))?;
    let d = Decade::new(decade)?;
    let x = Image::load(image)?;
    let digest = digest_of(
        "invert",
        &InvertInputs {
            cfg: &cfg.project,
            image: x.content_hash(),
            decade: d,
            spec: fam.spec_hash(),
        },
    );
    if already_done(out, "invert", &digest)? {
        return Ok(());
    }
    let net = PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED)?;
    let inv = project(&x, fam.child(d)?, &fam.spec, Some(d), &net, &cfg.project)?;
    let recon = epochface_core::generator::synthesize(&inv.code, fam.child(d)?, &fam.spec)?;
    let mut run = RunDir::open(out, "invert", &digest)?;
    run.write("inversion", "inversion.json", &json(&inv)?)?;
    run.write("image", "projection.png", &png(&recon)?)?;
    run.finish()?;
    println!(
        "invert: pixel mse {:.5} after {} steps",
        recon.mse(&x)?,
        inv.trace.len()
    );
    Ok(())
}

fn load_inversion(p: &Path) -> anyhow::Result<InversionResult> {
    let file = if p.is_dir() { p.join("inversion.json") } else { p.to_path_buf() };
    let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(serde_json::from_slice(&bytes).map_err(Error::from)?)
}

fn source_decade(inv: &InversionResult) -> anyhow::Result<Decade> {
    inv.source_decade
        .ok_or_else(|| Error::InvalidInput("inversion has no source decade".into()).into())
}

pub fn tune_cmd(
    cfg: &Config,
    family: &Path,
    image: &Path,
    inversion: &Path,
    embedder: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let fdir = family_dir(family);
    let fam = load_family(&fdir)?;
    let x = Image::load(image)?;
    let inv = load_inversion(inversion)?;
    let src = source_decade(&inv)?;
    let digest = digest_of("tune", &(&cfg.tune, x.content_hash(), &inv, fam.spec_hash()));
    if already_done(out, "tune", &digest)? {
        return Ok(());
    }
    let emb = load_embedder(&fdir, embedder)?;
    let net = PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED)?;
    // No segmentation backend ships for real photographs; the uniform map weights
    // every pixel as face.
    let seg = UniformSegmenter(FaceClass::Face);
    let mask = segment_to_mask(&x, &seg, cfg.tune.mask)?;
    let child = fam.child(src)?;
    let res = tune_pivotal(&x, &inv, child, &fam.spec, &mask, &emb, &net, &cfg.tune)?;
    let offset = offset_diff(&res.params, child, &fam.spec, Some(src))?;
    save_offset(&out.join("offset"), &offset, &fam.spec)?;
    let tuned = epochface_core::generator::synthesize(&inv.code, &res.params, &fam.spec)?;
    let mut run = RunDir::open(out, "tune", &digest)?;
    run.register("offset", "offset")?;
    run.write("image", "tuned.png", &png(&tuned)?)?;
    run.write("trace", "trace.json", &json(&res.trace)?)?;
    run.finish()?;
    println!(
        "tune: {} steps, early stop {}, pixel mse {:.5}",
        res.steps_run(),
        res.early_stopped,
        tuned.mse(&x)?
    );
    Ok(())
}

pub fn transform_cmd(
    family: &Path,
    inversion: &Path,
    offset: &Path,
    image: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let fam = load_family(&family_dir(family))?;
    let inv = load_inversion(inversion)?;
    let odir = if offset.join("manifest.json").exists() { offset.to_path_buf() } else { offset.join("offset") };
    let (_, off) = load_offset(&odir, Some(&fam.spec))?;
    let digest = digest_of("transform", &(&inv, sha256_path(&odir)?, fam.spec_hash()));
    if already_done(out, "transform", &digest)? {
        return Ok(());
    }
    let targets = fam.decades();
    let imgs = transform_across_decades(&inv, &off, &fam, &targets)?;
    let mut run = RunDir::open(out, "transform", &digest)?;
    if let Some(p) = image {
        run.write("image", "input.png", &png(&Image::load(p)?)?)?;
    }
    for (d, img) in &imgs {
        run.write("image", &format!("{}.png", d.year()), &png(img)?)?;
    }
    run.finish()?;
    println!("transform: wrote {} decades to {}", imgs.len(), out.display());
    Ok(())
}

fn calibrate_on_toy(world: &ToyWorld, emb: &dyn FaceEmbedder, ids: std::ops::Range<usize>, years: &[Decade]) -> anyhow::Result<f64> {
    let mut per_id = Vec::new();
    for id in ids {
        let mut v = Vec::new();
        for (k, d) in years.iter().enumerate() {
            if let Some(e) = emb.embed_face(&world.render(id, *d, 100 + k as u64)?.image)? {
                v.push(e);
            }
        }
        per_id.push(v);
    }
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for i in 0..per_id.len() {
        for a in 0..per_id[i].len() {
            for b in a + 1..per_id[i].len() {
                same.push(cosine_similarity(&per_id[i][a], &per_id[i][b])?);
            }
            if i + 1 < per_id.len() && !per_id[i + 1].is_empty() {
                diff.push(cosine_similarity(&per_id[i][a], &per_id[i + 1][0])?);
            }
        }
    }
    Ok(calibrate_threshold(&same, &diff)?)
}

pub fn evaluate_cmd(cfg: &Config, family: &Path, embedder: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    if cfg.data.manifest.is_some() {
        return Err(Error::InvalidInput(
            "evaluate needs ground-truth masks and runs on the synthetic corpus only".into(),
        )
        .into());
    }
    let fdir = family_dir(family);
    let fam = load_family(&fdir)?;
    let digest = digest_of("evaluate", &(cfg, fam.spec_hash(), &fam.provenance));
    if already_done(out, "evaluate", &digest)? {
        return Ok(());
    }
    let emb = load_embedder(&fdir, embedder)?;
    let world = ToyWorld::new(cfg.data.resolution, cfg.data.world_seed)?;
    let requested = decades(&cfg.data.decades)?;
    let available: Vec<Decade> = requested.iter().copied().filter(|d| fam.child(*d).is_ok()).collect();
    let test_ids = cfg.data.train_identities..cfg.data.train_identities + cfg.data.test_identities;

    let mut train = Vec::new();
    for d in &available {
        for s in world.samples(*d, 0..cfg.data.train_identities)? {
            train.push((s.image, *d));
        }
    }
    let classifier = DecadeClassifier::train(&train, &cfg.evaluate.classifier)?;
    let id_threshold = match cfg.evaluate.id_threshold {
        Some(t) => t,
        None => calibrate_on_toy(&world, &emb, 0..cfg.data.train_identities.min(60), &available)?,
    };

    let net = PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED)?;
    let mut items = Vec::new();
    for src in &available {
        let samples = world.samples(*src, test_ids.clone())?;
        let seg = oracle_for(samples.iter());
        let child = fam.child(*src)?;
        for s in &samples {
            let inv = project(&s.image, child, &fam.spec, Some(*src), &net, &cfg.project)?;
            let mask = segment_to_mask(&s.image, &seg as &dyn Segmenter, cfg.tune.mask)?;
            let res = tune_pivotal(&s.image, &inv, child, &fam.spec, &mask, &emb, &net, &cfg.tune)?;
            let offset = offset_diff(&res.params, child, &fam.spec, Some(*src))?;
            items.push(EvalItem { input: s.image.clone(), inversion: inv, offset });
        }
        println!("evaluate: tuned {} inputs from {src}", samples.len());
    }
    let mut real = BTreeMap::new();
    for d in &requested {
        let imgs: Vec<Image> = world.samples(*d, test_ids.clone())?.into_iter().map(|s| s.image).collect();
        real.insert(*d, imgs);
    }
    let report = evaluate_suite(&SuiteInputs {
        family: &fam,
        items: &items,
        real: &real,
        classifier: &classifier,
        embedder: &emb,
        features: &net,
        id_threshold,
        bandwidth: cfg.evaluate.kmmd_bandwidth.map_or(Bandwidth::Median, Bandwidth::Fixed),
    })?;
    let mut run = RunDir::open(out, "evaluate", &digest)?;
    run.write("report", "report.json", &json(&report)?)?;
    run.write("report", "report.txt", report.table().as_bytes())?;
    run.finish()?;
    print!("{}", report.table());
    Ok(())
}

pub fn cluster_cmd(
    cfg: &Config,
    faces: &Path,
    references: Option<&Path>,
    epsilon: Option<f64>,
    alpha: Option<f64>,
    out: &Path,
) -> anyhow::Result<()> {
    let ccfg = ClusterConfig {
        epsilon: epsilon.unwrap_or(cfg.cluster.epsilon),
        alpha: alpha.unwrap_or(cfg.cluster.alpha),
        max_nodes: cfg.cluster.max_nodes,
    };
    let table = std::fs::read(faces).with_context(|| format!("reading {}", faces.display()))?;
    let refs_hash = match references {
        Some(r) => sha256_path(r)?,
        None => String::new(),
    };
    let digest = digest_of("cluster", &(&ccfg, sha256_hex(&table), refs_hash));
    if already_done(out, "cluster", &digest)? {
        return Ok(());
    }
    let nodes = read_face_table(faces)?;
    let refs = match references {
        Some(r) => read_face_table(r)?,
        None => Vec::new(),
    };
    let n = nodes.len();
    let (result, audit) = cluster_faces(nodes, &refs, &ccfg)?;
    let mut run = RunDir::open(out, "cluster", &digest)?;
    run.write("report", "clusters.json", &json(&result)?)?;
    run.write("report", "audit.json", &json(&audit)?)?;
    run.finish()?;
    println!(
        "cluster: {n} faces into {} clusters, {} outliers removed, assigned {:?}",
        result.clusters.len(),
        result.removed_outliers.len(),
        result.assigned
    );
    Ok(())
}

pub fn viz_cmd(family: &Path, offsets: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let fam = load_family(&family_dir(family))?;
    let mut hashes = Vec::new();
    for o in offsets {
        hashes.push(sha256_path(o)?);
    }
    let digest = digest_of("viz", &(fam.spec_hash(), &fam.provenance, hashes));
    if already_done(out, "viz", &digest)? {
        return Ok(());
    }
    let mut points = vec![WeightPoint::from_params(WeightLabel::Parent, &fam.parent, &fam.spec)?];
    for (d, p) in &fam.children {
        points.push(WeightPoint::from_params(WeightLabel::Decade(*d), p, &fam.spec)?);
    }
    let mut sims = Vec::new();
    for (i, o) in offsets.iter().enumerate() {
        let odir = if o.join("manifest.json").exists() { o.clone() } else { o.join("offset") };
        let (_, off) = load_offset(&odir, Some(&fam.spec))?;
        let base = off
            .base_decade()
            .ok_or_else(|| Error::InvalidInput(format!("{} has no base decade", odir.display())))?;
        let tuned: ParameterVector =
            epochface_core::generator::offset_apply(fam.child(base)?, &off, &fam.spec)?;
        points.push(WeightPoint::from_params(
            WeightLabel::Tuned { decade: base, image_id: format!("offset{i}") },
            &tuned,
            &fam.spec,
        )?);
        sims.push(offset_direction_similarity(&off, &fam)?);
    }
    let pca = pca_embed_weights(&points)?;
    let mut run = RunDir::open(out, "viz", &digest)?;
    run.write("report", "pca.json", &json(&pca)?)?;
    run.write("report", "similarity.json", &json(&sims)?)?;
    run.finish()?;
    for (l, c) in pca.labels.iter().zip(&pca.coords) {
        println!("{l:?}\t{:.4}\t{:.4}", c[0], c[1]);
    }
    Ok(())
}

pub fn gallery_cmd(rows: &[PathBuf], report: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let mut decade_set = std::collections::BTreeSet::new();
    let mut gallery_rows = Vec::new();
    for dir in rows {
        let mut outputs = Vec::new();
        for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let p = e?.path();
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if p.extension().is_some_and(|x| x == "png") {
                if let Ok(d) = stem.parse::<Decade>() {
                    decade_set.insert(d);
                    outputs.push((d, p.clone()));
                }
            }
        }
        gallery_rows.push(GalleryRow {
            label: dir.display().to_string(),
            input: dir.join("input.png"),
            outputs,
        });
    }
    let footer = match report {
        Some(p) => {
            let file = if p.is_dir() { p.join("report.txt") } else { p.to_path_buf() };
            std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?
        }
        None => String::new(),
    };
    let decades: Vec<Decade> = decade_set.into_iter().collect();
    let g = emit_gallery(&gallery_rows, &decades, &footer);
    let digest = sha256_hex(g.html.as_bytes());
    let mut run = RunDir::open(out, "gallery", &digest)?;
    run.write("gallery", "gallery.html", g.html.as_bytes())?;
    run.finish()?;
    println!(
        "gallery: {} rows x {} columns, {} warnings",
        g.rows,
        g.columns,
        g.warnings.len()
    );
    Ok(())
}
