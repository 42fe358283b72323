use std::path::Path;
use std::process::{Command, Output};

fn epochface(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epochface"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EPOCHFACE_ARTIFACT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{stdout}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

const TINY: &str = r#"
[data]
resolution = 8
train_identities = 12
test_identities = 2
decades = [1900, 1910]

[parent]
iterations = 3
batch_size = 4

[family]
iterations = 2
batch_size = 4

[embedder]
identities = 6
variants = 1
[embedder.train]
iterations = 3
batch = 8

[project]
steps = 3
mean_w_samples = 64

[tune]
max_steps = 2

[evaluate]
id_threshold = 0.5
[evaluate.classifier]
iterations = 3
batch = 8
"#;

#[test]
fn parse_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = epochface(&["no-such-command"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = epochface(&["cluster"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&epochface(&["--help"], dir.path()));
    for c in ["train-family", "invert", "tune", "transform", "evaluate", "cluster", "viz", "gallery"] {
        assert!(text.contains(c), "{c} missing from help");
    }
}

#[test]
fn missing_input_and_bad_config_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = epochface(&["cluster", "--faces", "absent.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "[cluster]\nepsilon = \"wide\"\n").unwrap();
    let out = epochface(&["cluster", "--faces", "absent.csv", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cluster_writes_assignments_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "face_id,image_id,e0,e1\n\
               a1,img1,1.0,0.0\n\
               a2,img2,0.99,0.1\n\
               a3,img3,0.98,0.15\n\
               b1,img1,0.0,1.0\n\
               b2,img2,0.1,0.99\n";
    std::fs::write(dir.path().join("faces.csv"), csv).unwrap();
    std::fs::write(dir.path().join("refs.csv"), "face_id,image_id,e0,e1\na2,img2,0.99,0.1\n").unwrap();
    let out = ok(&epochface(
        &["cluster", "--faces", "faces.csv", "--references", "refs.csv", "--epsilon", "0.5", "--out", "c"],
        dir.path(),
    ));
    assert!(out.contains("2 clusters"), "{out}");
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("c/clusters.json")).unwrap()).unwrap();
    let assigned = v["assigned"].as_u64().unwrap() as usize;
    assert_eq!(v["clusters"][assigned]["faces"], serde_json::json!(["a1", "a2", "a3"]));
    assert!(dir.path().join("c/audit.json").exists());
    assert!(dir.path().join("c/run.json").exists());

    // Same inputs resume; different inputs into the same directory are refused.
    let again = ok(&epochface(
        &["cluster", "--faces", "faces.csv", "--references", "refs.csv", "--epsilon", "0.5", "--out", "c"],
        dir.path(),
    ));
    assert!(again.contains("up to date"));
    let other = epochface(&["cluster", "--faces", "faces.csv", "--epsilon", "0.4", "--out", "c"], dir.path());
    assert_eq!(other.status.code(), Some(1));
}

#[test]
fn artifact_root_prefixes_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("faces.csv"), "face_id,image_id,e0\nx,img,1.0\n").unwrap();
    let root = dir.path().join("store");
    let out = Command::new(env!("CARGO_BIN_EXE_epochface"))
        .args(["cluster", "--faces", "faces.csv", "--out", "run1"])
        .current_dir(dir.path())
        .env("EPOCHFACE_ARTIFACT_ROOT", &root)
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join("run1/clusters.json").exists());
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("tiny.toml"), TINY).unwrap();
    let cfg = ["--config", "tiny.toml", "--seed", "3"];
    let run = |extra: &[&str]| {
        let mut a: Vec<&str> = extra.to_vec();
        a.extend_from_slice(&cfg);
        ok(&epochface(&a, p))
    };

    run(&["train-family", "--out", "fam"]);
    assert!(p.join("fam/family/family.json").exists());
    assert!(p.join("fam/embedder.safetensors").exists());
    assert!(p.join("fam/logs/1900.jsonl").exists());
    assert!(run(&["train-family", "--out", "fam"]).contains("up to date"));

    let world = epochface_core::toy::ToyWorld::new(8, 1).unwrap();
    let x = world.render(40, epochface_core::Decade::new(1900).unwrap(), 0).unwrap().image;
    x.save_png(&p.join("x.png")).unwrap();

    run(&["invert", "--family", "fam", "--image", "x.png", "--decade", "1900", "--out", "inv"]);
    assert!(p.join("inv/inversion.json").exists());
    run(&["tune", "--family", "fam", "--image", "x.png", "--inversion", "inv", "--out", "tun"]);
    assert!(p.join("tun/offset/manifest.json").exists());
    run(&[
        "transform", "--family", "fam", "--inversion", "inv", "--offset", "tun", "--image", "x.png", "--out", "tr",
    ]);
    for f in ["input.png", "1900.png", "1910.png"] {
        assert!(p.join("tr").join(f).exists(), "{f}");
    }
    let viz = run(&["viz", "--family", "fam", "--offset", "tun", "--out", "viz"]);
    assert_eq!(viz.lines().count(), 4, "{viz}");
    let eval = run(&["evaluate", "--family", "fam", "--out", "ev"]);
    assert!(eval.contains("FID"), "{eval}");
    run(&["gallery", "--row", "tr", "--report", "ev", "--out", "gal"]);
    let html = std::fs::read_to_string(p.join("gal/gallery.html")).unwrap();
    assert_eq!(html.matches("<img").count(), 3);
    assert!(epochface_core::pipeline::external_references(&html).is_empty());

    let bad = epochface(&["invert", "--family", "fam", "--image", "x.png", "--decade", "1990", "--out", "bad"], p);
    assert_eq!(bad.status.code(), Some(1));
}
